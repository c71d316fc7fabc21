"""Adversarial training: critic/generator losses, gradient penalty, schedule.

One training iteration = `d_steps_per_g_step` critic updates followed by one
generator update. The critic maximizes the patch-score margin between real
healthy slices and composed translations of mixed-set slices, regularized by
an input-gradient penalty; the generator minimizes the negated critic score
plus an L1 identity term on healthy inputs.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ._validation import check_positive
from .data import SliceStream
from .networks import (
    TRANSLATION_MODES,
    Discriminator,
    Generator,
    compose_translation,
    init_weights,
    load_model_pair,
    save_model_pair,
)

CONFIG_NAME = "config.json"
LOG_NAME = "log.csv"
WEIGHTS_NAME = "weights.pt"
TRAINER_STATE_NAME = "trainer_state.pt"
FAILURE_NAME = "failure.json"
_CKPT_DIR_RE = re.compile(r"iter_(\d+)$")
_LOG_FIELDS = ("iteration", "d_adv", "d_gp", "g_adv", "g_id")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; training aborts loudly."""


@dataclass(frozen=True)
class TrainingConfig:
    lambda_id: float = 1.0
    lambda_gp: float = 10.0
    batch_size: int = 16
    total_iterations: int = 400_000
    checkpoint_interval: int = 10_000
    d_steps_per_g_step: int = 2
    learning_rate: float = 1e-4
    # None: decay over the final quarter (100k of the 400k reference schedule,
    # scaled proportionally).
    decay_start_iteration: int | None = None
    optimizer_beta1: float = 0.5
    optimizer_beta2: float = 0.999
    translation_mode: str = "additive"
    seed: int = 0
    generator_base_channels: int = 64
    discriminator_base_channels: int = 64
    n_res_blocks: int = 6
    discriminator_stages: int = 6

    def validate(self) -> None:
        for name in ("batch_size", "total_iterations", "checkpoint_interval"):
            check_positive(getattr(self, name), name)
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")
        if self.lambda_id < 0 or self.lambda_gp < 0:
            raise ValueError("loss weights must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.translation_mode not in TRANSLATION_MODES:
            raise ValueError(f"translation_mode must be one of {TRANSLATION_MODES}")
        if self.decay_start_iteration is not None and not (
            0 <= self.decay_start_iteration <= self.total_iterations
        ):
            raise ValueError("decay_start_iteration must lie within the run")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")

    @property
    def resolved_decay_start(self) -> int:
        if self.decay_start_iteration is not None:
            return self.decay_start_iteration
        return (self.total_iterations * 3) // 4


@dataclass(frozen=True)
class LossReport:
    iteration: int
    d_adv: float
    d_gp: float
    g_adv: float
    g_id: float

    def is_finite(self) -> bool:
        return all(map(math.isfinite, (self.d_adv, self.d_gp, self.g_adv, self.g_id)))


@dataclass
class DiscriminatorLossParts:
    total: torch.Tensor
    adversarial: torch.Tensor
    penalty: torch.Tensor


@dataclass
class GeneratorLossParts:
    total: torch.Tensor
    adversarial: torch.Tensor
    identity: torch.Tensor


def learning_rate_at(cfg: TrainingConfig, iteration: int) -> float:
    """Constant until decay start, then linear to 0 at the final iteration."""
    start = cfg.resolved_decay_start
    if iteration <= start:
        return cfg.learning_rate
    window = cfg.total_iterations - start
    return cfg.learning_rate * (cfg.total_iterations - iteration) / window


def gradient_penalty(
    critic, x_real: torch.Tensor, x_fake: torch.Tensor, rng: torch.Generator
) -> torch.Tensor:
    """Mean squared deviation of the critic's input-gradient norm from 1.

    One uniform mixing weight per sample; patch outputs are summed to a
    scalar per sample before differentiation, and the gradient norm is taken
    over all of that sample's pixels.
    """
    if x_real.shape != x_fake.shape:
        raise ValueError(f"shape mismatch: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}")
    n = x_real.shape[0]
    eps = torch.rand((n,) + (1,) * (x_real.ndim - 1), generator=rng, dtype=x_real.dtype)
    x_hat = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
    scores = critic(x_hat)
    if scores.requires_grad:
        grads = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)[0]
    else:
        # critic output ignores the input entirely: gradient is identically
        # zero and the penalty degenerates to (0 - 1)^2
        grads = torch.zeros_like(x_hat)
    norms = grads.reshape(n, -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def discriminator_loss(
    critic,
    generator,
    x_m: torch.Tensor,
    x_h: torch.Tensor,
    cfg: TrainingConfig,
    rng: torch.Generator,
) -> DiscriminatorLossParts:
    """Critic loss: mean D(fake) - mean D(real) + lambda_gp * penalty.

    The generator is held constant; no gradient flows into it.
    """
    if x_m.shape[0] != x_h.shape[0]:
        raise ValueError(f"batch size mismatch: {x_m.shape[0]} vs {x_h.shape[0]}")
    with torch.no_grad():
        fake = compose_translation(x_m, generator(x_m), cfg.translation_mode)
    adversarial = critic(fake).mean() - critic(x_h).mean()
    penalty = gradient_penalty(critic, x_h, fake, rng)
    return DiscriminatorLossParts(
        total=adversarial + cfg.lambda_gp * penalty, adversarial=adversarial, penalty=penalty
    )


def generator_loss(
    critic, generator, x_m: torch.Tensor, x_h: torch.Tensor, cfg: TrainingConfig
) -> GeneratorLossParts:
    """Generator loss: -mean D(fake) + lambda_id * L1 identity on healthy input.

    The critic's parameters are held constant (gradients flow through it to
    the generator only).
    """
    fake = compose_translation(x_m, generator(x_m), cfg.translation_mode)
    adversarial = -critic(fake).mean()
    reconstructed = compose_translation(x_h, generator(x_h), cfg.translation_mode)
    identity = (reconstructed - x_h).abs().mean()
    return GeneratorLossParts(
        total=adversarial + cfg.lambda_id * identity, adversarial=adversarial, identity=identity
    )


class AdversarialTrainer:
    """Owns the nets, optimizers, and update schedule; fully serializable."""

    def __init__(self, cfg: TrainingConfig, h_stream: SliceStream, m_stream: SliceStream):
        cfg.validate()
        self.cfg = cfg
        self.h_stream = h_stream
        self.m_stream = m_stream
        self.torch_rng = torch.Generator().manual_seed(cfg.seed)
        self.generator = Generator(cfg.generator_base_channels, cfg.n_res_blocks)
        self.discriminator = Discriminator(cfg.discriminator_base_channels, cfg.discriminator_stages)
        init_weights(self.generator, self.torch_rng)
        init_weights(self.discriminator, self.torch_rng)
        betas = (cfg.optimizer_beta1, cfg.optimizer_beta2)
        self.g_opt = torch.optim.Adam(self.generator.parameters(), lr=cfg.learning_rate, betas=betas)
        self.d_opt = torch.optim.Adam(
            self.discriminator.parameters(), lr=cfg.learning_rate, betas=betas
        )
        self.iteration = 0

    def step(self) -> LossReport:
        """One full iteration: critic updates, then one generator update."""
        cfg = self.cfg
        iteration = self.iteration + 1
        lr = learning_rate_at(cfg, iteration)
        for group in self.g_opt.param_groups:
            group["lr"] = lr
        for group in self.d_opt.param_groups:
            group["lr"] = lr

        for _ in range(cfg.d_steps_per_g_step):
            x_m = self.m_stream.next_batch(cfg.batch_size).pixels
            x_h = self.h_stream.next_batch(cfg.batch_size).pixels
            d_parts = discriminator_loss(
                self.discriminator, self.generator, x_m, x_h, cfg, self.torch_rng
            )
            self.d_opt.zero_grad(set_to_none=True)
            d_parts.total.backward()
            self.d_opt.step()

        x_m = self.m_stream.next_batch(cfg.batch_size).pixels
        x_h = self.h_stream.next_batch(cfg.batch_size).pixels
        g_parts = generator_loss(self.discriminator, self.generator, x_m, x_h, cfg)
        self.g_opt.zero_grad(set_to_none=True)
        self.d_opt.zero_grad(set_to_none=True)
        g_parts.total.backward()
        self.g_opt.step()

        self.iteration = iteration
        report = LossReport(
            iteration=iteration,
            d_adv=d_parts.adversarial.item(),
            d_gp=d_parts.penalty.item(),
            g_adv=g_parts.adversarial.item(),
            g_id=g_parts.identity.item(),
        )
        if not report.is_finite():
            raise TrainingDiverged(f"non-finite loss at iteration {iteration}: {report}")
        return report

    def save_checkpoint(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_model_pair(directory / WEIGHTS_NAME, self.generator, self.discriminator)
        torch.save(
            {
                "iteration": self.iteration,
                "torch_rng": self.torch_rng.get_state(),
                "g_opt": self.g_opt.state_dict(),
                "d_opt": self.d_opt.state_dict(),
                "h_stream": self.h_stream.state_dict(),
                "m_stream": self.m_stream.state_dict(),
            },
            directory / TRAINER_STATE_NAME,
        )
        return directory

    def load_checkpoint(self, directory: str | Path) -> None:
        directory = Path(directory)
        generator, discriminator = load_model_pair(directory / WEIGHTS_NAME)
        self.generator.load_state_dict(generator.state_dict())
        if discriminator is None:
            raise ValueError(f"{directory} lacks critic weights; cannot resume")
        self.discriminator.load_state_dict(discriminator.state_dict())
        state = torch.load(directory / TRAINER_STATE_NAME, weights_only=True)
        self.iteration = int(state["iteration"])
        self.torch_rng.set_state(state["torch_rng"])
        self.g_opt.load_state_dict(state["g_opt"])
        self.d_opt.load_state_dict(state["d_opt"])
        self.h_stream.load_state_dict(state["h_stream"])
        self.m_stream.load_state_dict(state["m_stream"])


def checkpoint_dir(run_dir: str | Path, iteration: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"iter_{iteration}"


def list_checkpoints(run_dir: str | Path) -> list[tuple[int, Path]]:
    """(iteration, directory) pairs sorted by iteration."""
    root = Path(run_dir) / "checkpoints"
    if not root.is_dir():
        return []
    found = []
    for p in root.iterdir():
        m = _CKPT_DIR_RE.match(p.name)
        if m and p.is_dir() and (p / WEIGHTS_NAME).exists():
            found.append((int(m.group(1)), p))
    return sorted(found)


def make_streams(
    h_slices: np.ndarray, m_slices: np.ndarray, seed: int
) -> tuple[SliceStream, SliceStream]:
    """Training streams with set-disjoint provenance and derived sub-seeds."""
    return (
        SliceStream(h_slices, "H", seed=[seed, 11]),
        SliceStream(m_slices, "M", seed=[seed, 13]),
    )


def run_training(
    cfg: TrainingConfig,
    h_slices: np.ndarray,
    m_slices: np.ndarray,
    run_dir: str | Path,
    resume: bool = False,
) -> Path:
    """Drive a full (or resumed) run with periodic checkpoints and a loss log.

    Layout: <run_dir>/config.json, <run_dir>/log.csv with one row per
    iteration, <run_dir>/checkpoints/iter_<N>/ at every interval and at
    termination. A resumed run restarts from the latest checkpoint and
    reproduces the uninterrupted run exactly (single-threaded loading).
    """
    cfg.validate()
    torch.set_num_threads(1)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    trainer = AdversarialTrainer(cfg, *make_streams(h_slices, m_slices, cfg.seed))

    start = 0
    existing = list_checkpoints(run_dir) if resume else []
    if existing:
        latest_iter, latest_dir = existing[-1]
        trainer.load_checkpoint(latest_dir)
        start = latest_iter
        _truncate_log(run_dir / LOG_NAME, start)
    else:
        with open(run_dir / CONFIG_NAME, "w") as fh:
            json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        with open(run_dir / LOG_NAME, "w", newline="") as fh:
            csv.writer(fh).writerow(_LOG_FIELDS)

    with open(run_dir / LOG_NAME, "a", newline="") as log_fh:
        writer = csv.writer(log_fh)
        for iteration in range(start + 1, cfg.total_iterations + 1):
            try:
                report = trainer.step()
            except TrainingDiverged as exc:
                with open(run_dir / FAILURE_NAME, "w") as fh:
                    json.dump({"iteration": iteration, "error": str(exc)}, fh, indent=2)
                raise
            writer.writerow(
                [report.iteration, report.d_adv, report.d_gp, report.g_adv, report.g_id]
            )
            if iteration % cfg.checkpoint_interval == 0 or iteration == cfg.total_iterations:
                trainer.save_checkpoint(checkpoint_dir(run_dir, iteration))
    return run_dir


def _truncate_log(path: Path, max_iteration: int) -> None:
    if not path.exists():
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(_LOG_FIELDS)
        return
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= max_iteration]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(kept)
