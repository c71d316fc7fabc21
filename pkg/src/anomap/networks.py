"""Generator and critic architectures for additive-map healthy translation.

The generator is an encoder / residual-bottleneck / decoder net that emits an
additive change map A(x); the healthy-looking translation is tanh(x + A(x)).
The critic is a fully convolutional patch scorer with no normalization layers
(a requirement for the input-gradient penalty to be well posed).
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

WEIGHTS_FORMAT_VERSION = 1

# Largest float32 strictly below 1; keeps composed outputs in the open
# interval (-1, 1) even where tanh saturates to 1.0 in float32.
_OPEN_ONE = float(np.nextafter(np.float32(1.0), np.float32(0.0)))

TRANSLATION_MODES = ("additive", "direct")


class ResidualBlock(nn.Module):
    """Conv + instance norm + ReLU with an identity skip, constant width."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size=3, stride=1, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class Generator(nn.Module):
    """Emits a 1-channel additive map with the same spatial size as the input.

    Layout: 3 encoder convs (widths c, 2c, 4c; kernels 7-4-4; strides 1-2-2),
    `n_res_blocks` residual blocks at 4c, then 2 transposed convs back up and
    a final kernel-7 transposed conv to 1 channel with no activation.
    """

    def __init__(self, base_channels: int = 64, n_res_blocks: int = 6):
        super().__init__()
        if base_channels < 1 or n_res_blocks < 1:
            raise ValueError("base_channels and n_res_blocks must be >= 1")
        self.base_channels = base_channels
        self.n_res_blocks = n_res_blocks
        c1, c2, c3 = base_channels, base_channels * 2, base_channels * 4
        self.encoder = nn.Sequential(
            nn.Conv2d(1, c1, kernel_size=7, stride=1, padding=3),
            nn.InstanceNorm2d(c1, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c1, c2, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(c2, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(c2, c3, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(c3, affine=True),
            nn.ReLU(inplace=True),
        )
        self.bottleneck = nn.Sequential(*[ResidualBlock(c3) for _ in range(n_res_blocks)])
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(c3, c2, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(c2, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c2, c1, kernel_size=4, stride=2, padding=1),
            nn.InstanceNorm2d(c1, affine=True),
            nn.ReLU(inplace=True),
            nn.ConvTranspose2d(c1, 1, kernel_size=7, stride=1, padding=3),
        )

    def config(self) -> dict:
        return {"base_channels": self.base_channels, "n_res_blocks": self.n_res_blocks}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_batch(x, divisor=4)
        return self.decoder(self.bottleneck(self.encoder(x)))


class Discriminator(nn.Module):
    """Patch critic: `n_stages` stride-2 convs doubling width, then a 1-channel
    kernel-3 head. Input side s yields a patch map of side s / 2**n_stages.
    No normalization anywhere."""

    def __init__(self, base_channels: int = 64, n_stages: int = 6):
        super().__init__()
        if base_channels < 1 or n_stages < 1:
            raise ValueError("base_channels and n_stages must be >= 1")
        self.base_channels = base_channels
        self.n_stages = n_stages
        widths = [base_channels * 2**i for i in range(n_stages)]
        layers: list[nn.Module] = [
            nn.Conv2d(1, widths[0], kernel_size=4, stride=2, padding=1),
            nn.LeakyReLU(0.01),
        ]
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers.append(nn.Conv2d(w_in, w_out, kernel_size=4, stride=2, padding=1))
            layers.append(nn.LeakyReLU(0.01))
        self.stages = nn.Sequential(*layers)
        self.head = nn.Conv2d(widths[-1], 1, kernel_size=3, stride=1, padding=1)

    def config(self) -> dict:
        return {"base_channels": self.base_channels, "n_stages": self.n_stages}

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_batch(x, divisor=2**self.n_stages)
        return self.head(self.stages(x))


def _check_batch(x: torch.Tensor, divisor: int) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ValueError(f"expected a (batch, 1, h, w) tensor, got shape {tuple(x.shape)}")
    if x.shape[2] % divisor or x.shape[3] % divisor:
        raise ValueError(f"spatial size {tuple(x.shape[2:])} not divisible by {divisor}")


def compose_healthy(x: torch.Tensor, additive_map: torch.Tensor) -> torch.Tensor:
    """tanh(x + A), clamped to the open interval (-1, 1).

    The clamp matters: float32 tanh saturates to exactly 1.0 for large
    arguments, which would break the strict range contract downstream.
    """
    if x.shape != additive_map.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(additive_map.shape)}")
    return torch.clamp(torch.tanh(x + additive_map), -_OPEN_ONE, _OPEN_ONE)


def compose_translation(x: torch.Tensor, generator_output: torch.Tensor, mode: str) -> torch.Tensor:
    """Healthy translation under either composition mode.

    "additive" composes tanh(x + G(x)); "direct" is the ablation that emits
    the image directly as tanh(G(x)) with identical parameter shapes.
    """
    if mode == "additive":
        return compose_healthy(x, generator_output)
    if mode == "direct":
        if x.shape != generator_output.shape:
            raise ValueError(
                f"shape mismatch: {tuple(x.shape)} vs {tuple(generator_output.shape)}"
            )
        return torch.clamp(torch.tanh(generator_output), -_OPEN_ONE, _OPEN_ONE)
    raise ValueError(f"unknown translation mode {mode!r}; expected one of {TRANSLATION_MODES}")


def _init_fan_in(m: nn.Conv2d | nn.ConvTranspose2d) -> int:
    """Incoming connections per output pixel; transposed convs spread each
    input over stride^2 output positions, shrinking the effective fan."""
    taps = m.kernel_size[0] * m.kernel_size[1]
    if isinstance(m, nn.ConvTranspose2d):
        taps //= m.stride[0] * m.stride[1]
    return max(m.in_channels * taps, 1)


def init_weights(module: nn.Module, generator: torch.Generator, std: float | None = None) -> None:
    """Normal conv weights (fan-in-scaled std unless given), zero biases,
    identity instance norms.

    The scaling matters at narrow desk-scale widths: a fixed small std makes
    each layer shrink activations by ~sqrt(fan_in)*std, and a few-channel
    critic then collapses to a constant function at init (zero input
    gradients, so the gradient penalty pins at 1 and training stalls).
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                s = (2.0 / _init_fan_in(m)) ** 0.5 if std is None else std
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * s)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d) and m.affine:
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def save_model_pair(path, generator: Generator, discriminator: Discriminator | None) -> None:
    """Flat named-tensor container: generator.<name> / discriminator.<name>."""
    tensors = {f"generator.{k}": v for k, v in generator.state_dict().items()}
    payload = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "generator_config": generator.config(),
        "tensors": tensors,
    }
    if discriminator is not None:
        tensors.update({f"discriminator.{k}": v for k, v in discriminator.state_dict().items()})
        payload["discriminator_config"] = discriminator.config()
    torch.save(payload, path)


def load_model_pair(path) -> tuple[Generator, Discriminator | None]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != WEIGHTS_FORMAT_VERSION:
        raise ValueError(f"unsupported weights format version {version!r}")
    tensors = payload["tensors"]
    generator = Generator(**payload["generator_config"])
    generator.load_state_dict(
        {k.removeprefix("generator."): v for k, v in tensors.items() if k.startswith("generator.")}
    )
    discriminator = None
    if "discriminator_config" in payload:
        discriminator = Discriminator(**payload["discriminator_config"])
        discriminator.load_state_dict(
            {
                k.removeprefix("discriminator."): v
                for k, v in tensors.items()
                if k.startswith("discriminator.")
            }
        )
    return generator, discriminator
