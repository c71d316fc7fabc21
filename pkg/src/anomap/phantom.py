"""Synthetic registered slice phantoms with injectable lesions.

All subjects share one anatomy template (a stack of concentric smooth
structures whose extent varies along the slice axis), so the data behave like
registered scans: only per-subject texture noise and, for diseased subjects,
a lesion distinguish one subject from another. Ground truth is recorded in a
manifest that training code must never read.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._validation import check_in_range, check_positive

MANIFEST_NAME = "manifest.csv"
DATASET_META_NAME = "dataset.json"
SPLIT_NAMES = ("H", "M", "holdout")


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters controlling phantom geometry, noise, and lesions."""

    image_size: int = 64
    slices_per_subject: int = 8
    n_healthy: int = 20
    n_diseased: int = 10
    lesion_intensity_delta: float = 0.3
    lesion_radius_frac: float = 0.11
    texture_noise_sigma: float = 0.045
    lesion_sign: int = -1  # -1 darkens tissue (atrophy-like), +1 brightens
    seed: int = 0

    def validate(self) -> None:
        check_positive(self.image_size, "image_size")
        check_positive(self.slices_per_subject, "slices_per_subject")
        if self.n_healthy < 0 or self.n_diseased < 0:
            raise ValueError("subject counts must be >= 0")
        check_in_range(self.lesion_intensity_delta, 0.1, 0.6, "lesion_intensity_delta")
        check_in_range(self.lesion_radius_frac, 0.0, 0.25, "lesion_radius_frac", low_open=True)
        if self.texture_noise_sigma < 0:
            raise ValueError("texture_noise_sigma must be >= 0")
        if self.lesion_sign not in (-1, 1):
            raise ValueError("lesion_sign must be -1 or +1")


@dataclass(frozen=True)
class PhantomSubject:
    subject_id: str
    slices: np.ndarray  # (n_slices, size, size) float32 in [-1, 1]
    diseased: bool
    lesion_masks: np.ndarray  # (n_slices, size, size) bool; all False when healthy


@dataclass(frozen=True)
class DatasetSplit:
    """Subject counts per directory of the generated layout."""

    h_size: int
    m_healthy: int
    m_diseased: int
    holdout_healthy: int = 0
    holdout_diseased: int = 0

    def validate(self) -> None:
        for name in ("h_size", "m_healthy", "m_diseased", "holdout_healthy", "holdout_diseased"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.m_healthy + self.m_diseased == 0:
            raise ValueError("mixed set M must be nonempty (training requires it)")


def _smooth_disk(r: np.ndarray, radius: float, edge: float) -> np.ndarray:
    # logistic edge profile; value 0.5 exactly at `radius`
    return 1.0 / (1.0 + np.exp((r - radius) / edge))


def template_slice(slice_index: int, n_slices: int, image_size: int) -> np.ndarray:
    """Noise-free anatomy template for one slice; pure function of geometry.

    Outer extent shrinks toward the first/last slices, mimicking how anatomy
    thins out at the edges of a registered stack.
    """
    half = (n_slices - 1) / 2
    shrink = abs(slice_index - half) / half if half > 0 else 0.0
    outer = 0.80 - 0.25 * shrink
    yy, xx = np.mgrid[0:image_size, 0:image_size]
    center = (image_size - 1) / 2
    r = np.sqrt((yy - center) ** 2 + (xx - center) ** 2) / (image_size / 2)
    edge = 2.0 / (image_size / 2)  # ~2 px transition regardless of resolution
    img = (
        -1.0
        + 1.2 * _smooth_disk(r, outer, edge)
        + 0.25 * _smooth_disk(r, 0.55 * outer, edge)
        - 0.35 * _smooth_disk(r, 0.25 * outer, edge)
    )
    return img.astype(np.float32)


def template_outer_radius(slice_index: int, n_slices: int) -> float:
    half = (n_slices - 1) / 2
    shrink = abs(slice_index - half) / half if half > 0 else 0.0
    return 0.80 - 0.25 * shrink


def generate_subject(spec: PhantomSpec, subject_index: int, diseased: bool) -> PhantomSubject:
    """Render one subject: shared template + per-subject noise (+ lesion).

    The noise stream depends on (seed, subject_index) only, so the diseased
    and healthy renders of the same index differ exactly by the lesion.
    """
    spec.validate()
    if subject_index < 0:
        raise ValueError("subject_index must be >= 0")
    size = spec.image_size
    n = spec.slices_per_subject
    rng_noise = np.random.default_rng([spec.seed, subject_index, 11])
    rng_lesion = np.random.default_rng([spec.seed, subject_index, 13])

    # Lesion geometry is drawn once and applied to a contiguous slice run.
    run_len = int(rng_lesion.integers(max(1, n // 4), n + 1))
    run_start = int(rng_lesion.integers(0, n - run_len + 1))
    angle = rng_lesion.uniform(0.0, 2.0 * np.pi)
    # Center distance is scaled so the lesion disk stays inside the brain
    # region of every slice it touches (containment premise of the design).
    min_outer = min(template_outer_radius(k, n) for k in range(run_start, run_start + run_len))
    lesion_radius_halfsize = spec.lesion_radius_frac * 2.0  # fraction of half-size
    room = max(0.0, min_outer - lesion_radius_halfsize - 0.05)
    radial_pos = rng_lesion.uniform(0.0, 1.0) * room

    slices = np.empty((n, size, size), dtype=np.float32)
    masks = np.zeros((n, size, size), dtype=bool)
    center = (size - 1) / 2
    yy, xx = np.mgrid[0:size, 0:size]
    for k in range(n):
        img = template_slice(k, n, size)
        img = img + rng_noise.normal(0.0, spec.texture_noise_sigma, img.shape).astype(np.float32)
        if diseased and run_start <= k < run_start + run_len:
            ly = center + radial_pos * (size / 2) * np.sin(angle)
            lx = center + radial_pos * (size / 2) * np.cos(angle)
            rr = np.sqrt((yy - ly) ** 2 + (xx - lx) ** 2)
            weight = _smooth_disk(rr, spec.lesion_radius_frac * size, 1.0)
            img = img + spec.lesion_sign * spec.lesion_intensity_delta * weight.astype(np.float32)
            masks[k] = weight > 0.5
        slices[k] = np.clip(img, -1.0, 1.0)
    return PhantomSubject(
        subject_id=f"s{subject_index:05d}",
        slices=slices,
        diseased=diseased,
        lesion_masks=masks if diseased else np.zeros((n, size, size), dtype=bool),
    )


def generate_dataset(spec: PhantomSpec, root: str | Path, split: DatasetSplit | None = None) -> Path:
    """Write a phantom dataset under `root` in the standard layout.

    Layout: <root>/{H,M,holdout}/<subject_id>/slice_<k>.npy plus manifest.csv
    (subject_id, split, label) and dataset.json (image size, slice count,
    intensity bounds). Labels inside M and holdout are assigned in a
    deterministic shuffled order so subject ids carry no label signal.
    """
    spec.validate()
    if split is None:
        split = DatasetSplit(h_size=spec.n_healthy, m_healthy=spec.n_diseased, m_diseased=spec.n_diseased)
    split.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    assign_rng = np.random.default_rng([spec.seed, 7919])
    manifest_rows: list[tuple[str, str, int]] = []
    next_index = 0

    def emit(split_name: str, prefix: str, n_healthy: int, n_diseased: int) -> None:
        nonlocal next_index
        flags = np.array([False] * n_healthy + [True] * n_diseased)
        assign_rng.shuffle(flags)
        for i, flag in enumerate(flags):
            subject = generate_subject(spec, next_index, bool(flag))
            next_index += 1
            subject_id = f"{prefix}{i:04d}"
            subject_dir = root / split_name / subject_id
            subject_dir.mkdir(parents=True, exist_ok=True)
            for k in range(spec.slices_per_subject):
                np.save(subject_dir / f"slice_{k}.npy", subject.slices[k])
            manifest_rows.append((subject_id, split_name, int(flag)))

    emit("H", "h", split.h_size, 0)
    emit("M", "m", split.m_healthy, split.m_diseased)
    if split.holdout_healthy + split.holdout_diseased > 0:
        emit("holdout", "x", split.holdout_healthy, split.holdout_diseased)

    with open(root / MANIFEST_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "split", "label"])
        writer.writerows(manifest_rows)
    with open(root / DATASET_META_NAME, "w") as fh:
        json.dump(
            {
                "format_version": 1,
                "image_size": spec.image_size,
                "slices_per_subject": spec.slices_per_subject,
                "intensity_bounds": [-1.0, 1.0],
            },
            fh,
            indent=2,
        )
    return root


def noise_free(spec: PhantomSpec) -> PhantomSpec:
    """Copy of `spec` that renders the bare template (no texture noise)."""
    return replace(spec, texture_noise_sigma=0.0)
