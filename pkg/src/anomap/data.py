"""Loading, preprocessing, and batch serving of subject slice stacks.

The on-disk layout mirrors what the phantom generator writes and is the same
contract any pre-registered dataset must follow:

    <root>/{H,M,holdout}/<subject_id>/slice_<k>.npy  (or .png)
    <root>/manifest.csv          # subject_id, split, label  (evaluation only)
    <root>/dataset.json          # optional: intensity bounds, sizes

Intensity normalization uses one fixed bounds pair per dataset so the
additive map sees a consistent scale across subjects.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ._validation import check_image_2d, check_positive
from .phantom import DATASET_META_NAME, MANIFEST_NAME, SPLIT_NAMES

_SLICE_RE = re.compile(r"slice_(\d+)\.(npy|png)$")

# Default reference bounds by storage format when dataset.json is absent.
_DEFAULT_BOUNDS = {".npy": (-1.0, 1.0), ".png": (0.0, 255.0)}


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    source_set: str  # "H", "M", or "holdout"
    slice_paths: tuple[Path, ...]
    true_label: int | None = None  # present only when a manifest was supplied


@dataclass
class SliceBatch:
    """A batch of preprocessed slices with set provenance."""

    pixels: torch.Tensor  # (batch, 1, h, w), values in [-1, 1]
    source_set: str


@dataclass(frozen=True)
class PreprocessConfig:
    crop_size: int | None = None  # None: keep native size
    bounds: tuple[float, float] = (-1.0, 1.0)


def center_crop(image: np.ndarray, target: int) -> np.ndarray:
    """Centered target x target window; odd margins drop the high-index side."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    check_positive(target, "target")
    h, w = image.shape
    if target > h or target > w:
        raise ValueError(f"crop target {target} exceeds input size {image.shape}")
    top = (h - target) // 2
    left = (w - target) // 2
    return image[top : top + target, left : left + target]


def normalize(image: np.ndarray, bounds: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """Map [lo, hi] linearly onto [-1, 1], clamping values outside the bounds."""
    arr = check_image_2d(image)
    lo, hi = float(bounds[0]), float(bounds[1])
    if not hi > lo:
        raise ValueError(f"degenerate reference bounds ({lo}, {hi})")
    out = 2.0 * (arr - lo) / (hi - lo) - 1.0
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def load_slice(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    if path.suffix == ".png":
        from PIL import Image

        return np.asarray(Image.open(path).convert("F"), dtype=np.float32)
    raise ValueError(f"unsupported slice format: {path}")


def preprocess_slice(raw: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    img = np.asarray(raw, dtype=np.float32)
    if cfg.crop_size is not None:
        img = center_crop(img, cfg.crop_size)
    return normalize(img, cfg.bounds)


def read_manifest(path: Path) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["subject_id"]] = int(row["label"])
    return labels


def dataset_bounds(root: Path, ext: str = ".npy") -> tuple[float, float]:
    meta = Path(root) / DATASET_META_NAME
    if meta.exists():
        with open(meta) as fh:
            data = json.load(fh)
        lo, hi = data.get("intensity_bounds", _DEFAULT_BOUNDS[ext])
        return float(lo), float(hi)
    return _DEFAULT_BOUNDS[ext]


def load_dataset(
    root: str | Path,
    with_labels: bool = False,
    sets: tuple[str, ...] = SPLIT_NAMES,
) -> dict[str, list[SubjectRecord]]:
    """Discover subject records per source set.

    Labels come from the manifest and are attached only when `with_labels`
    is set; the training path never asks for them.
    """
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"dataset root {root} does not exist")
    labels = {}
    if with_labels:
        manifest = root / MANIFEST_NAME
        if not manifest.exists():
            raise ValueError(f"labels requested but {manifest} is missing")
        labels = read_manifest(manifest)

    out: dict[str, list[SubjectRecord]] = {}
    for set_name in sets:
        set_dir = root / set_name
        records: list[SubjectRecord] = []
        if set_dir.is_dir():
            for subject_dir in sorted(p for p in set_dir.iterdir() if p.is_dir()):
                paths = _ordered_slices(subject_dir)
                if not paths:
                    continue
                records.append(
                    SubjectRecord(
                        subject_id=subject_dir.name,
                        source_set=set_name,
                        slice_paths=paths,
                        true_label=labels.get(subject_dir.name) if with_labels else None,
                    )
                )
        out[set_name] = records
    return out


def _ordered_slices(subject_dir: Path) -> tuple[Path, ...]:
    found = []
    for p in subject_dir.iterdir():
        m = _SLICE_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return tuple(p for _, p in sorted(found))


def load_subject_slices(record: SubjectRecord, cfg: PreprocessConfig) -> np.ndarray:
    """Preprocessed (n_slices, h, w) stack for one subject."""
    return np.stack([preprocess_slice(load_slice(p), cfg) for p in record.slice_paths])


class SliceStream:
    """Epoch-shuffled batch server over the slices of one source set.

    Shuffles a permutation per epoch and reshuffles on exhaustion, so a batch
    larger than the set reuses slices at most once more than the minimum.
    State is fully serializable for resumable training.
    """

    def __init__(self, slices: np.ndarray, source_set: str, seed):
        slices = np.asarray(slices, dtype=np.float32)
        if slices.ndim != 3 or slices.shape[0] == 0:
            raise ValueError(f"need a nonempty (n, h, w) slice array, got {slices.shape}")
        self.slices = slices
        self.source_set = source_set
        self._rng = np.random.default_rng(seed)
        self._perm = self._rng.permutation(len(slices))
        self._cursor = 0

    @classmethod
    def from_records(
        cls, records: list[SubjectRecord], cfg: PreprocessConfig, source_set: str, seed
    ) -> "SliceStream":
        if not records:
            raise ValueError(f"set {source_set} is empty")
        stacks = [load_subject_slices(r, cfg) for r in records]
        return cls(np.concatenate(stacks, axis=0), source_set, seed)

    def __len__(self) -> int:
        return len(self.slices)

    def next_batch(self, batch_size: int) -> SliceBatch:
        check_positive(batch_size, "batch_size")
        idx = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            if self._cursor >= len(self._perm):
                self._perm = self._rng.permutation(len(self.slices))
                self._cursor = 0
            idx[i] = self._perm[self._cursor]
            self._cursor += 1
        pixels = torch.from_numpy(self.slices[idx][:, None, :, :])
        return SliceBatch(pixels=pixels, source_set=self.source_set)

    def state_dict(self) -> dict:
        return {
            "rng": self._rng.bit_generator.state,
            "perm": self._perm.tolist(),
            "cursor": self._cursor,
        }

    def load_state_dict(self, state: dict) -> None:
        self._rng.bit_generator.state = state["rng"]
        self._perm = np.asarray(state["perm"], dtype=np.int64)
        self._cursor = int(state["cursor"])
