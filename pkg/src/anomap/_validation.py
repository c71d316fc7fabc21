"""Input validation helpers shared across the package.

All helpers raise ValueError on contract violations so that callers (and the
CLI, which maps ValueError to exit code 1) can distinguish bad input from
runtime failure.
"""

from __future__ import annotations

import numpy as np


def check_image_2d(image, name: str = "image") -> np.ndarray:
    """Coerce to a 2D float array and verify all values are finite."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_slice_stack(stack, name: str = "slices") -> np.ndarray:
    """Coerce to a (n_slices, h, w) float32 array of finite values."""
    arr = np.asarray(stack, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (n_slices, h, w), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one slice")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_scores_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Validate a score/label pair for rank metrics: equal length, binary
    labels, both classes present."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape[0] != y.shape[0]:
        raise ValueError(f"scores and labels differ in length: {s.shape[0]} vs {y.shape[0]}")
    if s.shape[0] == 0:
        raise ValueError("scores and labels are empty")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores contain non-finite values")
    classes = np.unique(y)
    if not np.all(np.isin(classes, (0, 1))):
        raise ValueError(f"labels must be 0 or 1, got {classes}")
    if classes.size < 2:
        raise ValueError("both classes must be present to compute a rank metric")
    return s, y.astype(np.int64)


def check_positive(value, name: str) -> None:
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")


def check_in_range(value, lo, hi, name: str, low_open: bool = False) -> None:
    ok = (lo < value if low_open else lo <= value) and value <= hi
    if not ok:
        bracket = "(" if low_open else "["
        raise ValueError(f"{name} must lie in {bracket}{lo}, {hi}], got {value}")
