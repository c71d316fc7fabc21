"""Ranking metrics, distribution distance, and checkpoint selection.

`aucp` is the label-free selection signal: AUC computed against pseudo-labels
that call every mixed-set subject positive. Its ceiling is below 1 whenever M
contains healthy subjects, but its ranking across checkpoints tracks the true
AUC, which is what selection needs. The Fréchet distance over a fixed random
convolutional embedding serves as the conventional generative-quality
baseline it is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from ._validation import check_scores_labels
from .scoring import ScoreTable

SELECTION_CRITERIA = ("aucp", "fid")


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: fraction of (positive, negative) pairs ordered
    correctly, ties credited 0.5. Computed via midranks."""
    scores, labels = check_scores_labels(scores, labels)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j < len(sorted_scores) and sorted_scores[j] == sorted_scores[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0  # midrank, 1-based
        i = j
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def aucp(table: ScoreTable) -> float:
    """AUC under pseudo-labels: H rows negative, M rows positive.

    Holdout rows, if present, are ignored; selection uses only what training
    saw. True labels are never consulted.
    """
    rows = [r for r in table.rows if r.source_set in ("H", "M")]
    scores = [r.score for r in rows]
    pseudo = [0 if r.source_set == "H" else 1 for r in rows]
    if not any(pseudo) or all(pseudo):
        raise ValueError("aucp needs both H and M rows in the score table")
    return auc(scores, pseudo)


@dataclass(frozen=True)
class RocCurve:
    """Threshold-sweep operating points from (0,0) to (1,1), with area.

    thresholds[k] is the lowest score still classified positive at point k;
    the leading (0,0) point carries +inf (nothing classified positive).
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_curve(scores, labels) -> RocCurve:
    """Sweep unique score thresholds in descending order.

    Point k is the (fpr, tpr) of classifying score >= k-th threshold as
    positive; the trapezoidal area under the curve equals the Mann-Whitney
    statistic (tied scores collapse to single sweep points, reproducing the
    0.5 tie credit geometrically).
    """
    scores, labels = check_scores_labels(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # Keep only the last index of each tied block: one point per threshold.
    keep = np.nonzero(np.append(np.diff(sorted_scores) != 0, True))[0]
    tpr = np.concatenate([[0.0], tp[keep] / n_pos])
    fpr = np.concatenate([[0.0], fp[keep] / n_neg])
    thresholds = np.concatenate([[np.inf], sorted_scores[keep]])
    area = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=area)


def frechet_distance(features_a, features_b) -> float:
    """||mu_a - mu_b||^2 + tr(C_a + C_b - 2 (C_a C_b)^(1/2)).

    Gaussian fits use sample statistics. The matrix square roots go through
    eigendecompositions with negative eigenvalues clamped to zero, so small
    numerical asymmetries cannot produce complex terms.
    """
    a = _check_features(features_a)
    b = _check_features(features_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    w_a, v_a = np.linalg.eigh(cov_a)
    sqrt_a = (v_a * np.sqrt(np.clip(w_a, 0.0, None))) @ v_a.T
    inner = sqrt_a @ cov_b @ sqrt_a
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    mean_term = float(((mu_a - mu_b) ** 2).sum())
    return mean_term + float(np.trace(cov_a) + np.trace(cov_b)) - 2.0 * trace_sqrt


def _check_features(features) -> np.ndarray:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError(f"need a (n >= 2, dim) feature array, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("features contain non-finite values")
    return arr


@dataclass(frozen=True)
class CheckpointRecord:
    iteration: int
    weights_path: Path | None = None
    aucp: float | None = None
    fid: float | None = None
    true_auc: float | None = None


def select_best(checkpoints: list[CheckpointRecord], criterion: str) -> CheckpointRecord:
    """argmax of aucp or argmin of fid; ties go to the later iteration."""
    if criterion not in SELECTION_CRITERIA:
        raise ValueError(f"criterion must be one of {SELECTION_CRITERIA}")
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    sign = 1.0 if criterion == "aucp" else -1.0
    best = None
    best_value = None
    for record in checkpoints:
        value = getattr(record, criterion)
        if value is None:
            raise ValueError(f"checkpoint {record.iteration} lacks a {criterion} value")
        keyed = sign * value
        if (
            best is None
            or keyed > best_value
            or (keyed == best_value and record.iteration > best.iteration)
        ):
            best, best_value = record, keyed
    return best


@dataclass(frozen=True)
class MetricSeries:
    """Per-checkpoint aligned (iteration, metric value, true AUC) triples."""

    iterations: tuple[int, ...]
    values: tuple[float, ...]
    true_aucs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.iterations) == len(self.values) == len(self.true_aucs)):
            raise ValueError("series components must have equal lengths")
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValueError("iterations must be strictly increasing")


def metric_auc_correlation(series: MetricSeries) -> float:
    """|Pearson r| between a selection metric and the true AUC across
    checkpoints. Degenerate (zero-variance) series are rejected rather than
    silently yielding NaN."""
    if len(series.iterations) < 3:
        raise ValueError("correlation needs at least 3 checkpoints")
    x = np.asarray(series.values, dtype=np.float64)
    y = np.asarray(series.true_aucs, dtype=np.float64)
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise ValueError("zero variance in a series; correlation undefined")
    return float(abs(np.corrcoef(x, y)[0, 1]))


class RandomFeatureEmbedding:
    """Fixed, seeded random convolutional embedding for Fréchet comparisons.

    Natural-image embeddings are meaningless for synthetic grayscale slices;
    a frozen random conv net gives a deterministic feature space that still
    responds to distribution shifts. Fan-in-scaled init keeps activation
    magnitude stable through the ReLU stack.
    """

    def __init__(self, dim: int = 64, seed: int = 1234):
        widths = [max(2, dim // 8), max(2, dim // 4), max(2, dim // 2), dim]
        layers: list[nn.Module] = []
        w_in = 1
        for w_out in widths:
            layers += [nn.Conv2d(w_in, w_out, kernel_size=4, stride=2, padding=1), nn.ReLU()]
            w_in = w_out
        layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
        net = nn.Sequential(*layers)
        rng = torch.Generator().manual_seed(seed)
        for m in net.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.weight.shape[1] * m.weight.shape[2] * m.weight.shape[3]
                with torch.no_grad():
                    m.weight.copy_(
                        torch.randn(m.weight.shape, generator=rng) * (2.0 / fan_in) ** 0.5
                    )
                    m.bias.zero_()
        self.dim = dim
        self._net = net.eval()

    def __call__(self, slices: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """(n, h, w) slices in [-1, 1] -> (n, dim) float64 features."""
        arr = np.asarray(slices, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"expected (n, h, w) slices, got shape {arr.shape}")
        chunks = []
        with torch.no_grad():
            for start in range(0, len(arr), batch_size):
                x = torch.from_numpy(arr[start : start + batch_size][:, None])
                chunks.append(self._net(x).numpy().astype(np.float64))
        return np.concatenate(chunks, axis=0)
