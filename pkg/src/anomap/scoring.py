"""Subject-level disease scoring from healthy translations.

A trained generator turns each slice into its healthy-looking counterpart;
the per-slice score is the mean activation magnitude of the difference map,
and the subject score averages its slices. Higher scores mean more change was
needed to make the subject look healthy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ._validation import check_slice_stack
from .data import PreprocessConfig, SubjectRecord, load_subject_slices
from .networks import compose_translation


@dataclass(frozen=True)
class ScoreRow:
    subject_id: str
    source_set: str  # "H", "M", or "holdout"
    score: float
    pseudo_label: int  # 0 for H, 1 otherwise (the label-free convention)
    true_label: int | None = None


@dataclass(frozen=True)
class ScoreTable:
    """One row per subject, sorted by subject_id for deterministic export."""

    rows: tuple[ScoreRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: r.subject_id)))
        seen = set()
        for row in self.rows:
            if row.subject_id in seen:
                raise ValueError(f"duplicate subject_id {row.subject_id!r}")
            seen.add(row.subject_id)
            if not np.isfinite(row.score):
                raise ValueError(f"non-finite score for subject {row.subject_id!r}")

    def subset(self, source_sets: tuple[str, ...]) -> "ScoreTable":
        return ScoreTable(tuple(r for r in self.rows if r.source_set in source_sets))

    def scores(self) -> list[float]:
        return [r.score for r in self.rows]

    def true_labels(self) -> list[int]:
        labels = [r.true_label for r in self.rows]
        if any(label is None for label in labels):
            raise ValueError("table has rows without true labels")
        return labels

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subject_id", "source_set", "score", "pseudo_label", "true_label"])
            for r in self.rows:
                true = "" if r.true_label is None else r.true_label
                writer.writerow([r.subject_id, r.source_set, repr(r.score), r.pseudo_label, true])

    @classmethod
    def read_csv(cls, path: str | Path) -> "ScoreTable":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                true = rec["true_label"]
                rows.append(
                    ScoreRow(
                        subject_id=rec["subject_id"],
                        source_set=rec["source_set"],
                        score=float(rec["score"]),
                        pseudo_label=int(rec["pseudo_label"]),
                        true_label=None if true == "" else int(true),
                    )
                )
        return cls(tuple(rows))


def translate_slices(
    generator, slices: np.ndarray, mode: str = "additive", batch_size: int = 64
) -> np.ndarray:
    """Healthy translation of a (n, h, w) stack, order preserved."""
    stack = check_slice_stack(slices)
    out = np.empty_like(stack)
    with torch.no_grad():
        for start in range(0, len(stack), batch_size):
            x = torch.from_numpy(stack[start : start + batch_size][:, None])
            y = compose_translation(x, generator(x), mode)
            out[start : start + batch_size] = y.numpy()[:, 0]
    return out


def translate_subject(
    generator, record: SubjectRecord, preprocess: PreprocessConfig, mode: str = "additive"
) -> np.ndarray:
    """Load, preprocess, and translate one subject's slice stack."""
    return translate_slices(generator, load_subject_slices(record, preprocess), mode)


def difference_map(x: np.ndarray, y: np.ndarray, signed: bool = False) -> np.ndarray:
    """Activation map between an input slice and its healthy translation.

    Default is |x - y|; the signed variant keeps the raw difference (whose
    mean can cancel) for fidelity experiments only.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = x - y
    return diff if signed else np.abs(diff)


def slice_score(diff: np.ndarray) -> float:
    """Arithmetic mean of all map pixels (background included)."""
    return float(np.mean(np.asarray(diff), dtype=np.float64))


def subject_score(slice_scores) -> float:
    """Mean of per-slice scores; the subject-level detection score."""
    scores = list(slice_scores)
    if not scores:
        raise ValueError("subject has no slice scores")
    return float(np.mean(np.asarray(scores, dtype=np.float64)))


def score_stack(
    generator, slices: np.ndarray, mode: str = "additive", signed: bool = False
) -> float:
    """Subject score straight from an in-memory slice stack."""
    translated = translate_slices(generator, slices, mode)
    per_slice = [slice_score(difference_map(x, y, signed)) for x, y in zip(slices, translated)]
    return subject_score(per_slice)


def pseudo_label_for(source_set: str) -> int:
    return 0 if source_set == "H" else 1


def score_dataset(
    generator,
    records: list[SubjectRecord],
    preprocess: PreprocessConfig,
    mode: str = "additive",
    signed: bool = False,
) -> ScoreTable:
    """Score every subject; failures carry subject attribution."""
    if not records:
        raise ValueError("no subjects to score")
    rows = []
    for record in records:
        try:
            stack = load_subject_slices(record, preprocess)
            score = score_stack(generator, stack, mode, signed)
        except Exception as exc:
            raise RuntimeError(f"scoring failed for subject {record.subject_id!r}: {exc}") from exc
        rows.append(
            ScoreRow(
                subject_id=record.subject_id,
                source_set=record.source_set,
                score=score,
                pseudo_label=pseudo_label_for(record.source_set),
                true_label=record.true_label,
            )
        )
    return ScoreTable(tuple(rows))
