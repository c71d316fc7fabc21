"""Scikit-learn style facade over the full detection workflow.

`fit` takes unlabeled slices tagged only by set membership (0 = known
healthy, 1 = mixed), trains the adversarial translator, and selects the
inference checkpoint by pseudo-label AUC. `decision_function` returns the
per-slice anomaly score (mean translation change); `transform` returns the
healthy translations themselves.
"""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_slice_stack
from .metrics import CheckpointRecord, aucp, roc_curve, select_best
from .networks import load_model_pair
from .scoring import ScoreRow, ScoreTable, translate_slices
from .training import (
    TrainingConfig,
    WEIGHTS_NAME,
    list_checkpoints,
    make_streams,
    run_training,
)


class TranslationAnomalyDetector(BaseEstimator):
    """Unsupervised detector scoring samples by required healthy change.

    Parameters mirror TrainingConfig where they share names. `work_dir`
    keeps run artifacts (checkpoints, logs) when set; otherwise a temporary
    directory is used and discarded after fitting.
    """

    def __init__(
        self,
        total_iterations: int = 2000,
        checkpoint_interval: int = 500,
        batch_size: int = 16,
        learning_rate: float = 1e-4,
        lambda_id: float = 1.0,
        lambda_gp: float = 10.0,
        translation_mode: str = "additive",
        generator_base_channels: int = 16,
        discriminator_base_channels: int = 16,
        random_state: int = 0,
        work_dir: str | None = None,
    ):
        self.total_iterations = total_iterations
        self.checkpoint_interval = checkpoint_interval
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lambda_id = lambda_id
        self.lambda_gp = lambda_gp
        self.translation_mode = translation_mode
        self.generator_base_channels = generator_base_channels
        self.discriminator_base_channels = discriminator_base_channels
        self.random_state = random_state
        self.work_dir = work_dir

    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(
            total_iterations=self.total_iterations,
            checkpoint_interval=self.checkpoint_interval,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lambda_id=self.lambda_id,
            lambda_gp=self.lambda_gp,
            translation_mode=self.translation_mode,
            generator_base_channels=self.generator_base_channels,
            discriminator_base_channels=self.discriminator_base_channels,
            seed=self.random_state,
        )

    def fit(self, X, y, groups=None):
        """Train on slices X with set-membership y (0 = healthy set H,
        1 = mixed set M). `groups` optionally maps slices to subjects for
        subject-level checkpoint selection; labels are never used."""
        X = check_slice_stack(X)
        y = np.asarray(y)
        if y.shape != (len(X),) or not np.isin(y, (0, 1)).all():
            raise ValueError("y must tag each slice with set membership 0 (H) or 1 (M)")
        if not (y == 0).any() or not (y == 1).any():
            raise ValueError("both sets must be nonempty: some y == 0 and some y == 1")
        if groups is not None:
            groups = np.asarray(groups)
            if groups.shape != (len(X),):
                raise ValueError("groups must align with X")
            mixed = {g: set(y[groups == g]) for g in np.unique(groups)}
            if any(len(s) > 1 for s in mixed.values()):
                raise ValueError("a group may not span both sets")

        cfg = self._training_config()
        cfg.validate()
        with tempfile.TemporaryDirectory() as tmp:
            run_dir = self.work_dir if self.work_dir is not None else tmp
            run_training(cfg, X[y == 0], X[y == 1], run_dir)
            records = []
            for iteration, directory in list_checkpoints(run_dir):
                generator, _ = load_model_pair(directory / WEIGHTS_NAME)
                slice_scores = self._slice_scores(generator, X)
                table = _selection_table(slice_scores, y, groups)
                records.append(
                    CheckpointRecord(
                        iteration=iteration, weights_path=directory / WEIGHTS_NAME, aucp=aucp(table)
                    )
                )
            selected = select_best(records, "aucp")
            self.generator_, _ = load_model_pair(selected.weights_path)

        self.selected_iteration_ = selected.iteration
        self.checkpoint_records_ = [
            CheckpointRecord(iteration=r.iteration, aucp=r.aucp) for r in records
        ]
        train_scores = self.decision_function(X)
        self.threshold_ = _pseudo_youden_threshold(train_scores, y)
        return self

    def decision_function(self, X) -> np.ndarray:
        """Per-slice anomaly score: mean |x - translation|; higher = more
        likely diseased."""
        self._check_fitted()
        X = check_slice_stack(X)
        return self._slice_scores(self.generator_, X)

    def score_samples(self, X) -> np.ndarray:
        return self.decision_function(X)

    def transform(self, X) -> np.ndarray:
        """Healthy translations of the given slices."""
        self._check_fitted()
        return translate_slices(self.generator_, check_slice_stack(X), self.translation_mode)

    def predict(self, X) -> np.ndarray:
        """1 where the anomaly score clears the fitted pseudo-label
        operating point (Youden J on training scores), else 0."""
        self._check_fitted()
        return (self.decision_function(X) >= self.threshold_).astype(int)

    def _slice_scores(self, generator, X: np.ndarray) -> np.ndarray:
        translated = translate_slices(generator, X, self.translation_mode)
        return np.abs(X.astype(np.float64) - translated).mean(axis=(1, 2))

    def _check_fitted(self):
        if not hasattr(self, "generator_"):
            raise ValueError("this estimator is not fitted yet; call fit first")


def _selection_table(slice_scores: np.ndarray, y: np.ndarray, groups) -> ScoreTable:
    """Subject-level score table when groups are given, per-slice otherwise."""
    rows = []
    if groups is None:
        for i, (score, membership) in enumerate(zip(slice_scores, y)):
            rows.append(
                ScoreRow(
                    subject_id=f"slice_{i:06d}",
                    source_set="H" if membership == 0 else "M",
                    score=float(score),
                    pseudo_label=int(membership),
                )
            )
    else:
        for g in np.unique(groups):
            mask = groups == g
            membership = int(y[mask][0])
            rows.append(
                ScoreRow(
                    subject_id=str(g),
                    source_set="H" if membership == 0 else "M",
                    score=float(slice_scores[mask].mean()),
                    pseudo_label=membership,
                )
            )
    return ScoreTable(tuple(rows))


def _pseudo_youden_threshold(scores: np.ndarray, y: np.ndarray) -> float:
    """Score threshold maximizing tpr - fpr against the set pseudo-labels."""
    curve = roc_curve(scores, y)
    best = int(np.argmax(curve.tpr - curve.fpr))
    threshold = curve.thresholds[best]
    return float(threshold if np.isfinite(threshold) else np.max(scores) + 1.0)
