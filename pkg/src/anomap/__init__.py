"""Unsupervised anomaly detection via additive-map healthy translation.

An adversarially trained generator learns the additive change that makes any
input slice look like it came from the known-healthy set; the magnitude of
that change, averaged to subject level, is the disease-detection score.
Checkpoint selection needs no labels: it ranks checkpoints by AUC against
set-membership pseudo-labels (AUCp).
"""

from .data import PreprocessConfig, SliceStream, SubjectRecord, center_crop, load_dataset, normalize
from .estimator import TranslationAnomalyDetector
from .evaluation import (
    ExperimentConfig,
    PipelineResult,
    SplitReport,
    ablate,
    evaluate_checkpoints,
    evaluate_splits,
    run_pipeline,
    run_seed_sweep,
)
from .metrics import (
    CheckpointRecord,
    MetricSeries,
    RandomFeatureEmbedding,
    RocCurve,
    auc,
    aucp,
    frechet_distance,
    metric_auc_correlation,
    roc_curve,
    select_best,
)
from .networks import (
    Discriminator,
    Generator,
    compose_healthy,
    compose_translation,
    init_weights,
    load_model_pair,
    save_model_pair,
)
from .phantom import DatasetSplit, PhantomSpec, PhantomSubject, generate_dataset, generate_subject
from .scoring import (
    ScoreRow,
    ScoreTable,
    difference_map,
    score_dataset,
    slice_score,
    subject_score,
    translate_slices,
    translate_subject,
)
from .training import (
    AdversarialTrainer,
    LossReport,
    TrainingConfig,
    TrainingDiverged,
    discriminator_loss,
    generator_loss,
    gradient_penalty,
    learning_rate_at,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarialTrainer",
    "CheckpointRecord",
    "DatasetSplit",
    "Discriminator",
    "ExperimentConfig",
    "Generator",
    "LossReport",
    "MetricSeries",
    "PhantomSpec",
    "PhantomSubject",
    "PipelineResult",
    "PreprocessConfig",
    "RandomFeatureEmbedding",
    "RocCurve",
    "ScoreRow",
    "ScoreTable",
    "SliceStream",
    "SplitReport",
    "SubjectRecord",
    "TrainingConfig",
    "TrainingDiverged",
    "TranslationAnomalyDetector",
    "ablate",
    "auc",
    "aucp",
    "center_crop",
    "compose_healthy",
    "compose_translation",
    "difference_map",
    "discriminator_loss",
    "evaluate_checkpoints",
    "evaluate_splits",
    "frechet_distance",
    "generate_dataset",
    "generate_subject",
    "generator_loss",
    "gradient_penalty",
    "init_weights",
    "learning_rate_at",
    "load_dataset",
    "load_model_pair",
    "metric_auc_correlation",
    "normalize",
    "roc_curve",
    "run_pipeline",
    "run_seed_sweep",
    "run_training",
    "save_model_pair",
    "score_dataset",
    "select_best",
    "slice_score",
    "subject_score",
    "translate_slices",
    "translate_subject",
]
