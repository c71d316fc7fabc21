"""Experiment orchestration: train, evaluate checkpoints, select, report.

The pipeline mirrors the detection workflow end to end: adversarial training
on (H, M), label-free checkpoint selection via AUCp (with a Fréchet-distance
baseline for comparison), then transductive (train-time mixed set) and
inductive (holdout) evaluation against the manifest labels.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import PreprocessConfig, SubjectRecord, dataset_bounds, load_dataset, load_subject_slices
from .metrics import (
    CheckpointRecord,
    MetricSeries,
    RandomFeatureEmbedding,
    auc,
    aucp,
    frechet_distance,
    roc_curve,
    select_best,
)
from .networks import load_model_pair
from .scoring import ScoreTable, difference_map, score_dataset, translate_slices
from .training import TrainingConfig, WEIGHTS_NAME, list_checkpoints, run_training

REPORT_NAME = "report.json"
SELECTION_NAME = "selection.csv"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_root: str
    output_dir: str
    training: TrainingConfig = TrainingConfig()
    crop_size: int | None = None
    selection_criterion: str = "aucp"
    compute_fid: bool = True
    fid_dim: int = 64
    fid_seed: int = 1234
    signed_maps: bool = False
    n_diffmap_exports: int = 4

    def validate(self) -> None:
        self.training.validate()
        if self.selection_criterion not in ("aucp", "fid"):
            raise ValueError("selection_criterion must be 'aucp' or 'fid'")
        if self.selection_criterion == "fid" and not self.compute_fid:
            raise ValueError("selection by fid requires compute_fid")
        if not Path(self.dataset_root).is_dir():
            raise ValueError(f"dataset_root {self.dataset_root} does not exist")

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(
            crop_size=self.crop_size, bounds=dataset_bounds(Path(self.dataset_root))
        )


@dataclass(frozen=True)
class SplitReport:
    transductive_auc: float | None
    inductive_auc: float | None

    @property
    def gap(self) -> float | None:
        if self.transductive_auc is None or self.inductive_auc is None:
            return None
        return abs(self.transductive_auc - self.inductive_auc)


def evaluate_splits(table: ScoreTable) -> SplitReport:
    """True-label AUCs: transductive over H and M rows, inductive over holdout."""
    train = table.subset(("H", "M"))
    holdout = table.subset(("holdout",))
    transductive = auc(train.scores(), train.true_labels()) if train.rows else None
    inductive = auc(holdout.scores(), holdout.true_labels()) if holdout.rows else None
    return SplitReport(transductive_auc=transductive, inductive_auc=inductive)


@dataclass
class CheckpointEvaluation:
    record: CheckpointRecord
    table: ScoreTable


@dataclass
class PipelineResult:
    run_dir: Path
    checkpoints: list[CheckpointEvaluation]
    selected: CheckpointRecord
    selected_table: ScoreTable
    split_report: SplitReport

    def metric_series(self, metric: str) -> MetricSeries:
        records = [c.record for c in self.checkpoints]
        if any(r.true_auc is None for r in records):
            raise ValueError("true AUC unavailable; dataset had no manifest")
        return MetricSeries(
            iterations=tuple(r.iteration for r in records),
            values=tuple(getattr(r, metric) for r in records),
            true_aucs=tuple(r.true_auc for r in records),
        )


def stack_set_slices(records: list[SubjectRecord], preprocess: PreprocessConfig) -> np.ndarray:
    if not records:
        raise ValueError("empty record list")
    return np.concatenate([load_subject_slices(r, preprocess) for r in records], axis=0)


def evaluate_checkpoints(
    run_dir: str | Path,
    records: list[SubjectRecord],
    preprocess: PreprocessConfig,
    mode: str,
    compute_fid: bool = True,
    fid_dim: int = 64,
    fid_seed: int = 1234,
    signed_maps: bool = False,
    with_true_auc: bool = True,
) -> list[CheckpointEvaluation]:
    """Score every checkpoint of a run on the given subjects.

    AUCp uses pseudo-labels only. The Fréchet baseline compares features of
    the healthy-translated M slices against real H slices. True AUC (the
    transductive one, matching AUCp's subject pool) is attached only when
    labels are available.
    """
    checkpoints = list_checkpoints(run_dir)
    if not checkpoints:
        raise ValueError(f"no checkpoints under {run_dir}")
    h_records = [r for r in records if r.source_set == "H"]
    m_records = [r for r in records if r.source_set == "M"]
    embedding = None
    real_features = None
    m_slices = None
    if compute_fid:
        embedding = RandomFeatureEmbedding(dim=fid_dim, seed=fid_seed)
        real_features = embedding(stack_set_slices(h_records, preprocess))
        m_slices = stack_set_slices(m_records, preprocess)

    out = []
    for iteration, directory in checkpoints:
        generator, _ = load_model_pair(directory / WEIGHTS_NAME)
        table = score_dataset(generator, records, preprocess, mode, signed_maps)
        fid_value = None
        if compute_fid:
            translated = translate_slices(generator, m_slices, mode)
            fid_value = frechet_distance(embedding(translated), real_features)
        true_auc = None
        if with_true_auc:
            train = table.subset(("H", "M"))
            true_auc = auc(train.scores(), train.true_labels())
        record = CheckpointRecord(
            iteration=iteration,
            weights_path=directory / WEIGHTS_NAME,
            aucp=aucp(table),
            fid=fid_value,
            true_auc=true_auc,
        )
        out.append(CheckpointEvaluation(record=record, table=table))
    return out


def run_pipeline(config: ExperimentConfig, resume: bool = False) -> PipelineResult:
    """All stages: train, evaluate checkpoints, select, report, export.

    Any stage failure leaves earlier artifacts in place and records the
    failing stage in the report before the exception propagates.
    """
    config.validate()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = "load-data"
    try:
        root = Path(config.dataset_root)
        has_manifest = (root / "manifest.csv").exists()
        records_by_set = load_dataset(root, with_labels=has_manifest)
        preprocess = config.preprocess()
        all_records = [r for recs in records_by_set.values() for r in recs]

        stage = "train"
        h_slices = stack_set_slices(records_by_set["H"], preprocess)
        m_slices = stack_set_slices(records_by_set["M"], preprocess)
        run_dir = run_training(config.training, h_slices, m_slices, out_dir / "run", resume=resume)

        stage = "evaluate-checkpoints"
        evaluations = evaluate_checkpoints(
            run_dir,
            all_records,
            preprocess,
            config.training.translation_mode,
            compute_fid=config.compute_fid,
            fid_dim=config.fid_dim,
            fid_seed=config.fid_seed,
            signed_maps=config.signed_maps,
            with_true_auc=has_manifest,
        )

        stage = "select"
        selected = select_best([e.record for e in evaluations], config.selection_criterion)
        selected_table = next(
            e.table for e in evaluations if e.record.iteration == selected.iteration
        )

        stage = "report"
        split_report = (
            evaluate_splits(selected_table)
            if has_manifest
            else SplitReport(transductive_auc=None, inductive_auc=None)
        )
        result = PipelineResult(
            run_dir=run_dir,
            checkpoints=evaluations,
            selected=selected,
            selected_table=selected_table,
            split_report=split_report,
        )
        _export_artifacts(config, out_dir, result, has_manifest)
        return result
    except Exception as exc:
        _write_json(
            out_dir / REPORT_NAME, {"status": "failed", "stage": stage, "error": str(exc)}
        )
        raise


def _export_artifacts(
    config: ExperimentConfig, out_dir: Path, result: PipelineResult, has_manifest: bool
) -> None:
    _write_selection_table(out_dir / SELECTION_NAME, result)
    train_table = result.selected_table.subset(("H", "M"))
    holdout_table = result.selected_table.subset(("holdout",))
    train_table.write_csv(out_dir / "scores_train.csv")
    if holdout_table.rows:
        holdout_table.write_csv(out_dir / "scores_holdout.csv")
    if has_manifest:
        _write_roc(out_dir / "roc_train.dat", train_table)
        if holdout_table.rows:
            _write_roc(out_dir / "roc_holdout.dat", holdout_table)
    _export_diffmaps(config, out_dir, result)
    report = {
        "status": "ok",
        "selected_iteration": result.selected.iteration,
        "selection_criterion": config.selection_criterion,
        "selected_aucp": result.selected.aucp,
        "selected_fid": result.selected.fid,
        "transductive_auc": result.split_report.transductive_auc,
        "inductive_auc": result.split_report.inductive_auc,
        "transductive_inductive_gap": result.split_report.gap,
        "checkpoints": [
            {
                "iteration": e.record.iteration,
                "aucp": e.record.aucp,
                "fid": e.record.fid,
                "true_auc": e.record.true_auc,
            }
            for e in result.checkpoints
        ],
        "config": dataclasses.asdict(config),
    }
    _write_json(out_dir / REPORT_NAME, report)


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _write_selection_table(path: Path, result: PipelineResult) -> None:
    lines = ["iteration,aucp,fid,true_auc"]
    for e in result.checkpoints:
        r = e.record
        fid = "" if r.fid is None else repr(r.fid)
        true = "" if r.true_auc is None else repr(r.true_auc)
        lines.append(f"{r.iteration},{r.aucp!r},{fid},{true}")
    lines.append(f"selected_iteration,aucp,{result.selected.iteration}")
    path.write_text("\n".join(lines) + "\n")


def _write_roc(path: Path, table: ScoreTable) -> None:
    curve = roc_curve(table.scores(), table.true_labels())
    with open(path, "w") as fh:
        for f, t in zip(curve.fpr, curve.tpr):
            fh.write(f"{f:.10g} {t:.10g}\n")


def _export_diffmaps(config: ExperimentConfig, out_dir: Path, result: PipelineResult) -> None:
    """PNG difference maps (min-max stretched) plus raw arrays for a few
    subjects; purely qualitative, never feeds back into scores."""
    if config.n_diffmap_exports <= 0:
        return
    from PIL import Image

    records_by_set = load_dataset(Path(config.dataset_root))
    preprocess = config.preprocess()
    generator, _ = load_model_pair(result.selected.weights_path)
    candidates = records_by_set.get("M", []) + records_by_set.get("holdout", [])
    for record in candidates[: config.n_diffmap_exports]:
        stack = load_subject_slices(record, preprocess)
        translated = translate_slices(generator, stack, config.training.translation_mode)
        subject_dir = out_dir / "diffmaps" / record.subject_id
        subject_dir.mkdir(parents=True, exist_ok=True)
        for k, (x, y) in enumerate(zip(stack, translated)):
            diff = difference_map(x, y, signed=config.signed_maps)
            np.save(subject_dir / f"slice_{k}.npy", diff)
            lo, hi = float(diff.min()), float(diff.max())
            stretched = (diff - lo) / (hi - lo) if hi > lo else np.zeros_like(diff)
            Image.fromarray((stretched * 255).astype(np.uint8), mode="L").save(
                subject_dir / f"slice_{k}.png"
            )


def run_seed_sweep(config: ExperimentConfig, seeds: list[int]) -> list[PipelineResult]:
    """One pipeline per seed, each in its own subdirectory."""
    results = []
    for seed in seeds:
        sub = dataclasses.replace(
            config,
            output_dir=str(Path(config.output_dir) / f"seed_{seed}"),
            training=dataclasses.replace(config.training, seed=seed),
        )
        results.append(run_pipeline(sub))
    return results


def ablate(
    config: ExperimentConfig,
    seeds: list[int],
    lambda_id_values: tuple[float, ...] = (1.0, 0.0),
    modes: tuple[str, ...] = ("additive", "direct"),
) -> dict[str, list[PipelineResult]]:
    """Identity-loss and translation-mode sweeps around the base config.

    Variants: one per lambda_id value (additive mode) and one per mode
    (lambda_id fixed at the first value); the shared baseline is run once.
    """
    variants: dict[str, TrainingConfig] = {}
    for lam in lambda_id_values:
        variants[f"lambda_id={lam:g}"] = dataclasses.replace(
            config.training, lambda_id=lam, translation_mode=modes[0]
        )
    for mode in modes:
        variants[f"mode={mode}"] = dataclasses.replace(
            config.training, lambda_id=lambda_id_values[0], translation_mode=mode
        )
    results: dict[str, list[PipelineResult]] = {}
    cache: dict[TrainingConfig, list[PipelineResult]] = {}
    for name, training in variants.items():
        if training not in cache:
            sub = dataclasses.replace(
                config,
                output_dir=str(Path(config.output_dir) / name.replace("=", "_")),
                training=training,
            )
            cache[training] = run_seed_sweep(sub, seeds)
        results[name] = cache[training]
    _write_json(
        Path(config.output_dir) / "ablation.json",
        {
            name: {
                "median_inductive_auc": _median(
                    [r.split_report.inductive_auc for r in runs]
                ),
                "per_seed_inductive_auc": [r.split_report.inductive_auc for r in runs],
                "selected_iterations": [r.selected.iteration for r in runs],
            }
            for name, runs in results.items()
        },
    )
    return results


def _median(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    if not present:
        return None
    return float(np.median(present))
