"""Command-line surface: dataset building, training, scoring, selection,
evaluation, and the full pipeline. Exit codes: 0 success, 1 validation
error, 2 runtime failure."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .data import PreprocessConfig, dataset_bounds, load_dataset
from .evaluation import (
    ExperimentConfig,
    SELECTION_NAME,
    ablate,
    evaluate_checkpoints,
    evaluate_splits,
    run_pipeline,
    stack_set_slices,
)
from .metrics import roc_curve, select_best
from .networks import load_model_pair
from .phantom import DatasetSplit, PhantomSpec, generate_dataset
from .scoring import ScoreTable, score_dataset
from .training import CONFIG_NAME, TrainingConfig, run_training

_TRAINING_FIELDS = {f.name: f for f in dataclasses.fields(TrainingConfig)}
_EXPERIMENT_SIMPLE_FIELDS = ("crop_size", "selection_criterion", "fid_dim", "fid_seed", "n_diffmap_exports")


class _Parser(argparse.ArgumentParser):
    # Bad usage is a validation error: exit 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@contextmanager
def _run_lock(directory: Path):
    """Exclusive ownership of an output directory via a pid lock file."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ValueError(f"{directory} is in use (remove stale {lock} to override)") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _add_training_flags(parser: argparse.ArgumentParser) -> None:
    # dataclass field annotations are strings here (postponed evaluation)
    types = {"int": int, "float": float, "str": str, "int | None": int}
    for name, field in _TRAINING_FIELDS.items():
        parser.add_argument(
            f"--{name.replace('_', '-')}", type=types[str(field.type)], default=None
        )


def _collect_training(args, base: dict | None = None) -> TrainingConfig:
    values = dict(base or {})
    for name in _TRAINING_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return TrainingConfig(**values)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


def _collect_experiment(args) -> ExperimentConfig:
    file_values = _load_config_file(getattr(args, "config", None))
    training = _collect_training(args, base=file_values.get("training", {}))
    values = {k: v for k, v in file_values.items() if k != "training"}
    for name in _EXPERIMENT_SIMPLE_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "data", None) is not None:
        values["dataset_root"] = args.data
    if getattr(args, "out", None) is not None:
        values["output_dir"] = args.out
    if getattr(args, "no_fid", False):
        values["compute_fid"] = False
    if getattr(args, "signed", False):
        values["signed_maps"] = True
    if "dataset_root" not in values or "output_dir" not in values:
        raise ValueError("--data and --out are required (via flags or config file)")
    return ExperimentConfig(training=training, **values)


def _cmd_phantom(args) -> int:
    spec = PhantomSpec(
        image_size=args.image_size,
        slices_per_subject=args.slices,
        n_healthy=args.h_size + args.m_healthy + args.holdout_healthy,
        n_diseased=args.m_diseased + args.holdout_diseased,
        lesion_intensity_delta=args.lesion_delta,
        lesion_radius_frac=args.lesion_radius,
        texture_noise_sigma=args.noise_sigma,
        lesion_sign=args.lesion_sign,
        seed=args.seed,
    )
    split = DatasetSplit(
        h_size=args.h_size,
        m_healthy=args.m_healthy,
        m_diseased=args.m_diseased,
        holdout_healthy=args.holdout_healthy,
        holdout_diseased=args.holdout_diseased,
    )
    root = generate_dataset(spec, args.out, split)
    n = args.h_size + args.m_healthy + args.m_diseased + args.holdout_healthy + args.holdout_diseased
    print(f"wrote {n} subjects under {root}")
    return 0


def _cmd_train(args) -> int:
    cfg = _collect_training(args, base=_load_config_file(args.config).get("training", {}))
    records = load_dataset(args.data)
    preprocess = PreprocessConfig(crop_size=args.crop_size, bounds=dataset_bounds(Path(args.data)))
    h = stack_set_slices(records["H"], preprocess)
    m = stack_set_slices(records["M"], preprocess)
    with _run_lock(Path(args.out)):
        run_training(cfg, h, m, args.out, resume=args.resume)
    print(f"trained {cfg.total_iterations} iterations into {args.out}")
    return 0


def _cmd_score(args) -> int:
    generator, _ = load_model_pair(args.weights)
    has_manifest = (Path(args.data) / "manifest.csv").exists()
    records_by_set = load_dataset(args.data, with_labels=has_manifest)
    sets = tuple(args.sets.split(","))
    records = [r for s in sets for r in records_by_set.get(s, [])]
    preprocess = PreprocessConfig(crop_size=args.crop_size, bounds=dataset_bounds(Path(args.data)))
    table = score_dataset(generator, records, preprocess, args.mode, args.signed)
    table.write_csv(args.out)
    print(f"wrote {len(table.rows)} subject scores to {args.out}")
    return 0


def _cmd_select(args) -> int:
    run_dir = Path(args.run)
    with open(run_dir / CONFIG_NAME) as fh:
        mode = json.load(fh)["translation_mode"]
    has_manifest = (Path(args.data) / "manifest.csv").exists()
    records_by_set = load_dataset(args.data, with_labels=has_manifest)
    records = [r for s in ("H", "M") for r in records_by_set[s]]
    preprocess = PreprocessConfig(crop_size=args.crop_size, bounds=dataset_bounds(Path(args.data)))
    evaluations = evaluate_checkpoints(
        run_dir,
        records,
        preprocess,
        mode,
        compute_fid=not args.no_fid,
        with_true_auc=has_manifest,
    )
    selected = select_best([e.record for e in evaluations], args.criterion)
    lines = ["iteration,aucp,fid,true_auc"]
    for e in evaluations:
        r = e.record
        fid = "" if r.fid is None else repr(r.fid)
        true = "" if r.true_auc is None else repr(r.true_auc)
        lines.append(f"{r.iteration},{r.aucp!r},{fid},{true}")
    lines.append(f"selected_iteration,{args.criterion},{selected.iteration}")
    out = Path(args.out) if args.out else run_dir / SELECTION_NAME
    out.write_text("\n".join(lines) + "\n")
    print(f"selected iteration {selected.iteration} by {args.criterion}; table at {out}")
    return 0


def _cmd_eval(args) -> int:
    table = ScoreTable.read_csv(args.scores)
    report = evaluate_splits(table)
    payload = {
        "transductive_auc": report.transductive_auc,
        "inductive_auc": report.inductive_auc,
        "transductive_inductive_gap": report.gap,
    }
    if args.roc:
        for split, sets in (("train", ("H", "M")), ("holdout", ("holdout",))):
            subset = table.subset(sets)
            if subset.rows:
                curve = roc_curve(subset.scores(), subset.true_labels())
                path = Path(f"{args.roc}_{split}.dat")
                with open(path, "w") as fh:
                    for f, t in zip(curve.fpr, curve.tpr):
                        fh.write(f"{f:.10g} {t:.10g}\n")
                payload[f"roc_{split}"] = str(path)
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_pipeline(args) -> int:
    config = _collect_experiment(args)
    with _run_lock(Path(config.output_dir)):
        result = run_pipeline(config, resume=args.resume)
    print(
        f"selected iteration {result.selected.iteration}; "
        f"transductive={_fmt(result.split_report.transductive_auc)} "
        f"inductive={_fmt(result.split_report.inductive_auc)}"
    )
    return 0


def _cmd_ablate(args) -> int:
    config = _collect_experiment(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    lambda_values = tuple(float(v) for v in args.lambda_values.split(","))
    modes = tuple(args.modes.split(","))
    with _run_lock(Path(config.output_dir)):
        results = ablate(config, seeds, lambda_values, modes)
    for name, runs in results.items():
        aucs = [r.split_report.inductive_auc for r in runs]
        print(f"{name}: inductive AUC per seed {[_fmt(a) for a in aucs]}")
    return 0


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def build_parser() -> _Parser:
    parser = _Parser(prog="anomap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    spec_defaults = PhantomSpec()
    p = sub.add_parser("phantom", help="build a synthetic slice dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--image-size", type=int, default=spec_defaults.image_size)
    p.add_argument("--slices", type=int, default=spec_defaults.slices_per_subject)
    p.add_argument("--h-size", type=int, default=20)
    p.add_argument("--m-healthy", type=int, default=5)
    p.add_argument("--m-diseased", type=int, default=5)
    p.add_argument("--holdout-healthy", type=int, default=0)
    p.add_argument("--holdout-diseased", type=int, default=0)
    p.add_argument("--lesion-delta", type=float, default=spec_defaults.lesion_intensity_delta)
    p.add_argument("--lesion-radius", type=float, default=spec_defaults.lesion_radius_frac)
    p.add_argument("--noise-sigma", type=float, default=spec_defaults.texture_noise_sigma)
    p.add_argument("--lesion-sign", type=int, default=spec_defaults.lesion_sign, choices=(-1, 1))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_phantom)

    p = sub.add_parser("train", help="adversarial training on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--crop-size", type=int, default=None)
    p.add_argument("--resume", action="store_true")
    _add_training_flags(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("score", help="score subjects with trained weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sets", default="H,M,holdout")
    p.add_argument("--mode", default="additive", choices=("additive", "direct"))
    p.add_argument("--signed", action="store_true")
    p.add_argument("--crop-size", type=int, default=None)
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("select", help="evaluate checkpoints and pick one")
    p.add_argument("--run", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--criterion", default="aucp", choices=("aucp", "fid"))
    p.add_argument("--no-fid", action="store_true")
    p.add_argument("--crop-size", type=int, default=None)
    p.set_defaults(handler=_cmd_select)

    p = sub.add_parser("eval", help="split AUCs and ROC data from a score table")
    p.add_argument("--scores", required=True)
    p.add_argument("--out")
    p.add_argument("--roc", help="path prefix for roc_<split>.dat exports")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("pipeline", help="train, select, evaluate, export")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--criterion", dest="selection_criterion", choices=("aucp", "fid"))
    p.add_argument("--crop-size", dest="crop_size", type=int)
    p.add_argument("--no-fid", action="store_true")
    p.add_argument("--signed", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--fid-dim", dest="fid_dim", type=int)
    p.add_argument("--fid-seed", dest="fid_seed", type=int)
    p.add_argument("--diffmap-exports", dest="n_diffmap_exports", type=int)
    _add_training_flags(p)
    p.set_defaults(handler=_cmd_pipeline)

    p = sub.add_parser("ablate", help="identity-loss and translation-mode sweeps")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--lambda-values", default="1,0")
    p.add_argument("--modes", default="additive,direct")
    p.add_argument("--no-fid", action="store_true")
    _add_training_flags(p)
    p.set_defaults(handler=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.handler(args)
    except SystemExit:
        raise
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
