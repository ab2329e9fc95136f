"""JSON-configured experiment runner and the ``fedbalance`` console command.

Configs are strict: any key the schema does not define is an error, so a
typo like ``eval_gaps`` fails loudly instead of silently running with the
default.  Outputs (metrics.csv, summary.csv, violin.csv, run_manifest.json)
are written with fixed formatting and "\n" newlines, so two runs of the
same config produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError
from .crossval import ExperimentPlan, MetricsRecord, MetricsTable, run_experiment
from .dataset import (
    DEFAULT_CLASS_COUNTS,
    DEFAULT_FEATURE_DIM,
    Dataset,
    generate_synthetic,
    load_csv,
    make_synthetic_spec,
)
from .federation import TrainHyper
from .gcae import ArchSpec, ConvStage
from .metrics import aggregate_over_folds
from .resampling import SAMPLER_NAMES, SamplerSpec, SvmParams
from .seeding import derive_seed


@dataclass(frozen=True)
class DataSource:
    kind: str
    class_counts: tuple[int, ...] = tuple(DEFAULT_CLASS_COUNTS)
    dim: int = DEFAULT_FEATURE_DIM
    scale: float = 1.0
    path: str | None = None
    label_column: str | int | None = None


@dataclass(frozen=True)
class ArchOverride:
    stages: tuple[tuple[int, int, int], ...] = ((8, 5, 2), (16, 5, 2))
    latent_dim: int = 16
    mlp_hidden: tuple[int, ...] = (32,)
    recon_weight: float = 1.0
    pred_weight: float = 1.0


@dataclass(frozen=True)
class SamplerParams:
    k_neighbors: int = 5
    m_neighbors: int = 10
    enn_k: int = 3
    svm_learning_rate: float = 0.01
    svm_epochs: int = 200
    svm_regularization: float = 1e-3


@dataclass(frozen=True)
class Config:
    seed: int
    dataset: DataSource
    num_clients: int
    samplers: tuple[str, ...]
    num_folds: int = 5
    global_rounds: int = 200
    personalization_rounds: int = 200
    eval_gap: int = 1
    concentration: float = 0.5
    personalize_full_model: bool = True
    hyper: TrainHyper = field(default_factory=TrainHyper)
    sampler_params: SamplerParams = field(default_factory=SamplerParams)
    arch: ArchOverride | None = None
    output_dir: str = "results"


def _unknown_keys(obj: dict, allowed: set[str], where: str):
    extra = set(obj) - allowed
    if extra:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")


def _get_int(obj: dict, key: str, default=None, minimum=None, where="config"):
    if key not in obj:
        if default is None:
            raise ValueError(f"{where}: missing required key {key!r}")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"{where}.{key} must be an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ValueError(f"{where}.{key} must be >= {minimum}, got {v}")
    return v


def _get_float(obj: dict, key: str, default, where="config"):
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


def _get_bool(obj: dict, key: str, default, where="config"):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, bool):
        raise ValueError(f"{where}.{key} must be true or false, got {v!r}")
    return v


def _parse_dataset(obj) -> DataSource:
    if not isinstance(obj, dict):
        raise ValueError("config.dataset must be an object")
    kind = obj.get("kind")
    if kind == "synthetic":
        _unknown_keys(obj, {"kind", "class_counts", "dim", "scale"}, "config.dataset")
        counts = obj.get("class_counts", list(DEFAULT_CLASS_COUNTS))
        if (not isinstance(counts, list) or len(counts) < 2
                or any(isinstance(c, bool) or not isinstance(c, int) or c < 1 for c in counts)):
            raise ValueError("dataset.class_counts must be a list of >= 2 positive integers")
        return DataSource(
            kind="synthetic",
            class_counts=tuple(counts),
            dim=_get_int(obj, "dim", DEFAULT_FEATURE_DIM, minimum=1, where="config.dataset"),
            scale=_get_float(obj, "scale", 1.0, where="config.dataset"),
        )
    if kind == "csv":
        _unknown_keys(obj, {"kind", "path", "label_column"}, "config.dataset")
        path = obj.get("path")
        if not isinstance(path, str) or not path:
            raise ValueError("dataset.path must be a non-empty string")
        label_column = obj.get("label_column", "label")
        if isinstance(label_column, bool) or not isinstance(label_column, (str, int)):
            raise ValueError("dataset.label_column must be a column name or index")
        return DataSource(kind="csv", path=path, label_column=label_column)
    raise ValueError(f"dataset.kind must be 'synthetic' or 'csv', got {kind!r}")


def _parse_hyper(obj) -> TrainHyper:
    if not isinstance(obj, dict):
        raise ValueError("config.hyper must be an object")
    allowed = {"learning_rate", "batch_size", "local_epochs", "train_cost", "send_cost"}
    _unknown_keys(obj, allowed, "config.hyper")
    return TrainHyper(
        learning_rate=_get_float(obj, "learning_rate", 0.01, where="config.hyper"),
        batch_size=_get_int(obj, "batch_size", 32, minimum=1, where="config.hyper"),
        local_epochs=_get_int(obj, "local_epochs", 1, minimum=1, where="config.hyper"),
        train_cost=_get_float(obj, "train_cost", 0.0, where="config.hyper"),
        send_cost=_get_float(obj, "send_cost", 0.0, where="config.hyper"),
    )


def _parse_sampler_params(obj) -> SamplerParams:
    if not isinstance(obj, dict):
        raise ValueError("config.sampler_params must be an object")
    allowed = {"k_neighbors", "m_neighbors", "enn_k",
               "svm_learning_rate", "svm_epochs", "svm_regularization"}
    _unknown_keys(obj, allowed, "config.sampler_params")
    w = "config.sampler_params"
    return SamplerParams(
        k_neighbors=_get_int(obj, "k_neighbors", 5, minimum=1, where=w),
        m_neighbors=_get_int(obj, "m_neighbors", 10, minimum=1, where=w),
        enn_k=_get_int(obj, "enn_k", 3, minimum=1, where=w),
        svm_learning_rate=_get_float(obj, "svm_learning_rate", 0.01, where=w),
        svm_epochs=_get_int(obj, "svm_epochs", 200, minimum=1, where=w),
        svm_regularization=_get_float(obj, "svm_regularization", 1e-3, where=w),
    )


def _parse_arch(obj) -> ArchOverride:
    if not isinstance(obj, dict):
        raise ValueError("config.arch must be an object")
    allowed = {"stages", "latent_dim", "mlp_hidden", "recon_weight", "pred_weight"}
    _unknown_keys(obj, allowed, "config.arch")
    default = ArchOverride()
    stages = obj.get("stages", [list(s) for s in default.stages])
    if (not isinstance(stages, list) or not stages
            or any(not isinstance(s, list) or len(s) != 3
                   or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in s)
                   for s in stages)):
        raise ValueError("arch.stages must be a list of [channels, kernel, pool] triples")
    hidden = obj.get("mlp_hidden", list(default.mlp_hidden))
    if (not isinstance(hidden, list)
            or any(isinstance(v, bool) or not isinstance(v, int) or v < 1 for v in hidden)):
        raise ValueError("arch.mlp_hidden must be a list of positive integers")
    recon = _get_float(obj, "recon_weight", default.recon_weight, where="config.arch")
    pred = _get_float(obj, "pred_weight", default.pred_weight, where="config.arch")
    if recon < 0 or pred < 0 or recon + pred <= 0:
        raise ValueError("arch loss weights must be non-negative with a positive sum")
    return ArchOverride(
        stages=tuple(tuple(s) for s in stages),
        latent_dim=_get_int(obj, "latent_dim", default.latent_dim, minimum=1, where="config.arch"),
        mlp_hidden=tuple(hidden),
        recon_weight=recon,
        pred_weight=pred,
    )


_TOP_KEYS = {
    "seed", "dataset", "num_clients", "samplers", "num_folds", "global_rounds",
    "personalization_rounds", "eval_gap", "concentration", "personalize_full_model",
    "hyper", "sampler_params", "arch", "output_dir",
}


def parse_config(obj: dict) -> Config:
    """Validate a decoded JSON object into a Config; strict about keys."""
    if not isinstance(obj, dict):
        raise ValueError("config root must be a JSON object")
    _unknown_keys(obj, _TOP_KEYS, "config")
    for key in ("seed", "dataset", "num_clients", "samplers"):
        if key not in obj:
            raise ValueError(f"config: missing required key {key!r}")
    samplers = obj["samplers"]
    if not isinstance(samplers, list) or not samplers:
        raise ValueError("config.samplers must be a non-empty list")
    for name in samplers:
        if name not in SAMPLER_NAMES:
            raise ValueError(f"unknown sampler {name!r}; valid: {', '.join(SAMPLER_NAMES)}")
    if len(set(samplers)) != len(samplers):
        raise ValueError("config.samplers contains duplicates")
    concentration = _get_float(obj, "concentration", 0.5)
    if concentration <= 0:
        raise ValueError("config.concentration must be positive")
    output_dir = obj.get("output_dir", "results")
    if not isinstance(output_dir, str) or not output_dir:
        raise ValueError("config.output_dir must be a non-empty string")
    return Config(
        seed=_get_int(obj, "seed", minimum=0),
        dataset=_parse_dataset(obj["dataset"]),
        num_clients=_get_int(obj, "num_clients", minimum=2),
        samplers=tuple(samplers),
        num_folds=_get_int(obj, "num_folds", 5, minimum=2),
        global_rounds=_get_int(obj, "global_rounds", 200, minimum=1),
        personalization_rounds=_get_int(obj, "personalization_rounds", 200, minimum=1),
        eval_gap=_get_int(obj, "eval_gap", 1, minimum=1),
        concentration=concentration,
        personalize_full_model=_get_bool(obj, "personalize_full_model", True),
        hyper=_parse_hyper(obj.get("hyper", {})),
        sampler_params=_parse_sampler_params(obj.get("sampler_params", {})),
        arch=_parse_arch(obj["arch"]) if "arch" in obj else None,
        output_dir=output_dir,
    )


def load_config(path) -> Config:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(obj)


def config_to_dict(config: Config) -> dict:
    """Canonical JSON-ready form; parse_config round-trips it exactly."""
    if config.dataset.kind == "synthetic":
        dataset = {
            "kind": "synthetic",
            "class_counts": list(config.dataset.class_counts),
            "dim": config.dataset.dim,
            "scale": config.dataset.scale,
        }
    else:
        dataset = {
            "kind": "csv",
            "path": config.dataset.path,
            "label_column": config.dataset.label_column,
        }
    out = {
        "seed": config.seed,
        "dataset": dataset,
        "num_clients": config.num_clients,
        "samplers": list(config.samplers),
        "num_folds": config.num_folds,
        "global_rounds": config.global_rounds,
        "personalization_rounds": config.personalization_rounds,
        "eval_gap": config.eval_gap,
        "concentration": config.concentration,
        "personalize_full_model": config.personalize_full_model,
        "output_dir": config.output_dir,
        "hyper": {
            "learning_rate": config.hyper.learning_rate,
            "batch_size": config.hyper.batch_size,
            "local_epochs": config.hyper.local_epochs,
            "train_cost": config.hyper.train_cost,
            "send_cost": config.hyper.send_cost,
        },
        "sampler_params": {
            "k_neighbors": config.sampler_params.k_neighbors,
            "m_neighbors": config.sampler_params.m_neighbors,
            "enn_k": config.sampler_params.enn_k,
            "svm_learning_rate": config.sampler_params.svm_learning_rate,
            "svm_epochs": config.sampler_params.svm_epochs,
            "svm_regularization": config.sampler_params.svm_regularization,
        },
    }
    if config.arch is not None:
        out["arch"] = {
            "stages": [list(s) for s in config.arch.stages],
            "latent_dim": config.arch.latent_dim,
            "mlp_hidden": list(config.arch.mlp_hidden),
            "recon_weight": config.arch.recon_weight,
            "pred_weight": config.arch.pred_weight,
        }
    return out


def build_dataset(config: Config) -> Dataset:
    src = config.dataset
    if src.kind == "synthetic":
        spec = make_synthetic_spec(src.class_counts, src.dim, src.scale, seed=config.seed)
        return generate_synthetic(spec, derive_seed(config.seed, "data"))
    return load_csv(src.path, src.label_column)


def build_plan(config: Config, ds: Dataset, work_dir) -> ExperimentPlan:
    sp = config.sampler_params
    svm = SvmParams(learning_rate=sp.svm_learning_rate, epochs=sp.svm_epochs,
                    regularization=sp.svm_regularization)
    samplers = tuple(
        SamplerSpec(kind=name, k_neighbors=sp.k_neighbors, m_neighbors=sp.m_neighbors,
                    enn_k=sp.enn_k, svm=svm)
        for name in config.samplers
    )
    arch = None
    if config.arch is not None:
        arch = ArchSpec(
            input_len=ds.num_features,
            num_classes=ds.num_classes,
            stages=tuple(ConvStage(*s) for s in config.arch.stages),
            latent_dim=config.arch.latent_dim,
            mlp_hidden=config.arch.mlp_hidden,
            recon_weight=config.arch.recon_weight,
            pred_weight=config.arch.pred_weight,
        )
    return ExperimentPlan(
        dataset=ds,
        num_clients=config.num_clients,
        samplers=samplers,
        work_dir=Path(work_dir),
        num_folds=config.num_folds,
        global_rounds=config.global_rounds,
        personalization_rounds=config.personalization_rounds,
        eval_gap=config.eval_gap,
        master_seed=config.seed,
        concentration=config.concentration,
        arch=arch,
        hyper=config.hyper,
        personalize_full_model=config.personalize_full_model,
    )


_METRIC_COLUMNS = ("test_accuracy", "test_auc", "std_test_accuracy", "std_test_auc", "train_loss")


def _write_metrics_csv(path: Path, records: list[MetricsRecord]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("fold", "sampler", "round") + _METRIC_COLUMNS)
        for r in records:
            writer.writerow([r.fold, r.sampler, r.round]
                            + [f"{getattr(r, c):.6f}" for c in _METRIC_COLUMNS])


def _write_summary_csv(path: Path, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("sampler", "round") + _METRIC_COLUMNS)
        for row in rows:
            writer.writerow([row["sampler"], row["round"]]
                            + [f"{row[c]:.6f}" for c in _METRIC_COLUMNS])


def _write_violin_csv(path: Path, records: list[MetricsRecord], sampler_order: tuple[str, ...]):
    rank = {name: i for i, name in enumerate(sampler_order)}
    ordered = sorted(records, key=lambda r: (rank[r.sampler], r.fold, r.round))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("sampler", "fold", "round", "std_test_accuracy"))
        for r in ordered:
            writer.writerow([r.sampler, r.fold, r.round, f"{r.std_test_accuracy:.6f}"])


def write_outputs(table: MetricsTable, config: Config, output_dir: Path):
    output_dir.mkdir(parents=True, exist_ok=True)
    _write_metrics_csv(output_dir / "metrics.csv", table.records)
    _write_summary_csv(output_dir / "summary.csv", aggregate_over_folds(table.records))
    _write_violin_csv(output_dir / "violin.csv", table.records, config.samplers)
    manifest = {
        "tool": "fedbalance",
        "version": __version__,
        "config": config_to_dict(config),
        "num_records": len(table),
    }
    with open(output_dir / "run_manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run(config: Config, output_dir=None) -> MetricsTable:
    """Execute the full experiment and write all output files.

    ``output_dir`` overrides the config's own ``output_dir`` when given."""
    output_dir = Path(output_dir if output_dir is not None else config.output_dir)
    ds = build_dataset(config)
    plan = build_plan(config, ds, output_dir / "checkpoints")
    table = run_experiment(plan)
    write_outputs(table, config, output_dir)
    return table


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedbalance",
        description="Federated resampling testbench: global FedAvg training, "
                    "latent-space class balancing, per-client personalization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("--config", required=True, help="path to the JSON config file")
    run_p.add_argument("--output", default=None,
                       help="output directory (default: the config's output_dir)")
    run_p.add_argument("--seed", type=int, default=None, help="override config seed")
    run_p.add_argument("--folds", type=int, default=None, help="override config num_folds")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.folds is not None:
            config = replace(config, num_folds=args.folds)
        out_dir = args.output if args.output is not None else config.output_dir
        table = run(config, out_dir)
    except (ValueError, RuntimeError, FloatingPointError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(table)} metric records to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
