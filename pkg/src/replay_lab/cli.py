"""Config-driven experiment runner.

One JSON config describes a dataset, a trainer, a list of ablation variants,
and a list of seeds. ``run_matrix`` executes every (variant x seed) cell,
writes each run's artifacts under ``<out>/<variant-slug>/<seed>/``, and
aggregates a top-level ``summary.json``. ``export_plot_data`` turns a results
tree into per-figure CSVs. The module is also the ``replay-lab`` command:

    replay-lab run --config exp.json [--out DIR] [--variant NAME]... [--seed N]...
    replay-lab inspect --checkpoint ckpt_task3.bin
    replay-lab export --results DIR [--out DIR]
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
import traceback
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import inspect_checkpoint
from .data import (Dataset, load_cifar100_binary, load_idx,
                   make_synthetic_blobs, split_into_tasks)
from .errors import ConfigError, ExportError, ReplayLabError
from .metrics import (fmt_float, write_accuracy_matrix_csv,
                      write_distribution_json, write_embedding_csv,
                      write_metrics_csv, write_projection_csv)
from .model import NetworkConfig
from .trainer import (PAPER_VARIANTS, AblationFlags, RunResult, TrainerConfig,
                      run_experiment)

ENV_OUT = "REPLAY_LAB_OUT"


# ---------------------------------------------------------------------------
# config schema


@dataclass
class DatasetSpec:
    """Where the data comes from: synthetic blobs or one of the binary
    formats. Only the keys belonging to the chosen kind are accepted."""

    kind: str = "synthetic"
    # synthetic
    num_classes: int = 10
    dim: int = 64
    samples_per_class: int = 1250
    spread: float = 1.0
    seed: int = 0
    # idx
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    # cifar100
    train_path: str | None = None
    test_path: str | None = None
    downscale_to: int | None = None


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    trainer: TrainerConfig
    network: dict = field(default_factory=dict)
    variants: list[tuple[str, AblationFlags]] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str | None = None


_FLAG_NAMES = [f.name for f in fields(AblationFlags)]
_TRAINER_KEYS = {f.name for f in fields(TrainerConfig)} - {"network", "seed"}
_NETWORK_KEYS = {"perceptual_dims", "fc_dims", "latent_dim", "gate_fraction",
                 "embedding_layer", "internal_replay_level", "reconstruction",
                 "perceptual_activation"}
_DATASET_KEYS = {
    "synthetic": {"kind", "num_classes", "dim", "samples_per_class", "spread",
                  "seed"},
    "idx": {"kind", "train_images", "train_labels", "test_images",
            "test_labels"},
    "cifar100": {"kind", "train_path", "test_path", "downscale_to"},
}


def _type_name(v) -> str:
    return type(v).__name__


def _want_int(path: str, v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"config key {path}: expected an integer, got "
                          f"{v!r} ({_type_name(v)})")
    return v


def _want_number(path: str, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config key {path}: expected a number, got "
                          f"{v!r} ({_type_name(v)})")
    return float(v)


def _want_bool(path: str, v):
    if not isinstance(v, bool):
        raise ConfigError(f"config key {path}: expected a boolean, got "
                          f"{v!r} ({_type_name(v)})")
    return v


def _want_str(path: str, v):
    if not isinstance(v, str):
        raise ConfigError(f"config key {path}: expected a string, got "
                          f"{v!r} ({_type_name(v)})")
    return v


def _want_int_list(path: str, v):
    if not isinstance(v, list):
        raise ConfigError(f"config key {path}: expected a list of integers, "
                          f"got {v!r} ({_type_name(v)})")
    return [_want_int(f"{path}[{i}]", x) for i, x in enumerate(v)]


def _reject_unknown(section: str, obj: dict, allowed) -> None:
    for key in obj:
        path = f"{section}.{key}" if section else key
        if key not in allowed:
            raise ConfigError(f"unknown config key: {path}")


def _coerce(section: str, key: str, value, kind):
    path = f"{section}.{key}" if section else key
    if kind is int:
        return _want_int(path, value)
    if kind is float:
        return _want_number(path, value)
    if kind is bool:
        return _want_bool(path, value)
    if kind is str:
        return _want_str(path, value)
    raise AssertionError(kind)


# per-key scalar types for the sections validated generically
_TRAINER_TYPES = {
    "num_tasks": int, "classes_per_task": int, "epochs_per_task": int,
    "batch_size": int, "replay_batch_size": int, "learning_rate": float,
    "weight_reconstruction": float, "weight_kl": float,
    "weight_classification": float, "weight_distillation": float,
    "si_c": float, "si_xi": float, "distill_temperature": float,
    "internal_replay_level": int, "replay_mix_current": float,
    "prior_init_scale": float, "pretrain_epochs": int, "loglik_samples": int,
}
_TRAINER_NULLABLE = {"replay_batch_size", "internal_replay_level",
                     "replay_mix_current"}
_NETWORK_TYPES = {
    "latent_dim": int, "gate_fraction": float, "embedding_layer": int,
    "internal_replay_level": int, "reconstruction": str,
    "perceptual_activation": str,
}


def _parse_dataset(obj: dict, base_dir: Path) -> DatasetSpec:
    if not isinstance(obj, dict):
        raise ConfigError("config key dataset: expected an object")
    kind = obj.get("kind", "synthetic")
    _want_str("dataset.kind", kind)
    if kind not in _DATASET_KEYS:
        raise ConfigError(f"config key dataset.kind: expected one of "
                          f"{sorted(_DATASET_KEYS)}, got {kind!r}")
    _reject_unknown("dataset", obj, _DATASET_KEYS[kind])
    spec = DatasetSpec(kind=kind)
    if kind == "synthetic":
        for key in ("num_classes", "dim", "samples_per_class", "seed"):
            if key in obj:
                setattr(spec, key, _want_int(f"dataset.{key}", obj[key]))
        if "spread" in obj:
            spec.spread = _want_number("dataset.spread", obj["spread"])
    elif kind == "idx":
        for key in ("train_images", "train_labels", "test_images",
                    "test_labels"):
            if key not in obj:
                raise ConfigError(f"missing required config key: dataset.{key}")
            setattr(spec, key, _resolve_path(f"dataset.{key}",
                                             obj[key], base_dir))
    else:  # cifar100
        for key in ("train_path", "test_path"):
            if key not in obj:
                raise ConfigError(f"missing required config key: dataset.{key}")
            setattr(spec, key, _resolve_path(f"dataset.{key}",
                                             obj[key], base_dir))
        if "downscale_to" in obj and obj["downscale_to"] is not None:
            spec.downscale_to = _want_int("dataset.downscale_to",
                                          obj["downscale_to"])
    return spec


def _resolve_path(path_key: str, value, base_dir: Path) -> str:
    _want_str(path_key, value)
    resolved = Path(value)
    if not resolved.is_absolute():
        resolved = base_dir / resolved
    if not resolved.exists():
        raise ConfigError(f"config key {path_key}: path does not exist: "
                          f"{resolved}")
    return str(resolved)


def _parse_trainer(obj: dict) -> TrainerConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config key trainer: expected an object")
    _reject_unknown("trainer", obj, _TRAINER_KEYS)
    kwargs = {}
    for key, value in obj.items():
        if value is None:
            if key not in _TRAINER_NULLABLE:
                raise ConfigError(f"config key trainer.{key}: null is not "
                                  "allowed")
            kwargs[key] = None
        else:
            kwargs[key] = _coerce("trainer", key, value, _TRAINER_TYPES[key])
    return TrainerConfig(**kwargs)


def _parse_network(obj: dict) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError("config key network: expected an object")
    _reject_unknown("network", obj, _NETWORK_KEYS)
    out = {}
    for key, value in obj.items():
        if key in ("perceptual_dims", "fc_dims"):
            out[key] = _want_int_list(f"network.{key}", value)
        elif value is None and key in ("embedding_layer",
                                       "internal_replay_level"):
            out[key] = None
        else:
            out[key] = _coerce("network", key, value, _NETWORK_TYPES[key])
    return out


def _parse_variants(obj) -> list[tuple[str, AblationFlags]]:
    if obj is None:
        return list(PAPER_VARIANTS.items())
    if not isinstance(obj, list) or not obj:
        raise ConfigError("config key variants: expected a non-empty list")
    out: list[tuple[str, AblationFlags]] = []
    for i, item in enumerate(obj):
        section = f"variants[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"config key {section}: expected an object")
        _reject_unknown(section, item, {"name", "flags"})
        if "name" not in item:
            raise ConfigError(f"missing required config key: {section}.name")
        name = _want_str(f"{section}.name", item["name"])
        flag_obj = item.get("flags", {})
        if not isinstance(flag_obj, dict):
            raise ConfigError(f"config key {section}.flags: expected an object")
        _reject_unknown(f"{section}.flags", flag_obj, _FLAG_NAMES)
        flags = AblationFlags(**{k: _want_bool(f"{section}.flags.{k}", v)
                                 for k, v in flag_obj.items()})
        out.append((name, flags))
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ConfigError(f"duplicate variant names: {dupes}")
    slugs = [variant_slug(n) for n in names]
    if len(set(slugs)) != len(slugs):
        raise ConfigError("variant names collide after slugging: "
                          f"{sorted(slugs)}")
    return out


def parse_config_dict(obj: dict, base_dir: Path | None = None
                      ) -> ExperimentConfig:
    """Validate a decoded config object; unknown keys are rejected by their
    full path (e.g. ``trainer.learning_ratee``)."""
    if not isinstance(obj, dict):
        raise ConfigError("config root: expected a JSON object")
    base_dir = Path.cwd() if base_dir is None else Path(base_dir)
    _reject_unknown("", obj, {"dataset", "trainer", "network", "variants",
                              "seeds", "out"})
    dataset = _parse_dataset(obj.get("dataset", {}), base_dir)
    trainer = _parse_trainer(obj.get("trainer", {}))
    network = _parse_network(obj.get("network", {}))
    variants = _parse_variants(obj.get("variants"))
    if "seeds" in obj:
        seeds = _want_int_list("seeds", obj["seeds"])
        if not seeds:
            raise ConfigError("config key seeds: list must be non-empty")
        bad = [s for s in seeds if s < 0]
        if bad:
            raise ConfigError(f"config key seeds: must be non-negative, got {bad}")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("config key seeds: duplicates are not allowed")
    else:
        seeds = [0]
    out = None
    if obj.get("out") is not None:
        out = _want_str("out", obj["out"])
    return ExperimentConfig(dataset=dataset, trainer=trainer, network=network,
                            variants=variants, seeds=seeds, out=out)


def parse_config(path) -> ExperimentConfig:
    """Read, decode, and validate a JSON config file. Relative data paths
    are resolved against the config file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config_dict(obj, base_dir=path.parent)


def _dataset_to_dict(spec: DatasetSpec) -> dict:
    if spec.kind == "synthetic":
        return {"kind": spec.kind, "num_classes": spec.num_classes,
                "dim": spec.dim, "samples_per_class": spec.samples_per_class,
                "spread": spec.spread, "seed": spec.seed}
    if spec.kind == "idx":
        return {"kind": spec.kind, "train_images": spec.train_images,
                "train_labels": spec.train_labels,
                "test_images": spec.test_images,
                "test_labels": spec.test_labels}
    d = {"kind": spec.kind, "train_path": spec.train_path,
         "test_path": spec.test_path}
    if spec.downscale_to is not None:
        d["downscale_to"] = spec.downscale_to
    return d


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical JSON echo with every default filled; parse -> serialize ->
    parse is a fixed point."""
    trainer = {key: getattr(config.trainer, key) for key in sorted(_TRAINER_KEYS)}
    obj = {
        "dataset": _dataset_to_dict(config.dataset),
        "trainer": trainer,
        "network": config.network,
        "variants": [{"name": name,
                      "flags": {f: getattr(flags, f) for f in _FLAG_NAMES}}
                     for name, flags in config.variants],
        "seeds": config.seeds,
    }
    if config.out is not None:
        obj["out"] = config.out
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# matrix execution


def variant_slug(name: str) -> str:
    """Directory-safe variant name: alphanumeric runs joined by hyphens."""
    parts = re.findall(r"[A-Za-z0-9]+", name)
    if not parts:
        raise ConfigError(f"variant name {name!r} has no usable characters")
    return "-".join(p.lower() for p in parts)


def load_dataset(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    if spec.kind == "synthetic":
        return make_synthetic_blobs(spec.num_classes, spec.dim,
                                    spec.samples_per_class, spec.spread,
                                    spec.seed)
    if spec.kind == "idx":
        train = load_idx(spec.train_images, spec.train_labels, "train")
        test = load_idx(spec.test_images, spec.test_labels, "test")
        return train, test
    train = load_cifar100_binary(spec.train_path, spec.downscale_to, "train")
    test = load_cifar100_binary(spec.test_path, spec.downscale_to, "test")
    return train, test


def _select_variants(config: ExperimentConfig, names: list[str] | None
                     ) -> list[tuple[str, AblationFlags]]:
    if not names:
        return config.variants
    known = dict(config.variants)
    missing = [n for n in names if n not in known]
    if missing:
        raise ConfigError(f"unknown variant names {missing}; config defines "
                          f"{sorted(known)}")
    return [(n, known[n]) for n in names]


def _run_summary(result: RunResult) -> dict:
    row = {
        "mean_retention_ratio": result.mean_metric("retention_ratio"),
        "mean_forgetting_score": result.mean_metric("forgetting_score"),
        "mean_initial_acc": result.mean_metric("initial_acc"),
        "mean_final_acc": result.mean_metric("final_acc"),
        "mean_silhouette": float(np.mean(result.silhouette_per_task)),
        "mean_reconstruction_error": result.reconstruction_error.mean,
    }
    if result.log_likelihood is not None:
        row["mean_log_likelihood"] = result.log_likelihood.mean
    return row


def _write_run_artifacts(result: RunResult, run_dir: Path, echo: str) -> None:
    write_accuracy_matrix_csv(result.accuracy_matrix,
                              run_dir / "accuracy_matrix.csv")
    write_metrics_csv(result.task_metrics, run_dir / "metrics.csv")
    lines = ["task,silhouette"]
    for t, s in enumerate(result.silhouette_per_task):
        lines.append(f"{t + 1},{fmt_float(s)}")
    (run_dir / "silhouette.csv").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")
    if result.log_likelihood is not None:
        write_distribution_json(result.log_likelihood, "log_likelihood",
                                result.variant,
                                run_dir / "loglik_distribution.json")
    write_distribution_json(result.reconstruction_error,
                            "reconstruction_error", result.variant,
                            run_dir / "recon_distribution.json")
    write_embedding_csv(result.embeddings, run_dir / "embeddings.csv")
    write_projection_csv(result.projection, run_dir / "projection.csv")
    (run_dir / "config_echo.json").write_text(echo, encoding="utf-8")
    with open(run_dir / "timings.json", "w", encoding="utf-8") as f:
        json.dump(result.timings, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def run_matrix(config: ExperimentConfig, out_root=None,
               variant_names: list[str] | None = None,
               seeds: list[int] | None = None) -> tuple[dict, list[dict]]:
    """Run every (variant x seed) cell, keep going past failures, and write
    ``summary.json`` plus a failure manifest. Returns (summary, failures)."""
    out_root = Path(out_root if out_root is not None else resolve_out_dir(config))
    variants = _select_variants(config, variant_names)
    run_seeds = config.seeds if seeds is None else seeds
    if not run_seeds:
        raise ConfigError("seeds list must be non-empty")

    train, test = load_dataset(config.dataset)
    needed = config.trainer.num_tasks * config.trainer.classes_per_task
    if needed > train.num_classes:
        raise ConfigError(f"{config.trainer.num_tasks} tasks x "
                          f"{config.trainer.classes_per_task} classes need "
                          f"{needed} classes; dataset has {train.num_classes}")
    network = NetworkConfig(input_dim=train.input_dim,
                            num_classes=train.num_classes,
                            num_tasks=config.trainer.num_tasks,
                            **config.network)
    split = split_into_tasks(train, config.trainer.num_tasks,
                             config.trainer.classes_per_task,
                             test_dataset=test)
    echo = serialize_config(config)

    out_root.mkdir(parents=True, exist_ok=True)
    summary: dict = {"variants": {}}
    failures: list[dict] = []
    for name, flags in variants:
        slug = variant_slug(name)
        per_seed = {}
        for seed in run_seeds:
            run_dir = out_root / slug / str(seed)
            run_dir.mkdir(parents=True, exist_ok=True)
            trainer_cfg = replace(config.trainer, seed=seed, network=network)
            try:
                result = run_experiment(trainer_cfg, flags, train, test,
                                        split=split, out_dir=run_dir,
                                        variant=name)
                _write_run_artifacts(result, run_dir, echo)
                per_seed[str(seed)] = _run_summary(result)
            except Exception as exc:
                failures.append({"variant": name, "seed": seed,
                                 "error": f"{type(exc).__name__}: {exc}"})
                (run_dir / "error.txt").write_text(traceback.format_exc(),
                                                   encoding="utf-8")
        entry: dict = {"dir": slug, "seeds": list(run_seeds),
                       "per_seed": per_seed}
        if per_seed:
            keys = sorted({k for row in per_seed.values() for k in row})
            for key in keys:
                vals = [row[key] for row in per_seed.values() if key in row]
                entry[key] = float(np.mean(vals))
        summary["variants"][name] = entry
    if failures:
        summary["failures"] = failures
        with open(out_root / "failures.json", "w", encoding="utf-8") as f:
            json.dump(failures, f, sort_keys=True, separators=(",", ":"))
            f.write("\n")
    with open(out_root / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    return summary, failures


def resolve_out_dir(config: ExperimentConfig, cli_out: str | None = None) -> str:
    """Precedence: --out flag, config "out", REPLAY_LAB_OUT, ./results."""
    if cli_out:
        return cli_out
    if config.out:
        return config.out
    return os.environ.get(ENV_OUT) or "results"


# ---------------------------------------------------------------------------
# plot-data export


def _read_summary(results_root: Path) -> dict:
    path = results_root / "summary.json"
    if not path.exists():
        raise ExportError(f"missing summary.json under {results_root}")
    return json.loads(path.read_text(encoding="utf-8"))


def _read_metric_columns(results_root: Path, variant: str, slug: str,
                         seeds: list[str], column: str) -> list[float | None]:
    """Per-task values of one metrics.csv column, averaged across seeds."""
    per_seed_rows = []
    for seed in seeds:
        path = results_root / slug / seed / "metrics.csv"
        if not path.exists():
            raise ExportError(f"missing metric {column} for variant "
                              f"{variant!r} seed {seed}: {path} not found")
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.DictReader(f))
        if rows and column not in rows[0]:
            raise ExportError(f"missing metric {column} in {path}")
        per_seed_rows.append([r[column] for r in rows])
    lengths = {len(r) for r in per_seed_rows}
    if len(lengths) != 1:
        raise ExportError(f"inconsistent task counts across seeds for "
                          f"variant {variant!r}")
    out: list[float | None] = []
    for t in range(lengths.pop()):
        vals = [float(r[t]) for r in per_seed_rows if r[t] != ""]
        out.append(float(np.mean(vals)) if vals else None)
    return out


def _write_per_task_csv(path: Path, columns: dict[str, list[float | None]]
                        ) -> None:
    """table: task rows then a "mean" row; one column per variant."""
    names = list(columns)
    num_tasks = len(next(iter(columns.values())))
    lines = ["task," + ",".join(names)]
    for t in range(num_tasks):
        cells = ["" if columns[n][t] is None else fmt_float(columns[n][t])
                 for n in names]
        lines.append(f"{t + 1}," + ",".join(cells))
    means = []
    for n in names:
        vals = [v for v in columns[n] if v is not None]
        means.append(fmt_float(float(np.mean(vals))) if vals else "")
    lines.append("mean," + ",".join(means))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_silhouette(results_root: Path, variant: str, slug: str,
                     seeds: list[str]) -> list[float | None]:
    per_seed = []
    for seed in seeds:
        path = results_root / slug / seed / "silhouette.csv"
        if not path.exists():
            raise ExportError(f"missing metric silhouette for variant "
                              f"{variant!r} seed {seed}: {path} not found")
        with open(path, encoding="utf-8", newline="") as f:
            per_seed.append([float(r["silhouette"])
                             for r in csv.DictReader(f)])
    return [float(np.mean([r[t] for r in per_seed]))
            for t in range(len(per_seed[0]))]


def _export_histogram(results_root: Path, out_dir: Path, variant: str,
                      slug: str, seed: str, which: str) -> list[Path]:
    src = results_root / slug / seed / f"{which}_distribution.json"
    if not src.exists():
        if which == "loglik":
            return []  # likelihood diagnostics were disabled for this run
        raise ExportError(f"missing metric {which} distribution for variant "
                          f"{variant!r} seed {seed}: {src} not found")
    payload = json.loads(src.read_text(encoding="utf-8"))
    edges = payload["histogram"]["edges"]
    counts = payload["histogram"]["counts"]
    lines = ["bin_left,bin_right,count"]
    for i, c in enumerate(counts):
        lines.append(f"{fmt_float(edges[i])},{fmt_float(edges[i + 1])},{c}")
    dst = out_dir / f"{which}_histogram_{slug}_seed{seed}.csv"
    dst.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [dst]


def export_plot_data(results_root, out_dir=None) -> list[Path]:
    """Regenerate one CSV per figure panel from a results tree; returns the
    files written."""
    results_root = Path(results_root)
    out_dir = Path(out_dir) if out_dir is not None else results_root / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = _read_summary(results_root)
    variants = summary.get("variants", {})
    if not variants:
        raise ExportError("summary.json lists no variants")

    written: list[Path] = []
    per_task_files = {
        "retention_ratio": "retention_per_task.csv",
        "forgetting_score": "forgetting_per_task.csv",
        "initial_acc": "initial_acc_per_task.csv",
        "final_acc": "final_acc_per_task.csv",
    }
    completed = {name: entry for name, entry in variants.items()
                 if entry.get("per_seed")}
    if not completed:
        raise ExportError("no completed runs found in summary.json")
    for column, filename in per_task_files.items():
        table = {}
        for name, entry in completed.items():
            seeds = sorted(entry["per_seed"], key=int)
            table[name] = _read_metric_columns(results_root, name,
                                               entry["dir"], seeds, column)
        path = out_dir / filename
        _write_per_task_csv(path, table)
        written.append(path)

    sil_table = {}
    for name, entry in completed.items():
        seeds = sorted(entry["per_seed"], key=int)
        sil_table[name] = _read_silhouette(results_root, name, entry["dir"],
                                           seeds)
    path = out_dir / "silhouette_per_task.csv"
    _write_per_task_csv(path, sil_table)
    written.append(path)

    for name, entry in completed.items():
        for seed in sorted(entry["per_seed"], key=int):
            written += _export_histogram(results_root, out_dir, name,
                                         entry["dir"], seed, "loglik")
            written += _export_histogram(results_root, out_dir, name,
                                         entry["dir"], seed, "recon")
            src = results_root / entry["dir"] / seed / "projection.csv"
            if not src.exists():
                raise ExportError(f"missing metric projection for variant "
                                  f"{name!r} seed {seed}: {src} not found")
            dst = out_dir / f"projection_{entry['dir']}_seed{seed}.csv"
            dst.write_bytes(src.read_bytes())
            written.append(dst)
    return written


# ---------------------------------------------------------------------------
# command line


def _cmd_run(args) -> int:
    config = parse_config(args.config)
    out_root = resolve_out_dir(config, args.out)
    summary, failures = run_matrix(config, out_root,
                                   variant_names=args.variant or None,
                                   seeds=args.seed or None)
    for name, entry in summary["variants"].items():
        for seed, row in entry["per_seed"].items():
            ret = row.get("mean_retention_ratio")
            ret_txt = "n/a" if ret is None else f"{ret:.4f}"
            print(f"{name} seed {seed}: retention {ret_txt}, "
                  f"final acc {row['mean_final_acc']:.4f}")
    print(f"summary written to {Path(out_root) / 'summary.json'}")
    if failures:
        print(f"{len(failures)} run(s) failed; see "
              f"{Path(out_root) / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def _cmd_inspect(args) -> int:
    info = inspect_checkpoint(args.checkpoint)
    print(json.dumps(info["meta"], sort_keys=True, separators=(",", ":")))
    for group in info["groups"]:
        dims = "x".join(str(d) for d in group["shape"])
        print(f"{group['name']} {dims}")
    return 0


def _cmd_export(args) -> int:
    written = export_plot_data(args.results, args.out)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="replay-lab",
        description="Continual-learning replay experiments: run ablation "
                    "matrices, inspect checkpoints, export plot data.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment matrix from a config")
    run.add_argument("--config", required=True, help="JSON experiment config")
    run.add_argument("--out", help="output directory (default: config 'out', "
                     f"then ${ENV_OUT}, then ./results)")
    run.add_argument("--variant", action="append", default=[],
                     help="run only this variant (repeatable)")
    run.add_argument("--seed", action="append", type=int, default=[],
                     help="override the config's seed list (repeatable)")
    run.set_defaults(func=_cmd_run)

    ins = sub.add_parser("inspect", help="print a checkpoint's config echo "
                         "and parameter-group shapes")
    ins.add_argument("--checkpoint", required=True)
    ins.set_defaults(func=_cmd_inspect)

    exp = sub.add_parser("export", help="regenerate plot CSVs from results")
    exp.add_argument("--results", required=True)
    exp.add_argument("--out", help="plot-data directory (default: "
                     "<results>/plots)")
    exp.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ReplayLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
