"""End-to-end experiment protocol: split, scale, DCT, train, select, extract,
cluster, score, aggregate over realizations, and write artifacts."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from isvae.clustering import FEATURE_SPACES, kmeans, run_clusterer, write_assignment
from isvae.datagen import (
    Dataset,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    read_csv,
    split_indices,
    standard_scale,
    to_spectrum,
)
from isvae.metrics import MetricReport, score
from isvae.model import Checkpoint, ModelConfig, PRESETS
from isvae.training import TrainConfig, extract_features, train

log = logging.getLogger(__name__)

METRIC_KEYS = [("v", "v_score"), ("h", "homogeneity"), ("c", "completeness"), ("sil", "silhouette"), ("ch", "calinski_harabasz")]
RESULT_COLUMNS = ["variant", "J", "feature_space", "clusterer"] + [f"{m}_{s}" for m, _ in METRIC_KEYS for s in ("mean", "std")]
MODEL_SPACES = ("f0", "f0_extended", "latent_z")
RAW_SPACES = ("raw_time", "raw_dct")


class ConfigError(ValueError):
    """Raised for experiment configurations that cannot be run."""


@dataclass
class ClustererSpec:
    method: str = "kmeans"
    params: dict = field(default_factory=dict)
    name: str | None = None  # table label; defaults to the method

    def __post_init__(self):
        self.name = self.name or self.method


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/experiment"
    synthetic: dict | None = None
    csv_path: str | None = None
    split: dict = field(default_factory=dict)
    scaling: str = "standard"  # time-domain scaler fitted on train: "standard" or "none"
    spectrum_norm: str | None = "ortho"
    preset: str = "synthetic"
    J_values: list[int] = field(default_factory=lambda: [2])
    sigma: float = 15.0
    K: int = 2
    decoder_kinds: list[str] = field(default_factory=lambda: ["vanilla"])
    model_overrides: dict = field(default_factory=dict)
    variants: list[str] = field(default_factory=lambda: ["isvae", "vae"])
    train: dict = field(default_factory=dict)
    clusterers: list[dict] = field(default_factory=lambda: [{"method": "kmeans"}])
    feature_spaces: list[str] = field(default_factory=lambda: list(FEATURE_SPACES))
    n_realizations: int = 6
    n_baseline_realizations: int = 100
    base_seed: int = 0
    selection: str = "val_vscore"  # or "stop", "final"
    n_clusters: int | None = None
    n_workers: int = 1

    def validate(self) -> None:
        if (self.synthetic is None) == (self.csv_path is None):
            raise ConfigError("exactly one of 'synthetic' or 'csv_path' must be given")
        if self.n_realizations < 1 or self.n_baseline_realizations < 1:
            raise ConfigError("realization counts must be at least 1")
        if not self.J_values or not self.decoder_kinds or not self.clusterers or not self.feature_spaces:
            raise ConfigError("grids must be nonempty")
        unknown = set(self.feature_spaces) - set(FEATURE_SPACES)
        if unknown:
            raise ConfigError(f"unknown feature spaces {sorted(unknown)}")
        if set(self.variants) - {"isvae", "vae"}:
            raise ConfigError(f"unknown variants {self.variants}")
        if self.selection not in ("val_vscore", "stop", "final"):
            raise ConfigError(f"unknown selection rule {self.selection!r}")
        specs = [ClustererSpec(**c) for c in self.clusterers]
        if any(c.method not in ("kmeans", "dbscan", "spectral") for c in specs):
            raise ConfigError(f"unknown clusterer in {self.clusterers}")
        if len({c.name for c in specs}) != len(specs):
            raise ConfigError("clusterer names must be unique")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config fields {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        return cls.from_dict(json.loads(text))


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.synthetic is not None:
        return generate_synthetic(SyntheticSpec(**cfg.synthetic))
    return read_csv(cfg.csv_path)


@dataclass
class Partitions:
    """Scaled time-domain and spectral train/val/test sets of one realization."""

    indices: dict[str, np.ndarray]
    time: dict[str, Dataset]
    spectrum: dict[str, Dataset]


def prepare(dataset: Dataset, cfg: ExperimentConfig, seed: int) -> Partitions:
    split_spec = SplitSpec(**{**cfg.split, "seed": seed})
    idx = dict(zip(("train", "val", "test"), split_indices(len(dataset), split_spec)))
    parts = {k: dataset.subset(v) for k, v in idx.items()}
    if dataset.domain == "spectrum":
        return Partitions(idx, {}, parts)
    if cfg.scaling == "standard":
        tr, (va, te), _ = standard_scale(parts["train"], [parts["val"], parts["test"]])
        parts = {"train": tr, "val": va, "test": te}
    elif cfg.scaling != "none":
        raise ConfigError(f"unknown scaling {cfg.scaling!r}")
    spectra = {k: to_spectrum(v, cfg.spectrum_norm) for k, v in parts.items()}
    return Partitions(idx, parts, spectra)


def _n_clusters(cfg: ExperimentConfig, labels) -> int | None:
    if cfg.n_clusters is not None:
        return cfg.n_clusters
    return None if labels is None else len(np.unique(labels))


def _cluster_rows(cfg, variant, J, space, features, true_labels, k, seed, out_dir: Path | None, rows):
    for spec_d in cfg.clusterers:
        spec = ClustererSpec(**spec_d)
        params = dict(spec.params)
        if spec.method in ("kmeans", "spectral") and k is None:
            raise ConfigError("k is unknown: set n_clusters or provide labels")
        pred = run_clusterer(spec.method, features, k=k, seed=seed, **params)
        report = score(features, pred, true_labels)
        if out_dir is not None:
            write_assignment(out_dir / f"assign_{space}_{spec.name}.csv", pred)
        rows.append({"variant": variant, "J": J, "feature_space": space, "clusterer": spec.name, **asdict(report)})


def write_features(path: Path, features: np.ndarray, labels=None, extra: dict | None = None) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        cols = [f"x{i}" for i in range(features.shape[1])]
        extra = extra or {}
        w.writerow(["index", *extra, *cols] + (["label"] if labels is not None else []))
        for i, row in enumerate(features):
            vals = [i, *(v[i] for v in extra.values()), *(repr(float(a)) for a in row)]
            if labels is not None:
                vals.append(int(labels[i]))
            w.writerow(vals)


def _select(result, rule: str) -> tuple[Checkpoint, int | None]:
    if rule == "val_vscore":
        if result.best_checkpoint is None:
            raise ConfigError("validation V-score selection needs a labeled validation set")
        return result.best_checkpoint, result.best_epoch
    if rule == "stop" and result.stop_checkpoint is not None:
        return result.stop_checkpoint, result.stop_epoch
    return result.checkpoint, len(result.trace)


def model_variants(cfg: ExperimentConfig) -> list[tuple[str, str, int | None, str | None]]:
    """(row variant name, model variant, J, decoder kind) for the model grid."""
    out = []
    if "isvae" in cfg.variants and set(cfg.feature_spaces) & set(MODEL_SPACES):
        for kind in cfg.decoder_kinds:
            for J in cfg.J_values:
                out.append((f"isvae-{kind}", "isvae", J, kind))
    if "vae" in cfg.variants and "latent_z" in cfg.feature_spaces:
        out.append(("vae", "vae", None, None))
    return out


def run_realization(cfg: ExperimentConfig, r: int, dataset: Dataset | None = None) -> dict:
    """Train and score every model variant for realization ``r``; returns its JSON record."""
    dataset = dataset if dataset is not None else load_dataset(cfg)
    seed = cfg.base_seed + r
    parts = prepare(dataset, cfg, seed)
    tr, va, te = (parts.spectrum[k] for k in ("train", "val", "test"))
    if cfg.selection == "val_vscore" and va.labels is None:
        raise ConfigError("validation V-score selection needs labels")
    k = _n_clusters(cfg, dataset.labels)
    rdir = Path(cfg.output_dir) / f"realization_{r:03d}"
    rdir.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    all_spec = Dataset(
        np.concatenate([tr.signals, va.signals, te.signals]),
        None if tr.labels is None else np.concatenate([tr.labels, va.labels, te.labels]),
        "spectrum",
    )
    partition_col = ["train"] * len(tr) + ["val"] * len(va) + ["test"] * len(te)
    index_col = np.concatenate([parts.indices["train"], parts.indices["val"], parts.indices["test"]])

    for row_variant, model_variant, J, kind in model_variants(cfg):
        tag = row_variant if J is None else f"{row_variant}_J{J}"
        vdir = rdir / tag
        vdir.mkdir(exist_ok=True)
        try:
            mcfg = ModelConfig(
                D=dataset.D,
                J=J if J is not None else cfg.J_values[0],
                sigma=cfg.sigma,
                K=cfg.K,
                decoder_kind=kind or "vanilla",
                **{**PRESETS[cfg.preset], **cfg.model_overrides},
            )
            tcfg = TrainConfig(**{**cfg.train, "seed": seed})
            result = train(mcfg, tcfg, tr, va if va.labels is not None else None, variant=model_variant)
            ckpt, epoch = _select(result, cfg.selection)
            ckpt.save(vdir / "checkpoint.npz")
            result.trace.write_csv(vdir / "trace.csv")
            result.trace.write_class_csv(vdir / "trace_classes.csv")
            feats = extract_features(ckpt, te, seed=seed)
            spaces = {"latent_z": feats.z}
            if feats.f0 is not None:
                spaces.update(f0=feats.f0, f0_extended=feats.extended)
                full = extract_features(ckpt, all_spec, seed=seed)
                write_features(
                    vdir / "features_all_f0.csv",
                    full.f0,
                    all_spec.labels,
                    {"source_index": index_col, "partition": partition_col},
                )
            for space in cfg.feature_spaces:
                if space not in spaces:
                    continue
                write_features(vdir / f"features_{space}.csv", spaces[space], te.labels)
                _cluster_rows(cfg, row_variant, J, space, spaces[space], te.labels, k, seed, vdir, rows)
            (vdir / "selection.json").write_text(json.dumps({"epoch": epoch, "stop_epoch": result.stop_epoch, "best_epoch": result.best_epoch}))
        except ConfigError:
            raise
        except Exception as exc:  # a failed run is reported and excluded, never averaged
            log.warning("realization %d, %s failed: %s", r, tag, exc)
            failures.append({"realization": r, "variant": tag, "error": repr(exc)})
    record = {"realization": r, "seed": seed, "rows": rows, "failures": failures}
    (rdir / "metrics.json").write_text(json.dumps(_jsonable(record), indent=1, sort_keys=True))
    return record


def run_baseline_realization(cfg: ExperimentConfig, r: int, dataset: Dataset | None = None) -> dict:
    """Raw time and raw DCT features clustered on the test partition (no training)."""
    dataset = dataset if dataset is not None else load_dataset(cfg)
    seed = cfg.base_seed + r
    parts = prepare(dataset, cfg, seed)
    k = _n_clusters(cfg, dataset.labels)
    bdir = Path(cfg.output_dir) / "baselines" / f"realization_{r:03d}"
    bdir.mkdir(parents=True, exist_ok=True)
    rows = []
    te = parts.spectrum["test"]
    sources = {"raw_dct": te.signals}
    if parts.time:
        sources["raw_time"] = parts.time["test"].signals
    for space in RAW_SPACES:
        if space in cfg.feature_spaces and space in sources:
            _cluster_rows(cfg, "baseline", None, space, sources[space], te.labels, k, seed, bdir, rows)
    record = {"realization": r, "seed": seed, "rows": rows, "failures": []}
    (bdir / "metrics.json").write_text(json.dumps(_jsonable(record), indent=1, sort_keys=True))
    return record


def _jsonable(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return _jsonable(float(obj))
    return obj


def aggregate(records: list[dict]) -> list[dict]:
    """Mean and population std of each metric per (variant, J, space, clusterer)."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        for row in rec["rows"]:
            key = (row["variant"], row["J"], row["feature_space"], row["clusterer"])
            groups.setdefault(key, []).append(row)
    table = []
    for key in sorted(groups, key=lambda t: tuple("" if v is None else str(v) for v in t)):
        rows = groups[key]
        out = dict(zip(("variant", "J", "feature_space", "clusterer"), key))
        out["n"] = len(rows)
        for short, long in METRIC_KEYS:
            vals = np.array([np.nan if r[long] is None else r[long] for r in rows], dtype=np.float64)
            vals = vals[~np.isnan(vals)]
            out[f"{short}_mean"] = float(vals.mean()) if vals.size else None
            out[f"{short}_std"] = float(vals.std()) if vals.size else None
        table.append(out)
    return table


def write_results(table: list[dict], out_dir: Path, failures: list[dict]) -> None:
    with (out_dir / "results.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for row in table:
            w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in RESULT_COLUMNS])
    payload = {"rows": table, "failures": failures}
    (out_dir / "results.json").write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True))


def _realization_job(args):
    cfg_json, r, baseline = args
    cfg = ExperimentConfig.from_json(cfg_json)
    return run_baseline_realization(cfg, r) if baseline else run_realization(cfg, r)


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run all realizations (optionally in worker processes) and write the results table."""
    cfg.validate()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json())
    dataset = load_dataset(cfg)
    if cfg.selection == "val_vscore" and dataset.labels is None and model_variants(cfg):
        raise ConfigError("validation V-score selection needs a labeled dataset")

    jobs = []
    if model_variants(cfg):
        jobs += [(r, False) for r in range(cfg.n_realizations)]
    if set(cfg.feature_spaces) & set(RAW_SPACES):
        jobs += [(r, True) for r in range(cfg.n_baseline_realizations)]
    if cfg.n_workers > 1:
        payload = [(cfg.to_json(), r, b) for r, b in jobs]
        with ProcessPoolExecutor(max_workers=cfg.n_workers) as pool:
            records = list(pool.map(_realization_job, payload))
    else:
        records = [
            run_baseline_realization(cfg, r, dataset) if b else run_realization(cfg, r, dataset) for r, b in jobs
        ]
    failures = [f for rec in records for f in rec["failures"]]
    for f in failures:
        log.warning("excluded from aggregation: %s", f)
    table = aggregate(records)
    write_results(table, out_dir, failures)
    return table


def load_records(run_dir) -> list[dict]:
    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("realization_*/metrics.json")) + sorted(run_dir.glob("baselines/realization_*/metrics.json"))
    return [json.loads(p.read_text()) for p in paths]


def emit_plot_data(run_dir, realization: int = 0, variant: str | None = None) -> list[Path]:
    """Write ``f0_scatter.csv`` and ``filter_evolution.csv`` for one trained variant.

    The scatter covers every signal of the dataset (all partitions) with the
    K-means assignment on f0; true labels are included only when known.
    """
    run_dir = Path(run_dir)
    rdir = run_dir / f"realization_{realization:03d}"
    candidates = sorted(p for p in rdir.glob("isvae-*") if (p / "features_all_f0.csv").exists())
    if variant is not None:
        candidates = [p for p in candidates if p.name == variant]
    if not candidates:
        raise FileNotFoundError(f"no trained filter-bank variant under {rdir}")
    vdir = candidates[0]
    with (vdir / "features_all_f0.csv").open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    f_cols = sorted((c for c in rows[0] if c.startswith("x")), key=lambda c: int(c[1:]))
    f0 = np.array([[float(r[c]) for c in f_cols] for r in rows])
    has_labels = "label" in rows[0]
    labels = np.array([int(r["label"]) for r in rows]) if has_labels else None
    cfg = json.loads((run_dir / "config.json").read_text())
    k = cfg.get("n_clusters") or (len(np.unique(labels)) if has_labels else None)
    pred = kmeans(f0, k, seed=cfg.get("base_seed", 0) + realization).labels if k else None

    written = []
    scatter = run_dir / "f0_scatter.csv"
    with scatter.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["index", "partition", *(f"f_{j + 1}" for j in range(len(f_cols)))]
        head += (["true_label"] if has_labels else []) + (["pred_label"] if pred is not None else [])
        w.writerow(head)
        order = np.argsort([int(r["source_index"]) for r in rows], kind="stable")
        for i in order:
            r = rows[i]
            vals = [int(r["source_index"]), r["partition"], *(repr(float(v)) for v in f0[i])]
            if has_labels:
                vals.append(int(labels[i]))
            if pred is not None:
                vals.append(int(pred[i]))
            w.writerow(vals)
    written.append(scatter)

    evolution = run_dir / "filter_evolution.csv"
    src = vdir / "trace_classes.csv"
    if src.exists():
        evolution.write_text(src.read_text())
    else:
        with (vdir / "trace.csv").open(newline="", encoding="utf-8") as fh:
            trace_rows = list(csv.DictReader(fh))
        with evolution.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            cols = [c for c in trace_rows[0] if c.startswith("f0_mean_")]
            w.writerow(["epoch", *cols])
            for tr_row in trace_rows:
                w.writerow([tr_row["epoch"], *(tr_row[c] for c in cols)])
    written.append(evolution)
    return written


def score_files(features_csv, labels_csv) -> dict:
    """Score a feature matrix against an assignment (``index,label``) file.

    When the features file carries a ``label`` column it is used as ground truth.
    """
    from isvae.clustering import read_assignment

    with Path(features_csv).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    cols = sorted((c for c in rows[0] if c.startswith("x")), key=lambda c: int(c[1:]))
    x = np.array([[float(r[c]) for c in cols] for r in rows])
    truth = np.array([int(r["label"]) for r in rows]) if "label" in rows[0] else None
    pred = read_assignment(labels_csv)
    if len(pred) != len(x):
        raise ConfigError(f"{len(x)} feature rows but {len(pred)} labels")
    return _jsonable(asdict(score(x, pred, truth)))


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MetricReport",
    "aggregate",
    "emit_plot_data",
    "load_records",
    "run_experiment",
    "run_realization",
    "score_files",
]
