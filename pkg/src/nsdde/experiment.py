"""Experiment harness: configuration, training with early stopping, the four
evaluation scenarios, the delay sweep and report emission.

Scenarios
    1. regular train, regular test
    2. regular train, test subsampled once per replicate
    3. train, validation and test all subsampled
    4. one class removed from train/validation; MSP novelty scores on the full test set
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, NSDDEError
from .metrics import CONVENTIONS, classification_report, novelty_report
from .model import (
    ModelConfig,
    NeuralLSDEModel,
    NeuralSDDEModel,
    loss_and_grads,
    msp_outlier_score,
    predict_batch,
)
from .nn import AdamState, adam_step, cross_entropy
from .path import path_on_grid

log = logging.getLogger(__name__)

EVAL_STREAM = 7_777_777
SUBSAMPLE_STREAM = 5_555_555
METRIC_KEYS = ("accuracy", "weighted_f1", "auroc_novel", "auprc_known")


# Configuration --------------------------------------------------------------

@dataclass
class DataSection:
    source: str = "synthetic"  # "ts" | "csv" | "synthetic"
    paths: list = field(default_factory=list)
    synthetic: dict = field(default_factory=dict)


@dataclass
class ModelSection:
    kind: str = "sdde"  # "sdde" | "lsde"
    d_z: int = 32
    width: int = 64
    depth: int = 2
    tau: float = 3.0
    activation: str = "tanh"


@dataclass
class SolverSection:
    steps_per_unit: int = 1
    eval_draws: int = 1


@dataclass
class TrainSection:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 10


@dataclass
class SplitSection:
    ratios: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    seed: int = 0


@dataclass
class SubsampleSection:
    missing_rate: float = 0.5
    keep_first: bool = True


@dataclass
class NoveltySection:
    novel_label: str | None = None
    kappa: float = 0.5


@dataclass
class ExperimentConfig:
    scenario: int = 1
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    solver: SolverSection = field(default_factory=SolverSection)
    training: TrainSection = field(default_factory=TrainSection)
    split: SplitSection = field(default_factory=SplitSection)
    subsample: SubsampleSection = field(default_factory=SubsampleSection)
    novelty: NoveltySection = field(default_factory=NoveltySection)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    meta: dict = field(default_factory=lambda: {
        "note": "training schedule and network sizes are tunable defaults",
    })

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in (1, 2, 3, 4):
            raise ConfigError(f"scenario must be 1-4, got {self.scenario}")
        if self.scenario == 4 and self.novelty.novel_label is None:
            raise ConfigError("scenario 4 needs novelty.novel_label")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if self.data.source not in ("ts", "csv", "synthetic"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source != "synthetic" and not self.data.paths:
            raise ConfigError(f"data.source={self.data.source} needs data.paths")
        if self.model.kind not in ("sdde", "lsde"):
            raise ConfigError(f"unknown model kind {self.model.kind!r}")
        if self.model.tau <= 0:
            raise ConfigError("model.tau must be positive")
        if self.training.batch_size < 1 or self.training.epochs < 1 or self.training.patience < 0:
            raise ConfigError("invalid training section")
        try:
            D.SplitSpec(tuple(self.split.ratios), self.split.seed)
            D.SubsampleSpec(self.subsample.missing_rate, 0, self.subsample.keep_first)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        return _build(cls, doc, "").validate()

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        doc = self.to_dict()
        for key, value in dotted.items():
            set_dotted(doc, key, value)
        return ExperimentConfig.from_dict(doc)


def _build(cls, doc, prefix):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys under {prefix or 'root'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = getattr(cls(), name)
        kwargs[name] = _build(type(default), value, f"{prefix}{name}.") if is_dataclass(default) else value
    return cls(**kwargs)


def set_dotted(doc: dict, key: str, value):
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node and parts[-2:-1] not in (["synthetic"], ["meta"]):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# Data -----------------------------------------------------------------------

def load_dataset(section: DataSection) -> D.Dataset:
    if section.source == "ts":
        return D.parse_ts(*section.paths)
    if section.source == "csv":
        return D.load_csv(section.paths[0])
    spec = dict(section.synthetic)
    if "feedback" in spec:
        spec["feedback"] = tuple(spec["feedback"])
    return D.generate_synthetic(D.SyntheticSpec(**spec))


def build_model(section: ModelSection, d_x: int, n_classes: int, seed):
    cfg = ModelConfig(
        d_x=d_x, n_classes=n_classes, d_z=section.d_z, width=section.width, depth=section.depth,
        tau=section.tau, activation=section.activation, delayed=section.kind == "sdde",
    )
    cls = NeuralSDDEModel if section.kind == "sdde" else NeuralLSDEModel
    return cls(cfg, seed=seed)


# Training -------------------------------------------------------------------

@dataclass
class Prepared:
    """Controls evaluated on the solver grid, cached for a dataset."""

    controls: np.ndarray
    labels: np.ndarray
    ids: np.ndarray


def prepare(ds: D.Dataset, grid) -> Prepared:
    return Prepared(path_on_grid(ds.instances, grid.times), ds.labels.copy(), ds.ids.copy())


def _eval_seeds(seed, ids):
    return [(int(seed), EVAL_STREAM, int(i)) for i in ids]


def evaluate_prepared(model, prep: Prepared, grid, seed, draws=1, batch=256):
    probs = []
    logits = []
    for start in range(0, prep.ids.size, batch):
        sl = slice(start, start + batch)
        lg, pr = predict_batch(model, prep.controls[sl], grid, _eval_seeds(seed, prep.ids[sl]), draws)
        logits.append(lg)
        probs.append(pr)
    return np.concatenate(logits), np.concatenate(probs)


def train(model, train_set: Prepared, val_set: Prepared, grid, training: TrainSection, seed, on_epoch=None):
    """Mini-batch Adam on the mean cross-entropy with early stopping on validation accuracy.

    Returns the model holding the best-validation parameters and the curve as
    a list of ``{epoch, train_loss, val_loss, val_accuracy}`` rows. Stops once
    ``patience`` epochs pass without a strictly better validation accuracy
    (``patience=0`` runs exactly one epoch).
    """
    if train_set.ids.size == 0 or val_set.ids.size == 0:
        raise ValueError("training and validation sets must be non-empty")
    params = model.get_params()
    state = AdamState.zeros(params.size)
    best = (-np.inf, np.inf)
    best_params = params.copy()
    since_best = 0
    curve = []
    n = train_set.ids.size
    for epoch in range(training.epochs):
        order = np.random.default_rng((int(seed), epoch)).permutation(n)
        total = 0.0
        for start in range(0, n, training.batch_size):
            idx = order[start:start + training.batch_size]
            seeds = [(int(seed), epoch, int(i)) for i in train_set.ids[idx]]
            loss, grads = loss_and_grads(model, train_set.controls[idx], train_set.labels[idx], grid, seeds)
            params, state = adam_step(params, grads, state, lr=training.lr)
            model.set_params(params)
            total += loss * idx.size
        logits, probs = evaluate_prepared(model, val_set, grid, seed)
        val_loss = cross_entropy(logits, val_set.labels)[0]
        val_acc = float(np.mean(probs.argmax(axis=1) == val_set.labels))
        row = {"epoch": epoch, "train_loss": total / n, "val_loss": val_loss, "val_accuracy": val_acc}
        curve.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if (val_acc, -val_loss) > (best[0], -best[1]):
            best = (val_acc, val_loss)
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
        if since_best >= training.patience:
            break
    model.set_params(best_params)
    return model, curve


# Scenarios ------------------------------------------------------------------

@dataclass
class RunResult:
    config: dict
    fingerprint: str
    replicates: list  # per-seed report dicts
    aggregate: dict
    curves: list  # rows with a "seed" column
    manifests: list
    wall_clock: float = 0.0


def aggregate(reports) -> dict:
    out = {}
    ok = [r for r in reports if "error" not in r]
    for key in METRIC_KEYS:
        vals = [r[key] for r in ok if r.get(key) is not None]
        if not vals:
            continue
        arr = np.asarray(vals, dtype=np.float64)
        out[key] = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else None,
            "n": int(arr.size),
        }
    out["n_replicates"] = len(reports)
    out["n_failed"] = len(reports) - len(ok)
    return out


def run_replicate(cfg: ExperimentConfig, ds: D.Dataset, seed: int, on_epoch=None):
    """One seeded replicate: split, subsample, standardise, train, evaluate."""
    splits = D.stratified_split(ds, D.SplitSpec(tuple(cfg.split.ratios), cfg.split.seed))
    train_ds, val_ds, test_ds = (ds.subset(s) for s in splits)
    T = ds.max_time()
    sub = D.SubsampleSpec(cfg.subsample.missing_rate, 0, cfg.subsample.keep_first)
    sub_seed = (int(seed), SUBSAMPLE_STREAM)
    subsampled = {"train": False, "val": False, "test": False}
    if cfg.scenario in (2, 3):
        test_ds = D.subsample_dataset(test_ds, sub, sub_seed)
        subsampled["test"] = True
    if cfg.scenario == 3:
        train_ds = D.subsample_dataset(train_ds, sub, sub_seed)
        val_ds = D.subsample_dataset(val_ds, sub, sub_seed)
        subsampled["train"] = subsampled["val"] = True

    flagged_test = None
    if cfg.scenario == 4:
        train_ds, _ = D.relabel_for_novelty(train_ds, cfg.novelty.novel_label)
        val_ds, _ = D.relabel_for_novelty(val_ds, cfg.novelty.novel_label)
        _, flagged_test = D.relabel_for_novelty(test_ds, cfg.novelty.novel_label)
        test_ds = flagged_test

    mean, std = D.channel_stats(train_ds)
    train_ds, val_ds, test_ds = (D.standardize(x, mean, std) for x in (train_ds, val_ds, test_ds))

    n_classes = train_ds.n_classes
    model = build_model(cfg.model, ds.d_x, n_classes, seed)
    grid = model.grid(T, cfg.solver.steps_per_unit)
    tr, va, te = prepare(train_ds, grid), prepare(val_ds, grid), prepare(test_ds, grid)
    model, curve = train(model, tr, va, grid, cfg.training, seed, on_epoch)
    _, probs = evaluate_prepared(model, te, grid, seed, cfg.solver.eval_draws)

    known = te.labels >= 0
    report = {"seed": int(seed), "epochs_run": len(curve)}
    report.update(classification_report(te.labels[known], probs[known].argmax(axis=1), n_classes))
    if cfg.scenario == 4:
        report.update(novelty_report(msp_outlier_score(probs), flagged_test.novel, cfg.novelty.kappa))
    # ids as actually used: in scenario 4 the novel class is gone from train and val
    used = [np.flatnonzero(np.isin(ds.ids, part.ids)) for part in (train_ds, val_ds, test_ds)]
    manifest = D.split_manifest(
        ds, used, seed=int(seed), scenario=cfg.scenario, subsampled=subsampled,
        missing_rate=cfg.subsample.missing_rate if any(subsampled.values()) else 0.0,
        missingness="whole time points dropped", keep_first=cfg.subsample.keep_first,
        novel_label=cfg.novelty.novel_label if cfg.scenario == 4 else None,
        train_classes=train_ds.classes,
    )
    extra = {
        "channel_mean": [float(v) for v in mean], "channel_std": [float(v) for v in std],
        "horizon": T, "steps_per_unit": cfg.solver.steps_per_unit, "classes": train_ds.classes,
    }
    return report, curve, manifest, model, extra


def run_scenario(cfg: ExperimentConfig, ds: D.Dataset | None = None, on_epoch=None) -> RunResult:
    cfg.validate()
    start = time.perf_counter()
    ds = ds if ds is not None else load_dataset(cfg.data)
    reports, curves, manifests = [], [], []
    for seed in cfg.seeds:
        try:
            report, curve, manifest, _, _ = run_replicate(cfg, ds, seed, on_epoch)
        except NSDDEError as exc:
            log.warning("replicate seed=%s failed: %s", seed, exc)
            reports.append({"seed": int(seed), "error": type(exc).__name__, "message": str(exc)})
            continue
        log.info("seed=%s accuracy=%.4f", seed, report["accuracy"])
        reports.append(report)
        curves.extend({"seed": int(seed), **row} for row in curve)
        manifests.append(manifest)
    return RunResult(
        cfg.to_dict(), cfg.fingerprint(), reports, aggregate(reports), curves, manifests,
        time.perf_counter() - start,
    )


def sensitivity_sweep(cfg: ExperimentConfig, tau_values, ds: D.Dataset | None = None):
    """Run the delayed model at every tau and the no-delay model once.

    Returns ``(rows, results)``: long-format rows ``(scenario, model, tau, seed,
    metric, value)`` and a dict of RunResults keyed by ``("sdde", tau)`` /
    ``("lsde", None)``.
    """
    if not tau_values:
        raise ConfigError("tau list is empty")
    ds = ds if ds is not None else load_dataset(cfg.data)
    step = 1.0 / cfg.solver.steps_per_unit
    results = {}
    for tau in tau_values:
        if tau < step:
            raise ConfigError(f"tau={tau} is below the solver step {step}")
        run_cfg = cfg.with_overrides(**{"model.kind": "sdde", "model.tau": float(tau)})
        results[("sdde", float(tau))] = run_scenario(run_cfg, ds)
    results[("lsde", None)] = run_scenario(cfg.with_overrides(**{"model.kind": "lsde"}), ds)
    rows = []
    for (kind, tau), res in results.items():
        for rep in res.replicates:
            for metric in METRIC_KEYS:
                if rep.get(metric) is not None:
                    rows.append({
                        "scenario": cfg.scenario, "model": kind, "tau": "" if tau is None else tau,
                        "seed": rep["seed"], "metric": metric, "value": rep[metric],
                    })
    return rows, results


# Reports --------------------------------------------------------------------

def _dump(doc, path):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")


def metrics_document(result: RunResult) -> dict:
    return {
        "fingerprint": result.fingerprint,
        "scenario": result.config["scenario"],
        "model": result.config["model"]["kind"],
        "aggregate": result.aggregate,
        "replicates": result.replicates,
        "conventions": {**CONVENTIONS, "std": "sample standard deviation (n - 1)"},
    }


def write_rows(rows, path, columns):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def emit_report(result: RunResult, out_dir, figures: bool = True) -> dict:
    """Write metrics.json, curves.csv, split_manifest.json, config.json and timing.json.

    Wall-clock lives in timing.json so metrics.json is a pure function of the config.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.json",
        "curves": out / "curves.csv",
        "split_manifest": out / "split_manifest.json",
        "config": out / "config.json",
        "timing": out / "timing.json",
    }
    _dump(metrics_document(result), paths["metrics"])
    write_rows(result.curves, paths["curves"], ["seed", "epoch", "train_loss", "val_loss", "val_accuracy"])
    _dump({"replicates": result.manifests}, paths["split_manifest"])
    _dump(result.config, paths["config"])
    _dump({"wall_clock_seconds": result.wall_clock}, paths["timing"])
    if figures and result.curves:
        from .plotting import plot_training_curves

        paths["curves_figure"] = plot_training_curves(result.curves, out / "curves.png")
    return paths


def load_metrics(path) -> dict:
    return json.loads(Path(path).read_text())


SWEEP_COLUMNS = ["scenario", "model", "tau", "seed", "metric", "value"]


def emit_sweep(rows, results, out_dir, figures: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"sweep": out / "sweep.csv"}
    write_rows(rows, paths["sweep"], SWEEP_COLUMNS)
    for (kind, tau), res in results.items():
        name = f"{kind}_tau{tau:g}" if tau is not None else kind
        emit_report(res, out / name, figures=False)
    if figures and rows:
        from .plotting import plot_sensitivity

        paths["figure"] = plot_sensitivity(rows, out / "sensitivity.png")
    return paths
