"""Datasets: UEA ``.ts`` import, long-format CSV, stratified splits, missingness,
standardisation, novelty relabelling and a synthetic delayed-dynamics generator.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInputError,
    GeneratorError,
    IntegrityError,
    LabelError,
    ParseError,
    StratificationError,
)
from .path import IrregularSeries

CSV_COLUMNS = ("instance_id", "time", "channel", "value", "label")


@dataclass
class Dataset:
    """Instances share ``d_x``; ``labels`` index into ``classes`` (original label strings)."""

    instances: list
    labels: np.ndarray
    classes: list
    ids: np.ndarray
    channel_mean: np.ndarray | None = None
    channel_std: np.ndarray | None = None
    novel: np.ndarray | None = None  # bool per instance, set by relabel_for_novelty

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(self.instances) != self.labels.size or self.ids.size != self.labels.size:
            raise IntegrityError("instances, labels and ids differ in length")
        if self.instances:
            d = {s.n_channels for s in self.instances}
            if len(d) != 1:
                raise IntegrityError(f"instances have differing channel counts {sorted(d)}")
        if self.labels.size and (self.labels.min() < -1 or self.labels.max() >= len(self.classes)):
            raise LabelError("label index outside the class table")

    def __len__(self):
        return len(self.instances)

    @property
    def d_x(self) -> int:
        return self.instances[0].n_channels

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_table(self) -> list[dict]:
        counts = np.bincount(self.labels[self.labels >= 0], minlength=self.n_classes)
        return [{"label": c, "index": k, "count": int(counts[k])} for k, c in enumerate(self.classes)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            instances=[self.instances[i] for i in idx],
            labels=self.labels[idx],
            ids=self.ids[idx],
            novel=None if self.novel is None else self.novel[idx],
        )

    def max_time(self) -> float:
        return max(float(s.times[-1]) for s in self.instances)


def label_index(classes, label) -> int:
    """Find ``label`` in ``classes`` by exact string, falling back to numeric equality ("06" == "6")."""
    label = str(label)
    if label in classes:
        return classes.index(label)
    try:
        target = float(label)
    except ValueError:
        target = None
    if target is not None:
        for k, c in enumerate(classes):
            try:
                if float(c) == target:
                    return k
            except ValueError:
                pass
    raise LabelError(f"unknown class label {label!r}")


# UEA .ts -------------------------------------------------------------------

def parse_ts(*paths) -> Dataset:
    """Read one or more equal-length UEA ``.ts`` files into a single Dataset.

    Several files (e.g. a TRAIN and TEST pair) are concatenated in order and
    must agree on dimensions, length and class list. Times are ``0 .. L-1``.
    """
    series, labels, classes = [], [], None
    dims = length = None
    for path in paths:
        f_classes, f_dims, f_len, rows = _read_ts(Path(path))
        if classes is None:
            classes, dims, length = f_classes, f_dims, f_len
        elif (f_classes, f_dims, f_len) != (classes, dims, length):
            raise ParseError(f"{path}: header disagrees with {paths[0]}")
        for lineno, values, label in rows:
            if label not in classes:
                raise ParseError(f"unknown class label {label!r}", lineno)
            series.append(IrregularSeries.regular(values))
            labels.append(classes.index(label))
    if not series:
        raise EmptyInputError("no instances in .ts input")
    return Dataset(series, np.array(labels), list(classes), np.arange(len(series)))


def _read_ts(path: Path):
    headers = {}
    classes = None
    rows = []
    in_data = False
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if not in_data:
                if not line.startswith("@"):
                    raise ParseError(f"expected a header, got {line[:30]!r}", lineno)
                key, _, rest = line[1:].partition(" ")
                key = key.lower()
                rest = rest.strip()
                if key == "data":
                    in_data = True
                elif key == "classlabel":
                    parts = rest.split()
                    if not parts or parts[0].lower() != "true":
                        raise ParseError("only labelled classification files are supported", lineno)
                    classes = parts[1:]
                    if not classes:
                        raise ParseError("@classLabel true without labels", lineno)
                elif key in ("dimensions", "serieslength"):
                    try:
                        headers[key] = int(rest)
                    except ValueError:
                        raise ParseError(f"@{key} must be an integer, got {rest!r}", lineno) from None
                else:
                    headers[key] = rest
                continue
            if classes is None:
                raise ParseError("@data before @classLabel", lineno)
            parts = line.split(":")
            label = parts[-1].strip()
            chans = parts[:-1]
            dims = headers.get("dimensions", len(chans))
            if len(chans) != dims:
                raise ParseError(f"{len(chans)} dimensions, header says {dims}", lineno)
            try:
                arr = [[float(v) for v in c.split(",")] for c in chans]
            except ValueError as exc:
                raise ParseError(f"bad value ({exc})", lineno) from None
            lens = {len(a) for a in arr}
            if len(lens) != 1:
                raise ParseError(f"ragged dimension lengths {sorted(lens)}", lineno)
            L = lens.pop()
            if "serieslength" in headers and L != headers["serieslength"]:
                raise ParseError(f"series length {L}, header says {headers['serieslength']}", lineno)
            rows.append((lineno, np.array(arr).T, label))
    if not in_data:
        raise ParseError(f"{path}: no @data section")
    if not rows:
        raise EmptyInputError(f"{path}: empty @data section")
    return classes, headers.get("dimensions", rows[0][1].shape[1]), rows[0][1].shape[0], rows


def write_ts(ds: Dataset, path, problem_name="dataset"):
    """Write a fully observed, equal-length dataset in UEA ``.ts`` format (used for fixtures)."""
    L = len(ds.instances[0])
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(f"@problemName {problem_name}\n@timeStamps false\n@missing false\n@univariate {str(ds.d_x == 1).lower()}\n")
        fh.write(f"@dimensions {ds.d_x}\n@equalLength true\n@seriesLength {L}\n")
        fh.write("@classLabel true " + " ".join(ds.classes) + "\n@data\n")
        for s, y in zip(ds.instances, ds.labels):
            chans = [",".join(repr(float(v)) for v in s.values[:, c]) for c in range(ds.d_x)]
            fh.write(":".join(chans) + ":" + ds.classes[y] + "\n")


# Long CSV ------------------------------------------------------------------

def save_csv(ds: Dataset, path):
    """One row per observed (instance, time, channel). Unobserved entries are omitted."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for iid, s, y in zip(ds.ids, ds.instances, ds.labels):
            label = ds.classes[y]
            for j, t in enumerate(s.times):
                for c in np.flatnonzero(s.observed[j]):
                    w.writerow((int(iid), repr(float(t)), int(c), repr(float(s.values[j, c])), label))


def load_csv(path, classes=None) -> Dataset:
    """Inverse of :func:`save_csv`. Class order is first-appearance unless ``classes`` is given.

    Channel count is ``max(channel) + 1``. A time point at which no channel is
    observed cannot be represented and does not reappear.
    """
    records: dict[int, dict] = {}
    order = []
    d_x = 0
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:5]) != CSV_COLUMNS:
            raise ParseError(f"CSV header must be {','.join(CSV_COLUMNS)}", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                iid = int(row["instance_id"])
                t = float(row["time"])
                c = int(row["channel"])
                v = float(row["value"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad field ({exc})", lineno) from None
            label = row["label"]
            rec = records.get(iid)
            if rec is None:
                rec = records[iid] = {"label": label, "obs": {}}
                order.append(iid)
            elif rec["label"] != label:
                raise IntegrityError(f"instance {iid} has labels {rec['label']!r} and {label!r}")
            rec["obs"][(t, c)] = v
            d_x = max(d_x, c + 1)
    if not records:
        raise EmptyInputError(f"{path}: no data rows")
    if classes is None:
        classes = []
        for iid in order:
            if records[iid]["label"] not in classes:
                classes.append(records[iid]["label"])
    series, labels = [], []
    for iid in order:
        obs = records[iid]["obs"]
        times = sorted({t for t, _ in obs})
        pos = {t: j for j, t in enumerate(times)}
        values = np.zeros((len(times), d_x))
        mask = np.zeros((len(times), d_x), dtype=bool)
        for (t, c), v in obs.items():
            values[pos[t], c] = v
            mask[pos[t], c] = True
        series.append(IrregularSeries(np.array(times), values, mask))
        labels.append(label_index(classes, records[iid]["label"]))
    return Dataset(series, np.array(labels), list(classes), np.array(order))


# Splits and transforms -----------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios) or abs(sum(self.ratios) - 1) > 1e-9:
            raise ValueError(f"split ratios must be three positive reals summing to 1, got {self.ratios}")


def stratified_split(ds: Dataset, spec: SplitSpec = SplitSpec()):
    """Per-class shuffled partition with largest-remainder rounding.

    Ties between remainders go to the partition furthest behind its running
    global target, so totals also stay close to the ratios.
    Returns the three index arrays (train, val, test) into ``ds``.
    """
    rng = np.random.default_rng(spec.seed)
    ratios = np.asarray(spec.ratios, dtype=np.float64)
    parts = [[], [], []]
    cum_target = np.zeros(3)
    cum_given = np.zeros(3)
    counts = np.bincount(ds.labels[ds.labels >= 0], minlength=ds.n_classes)
    for k in range(ds.n_classes):
        if counts[k] == 0:
            continue
        if counts[k] < 3:
            raise StratificationError(f"class {ds.classes[k]!r} has {counts[k]} instances; at least 3 are needed")
        members = np.flatnonzero(ds.labels == k)
        members = members[rng.permutation(members.size)]
        exact = counts[k] * ratios
        take = np.floor(exact).astype(int)
        frac = exact - take
        cum_target += exact
        for _ in range(counts[k] - take.sum()):
            deficit = cum_target - (cum_given + take)
            p = min(range(3), key=lambda j: (-round(frac[j], 12), -round(deficit[j], 12), j))
            take[p] += 1
            frac[p] = -1.0
        cum_given += take
        bounds = np.cumsum(take)
        parts[0].extend(members[:bounds[0]])
        parts[1].extend(members[bounds[0]:bounds[1]])
        parts[2].extend(members[bounds[1]:])
    return tuple(np.array(sorted(p), dtype=np.int64) for p in parts)


def split_manifest(ds: Dataset, splits, **notes) -> dict:
    names = ("train", "val", "test")
    doc = {name: [int(i) for i in ds.ids[idx]] for name, idx in zip(names, splits)}
    doc["counts"] = {
        name: {ds.classes[k]: int(np.sum(ds.labels[idx] == k)) for k in range(ds.n_classes)}
        for name, idx in zip(names, splits)
    }
    doc.update(notes)
    return doc


@dataclass(frozen=True)
class SubsampleSpec:
    missing_rate: float = 0.5
    seed: int = 0
    keep_first: bool = True

    def __post_init__(self):
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must be in [0, 1)")


def subsample(series: IrregularSeries, spec: SubsampleSpec, seed=None) -> IrregularSeries:
    """Drop ``floor(rate * n)`` whole time points at random; ``seed`` overrides ``spec.seed``."""
    n = len(series)
    n_drop = int(np.floor(spec.missing_rate * n))
    if n_drop == 0:
        return series
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    candidates = np.arange(1 if spec.keep_first else 0, n)
    n_drop = min(n_drop, candidates.size, n - 1)
    drop = rng.choice(candidates, size=n_drop, replace=False)
    keep = np.setdiff1d(np.arange(n), drop)
    if not series.observed[keep].any():
        keep = np.union1d(keep, [np.flatnonzero(series.observed.any(axis=1))[0]])
    return IrregularSeries(series.times[keep], series.values[keep], series.observed[keep])


def subsample_dataset(ds: Dataset, spec: SubsampleSpec, seed) -> Dataset:
    """Subsample every instance with a stream keyed by ``(*seed, instance id)``; ``seed`` is an int or tuple."""
    base = tuple(int(v) for v in seed) if isinstance(seed, (tuple, list)) else (int(seed),)
    inst = [subsample(s, spec, seed=(*base, int(i))) for s, i in zip(ds.instances, ds.ids)]
    return replace(ds, instances=inst)


def channel_stats(ds: Dataset):
    d = ds.d_x
    total = np.zeros(d)
    sq = np.zeros(d)
    count = np.zeros(d)
    for s in ds.instances:
        v = np.where(s.observed, s.values, 0.0)
        total += v.sum(axis=0)
        sq += (v * v).sum(axis=0)
        count += s.observed.sum(axis=0)
    count = np.maximum(count, 1)
    mean = total / count
    var = np.maximum(sq / count - mean * mean, 0.0)
    return mean, np.sqrt(var)


def standardize(ds: Dataset, mean, std) -> Dataset:
    """Apply ``(v - mean) / max(std, 1e-8)`` to observed values; stats come from the train split."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)
    inst = [
        IrregularSeries(s.times, np.where(s.observed, (s.values - mean) / std, 0.0), s.observed)
        for s in ds.instances
    ]
    return replace(ds, instances=inst, channel_mean=mean, channel_std=std)


def relabel_for_novelty(ds: Dataset, novel_label):
    """Split off one class as novel.

    Returns ``(known, flagged)``: ``known`` has the novel class removed and labels
    re-indexed over the remaining ``C - 1`` classes; ``flagged`` keeps every
    instance, carries a boolean ``novel`` array and uses label ``-1`` for the
    novel instances.
    """
    k_novel = label_index(ds.classes, novel_label)
    remap = np.full(ds.n_classes, -1, dtype=np.int64)
    remap[[k for k in range(ds.n_classes) if k != k_novel]] = np.arange(ds.n_classes - 1)
    classes = [c for k, c in enumerate(ds.classes) if k != k_novel]
    is_novel = ds.labels == k_novel
    flagged = replace(ds, labels=remap[ds.labels], classes=classes, novel=is_novel)
    known = flagged.subset(np.flatnonzero(~is_novel))
    known.novel = None
    return known, flagged


# Synthetic data -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    feedback: tuple = (0.8, -0.8)  # delayed-feedback coefficient per class
    drift: float = -0.5
    noise: float = 0.5
    delay: float = 3.0
    length: int = 36
    d_x: int = 3
    per_class: int = 100
    seed: int = 0
    substeps: int = 20  # fine steps per unit time
    burn_in: float = 10.0
    obs_noise: float = 0.0
    bound: float = 1e4

    def __post_init__(self):
        if len(set(self.feedback)) != len(self.feedback):
            raise ValueError("classes need distinct feedback coefficients")
        if self.delay <= 0 or self.length < 2 or self.d_x < 1 or self.per_class < 1:
            raise ValueError("invalid synthetic generator settings")


def mixing_weights(d_x: int) -> np.ndarray:
    return np.linspace(1.0, 0.5, d_x) * np.where(np.arange(d_x) % 2 == 0, 1.0, -1.0)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Scalar delayed linear SDE ``dx = (a x(t) + b_c x(t - delay)) dt + s dW`` per instance.

    Integrated by Euler-Maruyama on ``substeps`` points per unit time with the
    history held at the initial value ``x0 ~ N(0, 1)``; after ``burn_in`` the
    path is read at ``length`` unit-spaced times and mixed into ``d_x`` channels.
    """
    rng = np.random.default_rng(spec.seed)
    h = 1.0 / spec.substeps
    lag = int(round(spec.delay * spec.substeps))
    n_burn = int(round(spec.burn_in * spec.substeps))
    n_steps = n_burn + (spec.length - 1) * spec.substeps
    mix = mixing_weights(spec.d_x)
    C = len(spec.feedback)
    labels = np.repeat(np.arange(C), spec.per_class)
    n = labels.size
    b = np.asarray(spec.feedback, dtype=np.float64)[labels]
    x0 = rng.normal(size=n)
    path = np.empty((n, lag + n_steps + 1))
    path[:, :lag + 1] = x0[:, None]
    noise = rng.normal(0.0, np.sqrt(h), size=(n, n_steps))
    for k in range(n_steps):
        j = lag + k
        cur = path[:, j]
        path[:, j + 1] = cur + (spec.drift * cur + b * path[:, j - lag]) * h + spec.noise * noise[:, k]
    if not np.all(np.isfinite(path)) or np.abs(path).max() > spec.bound:
        raise GeneratorError("synthetic trajectories exceed the stability bound; reduce feedback or length")
    sample_at = lag + n_burn + spec.substeps * np.arange(spec.length)
    x = path[:, sample_at]  # (n, L)
    values = x[:, :, None] * mix[None, None, :]
    if spec.obs_noise > 0:
        values = values + spec.obs_noise * rng.normal(size=values.shape)
    order = rng.permutation(n)
    instances = [IrregularSeries.regular(values[i]) for i in order]
    classes = [f"c{k}" for k in range(C)]
    return Dataset(instances, labels[order], classes, np.arange(n))


def save_manifest(doc: dict, path):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
