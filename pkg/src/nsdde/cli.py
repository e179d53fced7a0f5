"""Command line entry point: ``nsdde {ingest,synth,train,evaluate,scenario,sweep}``.

Any command accepts ``--config FILE`` (JSON experiment config) and repeated
``--set key.path=value`` overrides with JSON-parsed values. Output goes to
``--out``, else ``$NSDDE_OUTPUT_DIR``, else ``runs/<command>``. Failures exit
non-zero and print ``{"error": ..., "message": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .errors import ConfigError, NSDDEError
from .experiment import (
    ExperimentConfig,
    emit_report,
    emit_sweep,
    load_dataset,
    prepare,
    evaluate_prepared,
    run_replicate,
    run_scenario,
    sensitivity_sweep,
    set_dotted,
    write_rows,
)
from .metrics import CONVENTIONS, classification_report, novelty_report
from .model import load_checkpoint, msp_outlier_score, save_checkpoint

OUTPUT_ENV = "NSDDE_OUTPUT_DIR"


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> ExperimentConfig:
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    doc = ExperimentConfig.from_dict(doc).to_dict()
    if getattr(args, "data", None):
        paths = [str(p) for p in args.data]
        suffix = Path(paths[0]).suffix.lower()
        doc["data"]["source"] = "ts" if suffix == ".ts" else "csv"
        doc["data"]["paths"] = paths
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        set_dotted(doc, key.strip(), _parse_value(value))
    if getattr(args, "seeds", None):
        doc["seeds"] = args.seeds
    if getattr(args, "id", None) is not None:
        doc["scenario"] = args.id
    return ExperimentConfig.from_dict(doc)


def output_dir(args, command) -> Path:
    if args.out:
        return Path(args.out)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path("runs") / command


def _print(doc):
    print(json.dumps(doc, indent=1, sort_keys=True))


def cmd_ingest(args):
    ds = D.parse_ts(*args.inputs)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(ds, out)
    _print({"instances": len(ds), "d_x": ds.d_x, "length": len(ds.instances[0]),
            "classes": ds.class_table(), "output": str(out)})


def cmd_synth(args):
    cfg = resolve_config(args)
    ds = load_dataset(cfg.data.__class__(source="synthetic", synthetic=cfg.data.synthetic))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_csv(ds, out)
    _print({"instances": len(ds), "classes": ds.class_table(), "output": str(out)})


def cmd_train(args):
    cfg = resolve_config(args)
    ds = load_dataset(cfg.data)
    seed = cfg.seeds[0]
    report, curve, manifest, model, extra = run_replicate(cfg, ds, seed)
    out = output_dir(args, "train")
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.json", extra)
    write_rows([{"seed": seed, **r} for r in curve], out / "curves.csv",
               ["seed", "epoch", "train_loss", "val_loss", "val_accuracy"])
    (out / "split_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    (out / "metrics.json").write_text(json.dumps(
        {"replicates": [report], "conventions": CONVENTIONS}, indent=1, sort_keys=True) + "\n")
    if not args.no_figures:
        from .plotting import plot_training_curves

        plot_training_curves([{"seed": seed, **r} for r in curve], out / "curves.png")
    _print({"checkpoint": str(out / "model.json"), "test": report})


def cmd_evaluate(args):
    model, extra = load_checkpoint(args.checkpoint)
    paths = [str(p) for p in args.data]
    if Path(paths[0]).suffix.lower() == ".ts":
        ds = D.parse_ts(*paths)
    else:
        ds = D.load_csv(paths[0])
    classes = extra.get("classes", ds.classes)
    novel = None
    if args.novel_label is not None:
        _, ds = D.relabel_for_novelty(ds, args.novel_label)
        novel = ds.novel
    labels = np.array([
        -1 if (novel is not None and novel[k]) else D.label_index(classes, ds.classes[y])
        for k, y in enumerate(ds.labels)
    ])
    ds = D.standardize(ds, extra.get("channel_mean", np.zeros(ds.d_x)), extra.get("channel_std", np.ones(ds.d_x)))
    grid = model.grid(extra.get("horizon", ds.max_time()), extra.get("steps_per_unit", 1))
    prep = prepare(ds, grid)
    _, probs = evaluate_prepared(model, prep, grid, args.seed, args.draws)
    known = labels >= 0
    report = classification_report(labels[known], probs[known].argmax(axis=1), len(classes))
    if novel is not None:
        report.update(novelty_report(msp_outlier_score(probs), novel, args.kappa))
    out = output_dir(args, "evaluate")
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(
        {"evaluation": report, "conventions": CONVENTIONS}, indent=1, sort_keys=True) + "\n")
    _print(report)


def cmd_scenario(args):
    cfg = resolve_config(args)
    result = run_scenario(cfg)
    paths = emit_report(result, output_dir(args, f"scenario{cfg.scenario}"), figures=not args.no_figures)
    _print({"aggregate": result.aggregate, "files": {k: str(v) for k, v in paths.items()}})


def cmd_sweep(args):
    cfg = resolve_config(args)
    rows, results = sensitivity_sweep(cfg, [float(t) for t in args.tau])
    paths = emit_sweep(rows, results, output_dir(args, "sweep"), figures=not args.no_figures)
    summary = {f"{k}@{t}" if t is not None else k: r.aggregate for (k, t), r in results.items()}
    _print({"aggregate": summary, "files": {k: str(v) for k, v in paths.items()}})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsdde", description="Neural SDDE classification and novelty detection for irregular time series.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--out", help="output directory")
        p.add_argument("--no-figures", action="store_true")
        if data:
            p.add_argument("--data", nargs="+", help=".ts file(s) or one long-format CSV")

    p = sub.add_parser("ingest", help="convert UEA .ts file(s) to long-format CSV")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate the synthetic delayed-dynamics dataset as CSV")
    common(p, data=False)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one replicate and save a checkpoint")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--novel-label")
    p.add_argument("--kappa", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("scenario", help="run one evaluation scenario over all replicate seeds")
    common(p)
    p.add_argument("--id", type=int, choices=(1, 2, 3, 4), required=True)
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("sweep", help="delay sensitivity sweep plus the no-delay baseline")
    common(p)
    p.add_argument("--tau", type=float, nargs="+", required=True)
    p.add_argument("--id", type=int, choices=(1, 2, 3, 4))
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (NSDDEError, ValueError, OSError, KeyError) as exc:
        code = getattr(exc, "code", "io" if isinstance(exc, OSError) else "error")
        print(json.dumps({"error": code, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
