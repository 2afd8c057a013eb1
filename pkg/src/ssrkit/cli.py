"""Command-line surface.

Subcommands: synth, train, eval, analyze {sparsity,ics,views}, sweep, ablate.
All tabular output is CSV with a header row; every report CSV gets a rendered
PNG figure next to it. Logs are line-delimited JSON records. Exit code 0 on
success, nonzero with a one-line JSON error on stderr otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import plots
from .analysis import (
    report_view_similarity,
    report_weight_sparsity,
    run_ablation_suite,
    run_sweep,
    trace_ics_dynamics,
)
from .data import CsvSchema, SyntheticSpec, encode_dataset, generate, load_csv, write_csv
from .flops import flop_count, param_count
from .metrics import evaluate_auc, evaluate_gauc, evaluate_logloss
from .model import (
    Model,
    ModelConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _model_config(doc: dict, seed: int | None) -> ModelConfig:
    cfg = ModelConfig(**doc.get("model", {}))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _train_config(doc: dict, seed: int | None) -> TrainConfig:
    cfg = TrainConfig(**doc.get("train", {}))
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _synth_spec(doc: dict, seed: int | None) -> SyntheticSpec:
    section = dict(doc.get("synth", {}))
    if "cat_vocab_sizes" in section:
        section["cat_vocab_sizes"] = tuple(section["cat_vocab_sizes"])
    spec = SyntheticSpec(**section)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


def _infer_schema(path: str, already_encoded: bool) -> CsvSchema:
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    n_labels = sum(1 for h in header if h.startswith("label"))
    n_cat = sum(1 for h in header if h[0] == "c" and h[1:].isdigit())
    n_num = sum(1 for h in header if h[0] == "n" and h[1:].isdigit())
    return CsvSchema(n_labels=n_labels, n_categorical=n_cat, n_numeric=n_num,
                     already_encoded=already_encoded)


def _load_encoded(path: str, raw: bool):
    ds = load_csv(path, _infer_schema(path, already_encoded=not raw))
    return encode_dataset(ds)


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    out = _outdir(args)
    spec = _synth_spec(_load_config(args.config), args.seed)
    ds = generate(spec)
    path = os.path.join(out, "dataset.csv")
    write_csv(ds, path)
    print(json.dumps({"written": path, "n": ds.n,
                      "positive_rate": float(np.mean(ds.labels))}))


def cmd_train(args):
    out = _outdir(args)
    doc = _load_config(args.config)
    model_cfg = _model_config(doc, args.seed)
    train_cfg = _train_config(doc, args.seed)
    data = _load_encoded(args.data, args.raw_csv)
    model = build_model(model_cfg, data.vocab_sizes)

    log_path = os.path.join(out, "train.log")
    with open(log_path, "w", encoding="utf-8") as logf:
        report = train(model, data, train_cfg,
                       log=lambda rec: print(json.dumps(rec), file=logf))

    ckpt = os.path.join(out, "checkpoint.json")
    save_checkpoint(model, ckpt)
    metrics_path = os.path.join(out, "metrics.csv")
    _write_csv(metrics_path,
               ["epoch", "train_loss", "val_auc", "val_logloss"],
               [[h["epoch"], h["train_loss"], h["val_auc"], h["val_logloss"]]
                for h in report.history])
    plots.render_metrics_history(report.history,
                                 os.path.join(out, "metrics.png"))
    summary = {"test_auc": report.auc, "test_logloss": report.logloss,
               "test_gauc": report.gauc, "best_epoch": report.best_epoch,
               "params": param_count(model)["total"],
               "flops": flop_count(model)}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, sort_keys=True, indent=1)
    print(json.dumps(summary))


def cmd_eval(args):
    out = _outdir(args)
    model = load_checkpoint(args.checkpoint)
    data = _load_encoded(args.data, args.raw_csv)
    ids, labels, users = data.split_arrays(args.split)
    labels = labels.reshape(ids.shape[0], -1)[:, 0]
    scores = model.predict_proba(ids)
    try:
        gauc = evaluate_gauc(scores, labels, users)
    except Exception:
        gauc = float("nan")
    rows = [[args.split, evaluate_auc(scores, labels), gauc,
             evaluate_logloss(scores, labels)]]
    path = os.path.join(out, "eval.csv")
    _write_csv(path, ["split", "auc", "gauc", "logloss"], rows)
    print(json.dumps({"written": path, "auc": rows[0][1],
                      "logloss": rows[0][3]}))


def cmd_analyze(args):
    out = _outdir(args)
    if args.what == "sparsity":
        model = load_checkpoint(args.checkpoint)
        rep = report_weight_sparsity(model, threshold=args.tau,
                                     quantile=args.q, matrix=args.matrix)
        path = os.path.join(out, "sparsity.csv")
        _write_csv(path, ["matrix", "threshold", "quantile",
                          "near_zero_fraction", "mass_concentration"],
                   [[rep.matrix, rep.threshold, rep.quantile,
                     rep.near_zero_fraction, rep.mass_concentration]])
        plots.render_sparsity_report(rep, os.path.join(out, "sparsity.png"))
        print(json.dumps(asdict(rep)))
    elif args.what == "ics":
        doc = _load_config(args.config)
        data = _load_encoded(args.data, args.raw_csv)
        model = build_model(_model_config(doc, args.seed), data.vocab_sizes)
        rows = trace_ics_dynamics(model, data, _train_config(doc, args.seed),
                                  total_steps=args.steps,
                                  sample_every=args.sample_every)
        path = os.path.join(out, "ics_trace.csv")
        _write_csv(path, ["step", "layer", "view", "sparsity", "mean_abs"],
                   rows)
        plots.render_ics_trace(rows, os.path.join(out, "ics_trace.png"))
        print(json.dumps({"written": path, "rows": len(rows)}))
    else:  # views
        model = load_checkpoint(args.checkpoint)
        sim = report_view_similarity(model, layer_index=args.layer)
        path = os.path.join(out, "view_similarity.csv")
        _write_csv(path, [f"v{j}" for j in range(sim.shape[1])],
                   [[float(v) for v in row] for row in sim])
        plots.render_view_similarity(sim,
                                     os.path.join(out, "view_similarity.png"))
        print(json.dumps({"written": path, "b": sim.shape[0]}))


def _parse_grid(values: list[str], axis: str) -> list:
    if axis == "gamma":
        return [v.lower() in ("1", "true", "on") for v in values]
    if axis == "alpha":
        return [float(v) for v in values]
    return [int(v) for v in values]


def cmd_sweep(args):
    out = _outdir(args)
    doc = _load_config(args.config)
    data = _load_encoded(args.data, args.raw_csv)
    result = run_sweep(args.axis, _parse_grid(args.grid, args.axis),
                       _model_config(doc, args.seed), data,
                       _train_config(doc, args.seed))
    path = os.path.join(out, f"sweep_{args.axis}.csv")
    _write_csv(path, ["value", "params", "flops", "val_auc", "val_logloss",
                      "sparsity"],
               [[r["value"], r["params"], r["flops"], r["val_auc"],
                 r["val_logloss"], r["sparsity"]] for r in result.rows])
    plots.render_sweep(result, os.path.join(out, f"sweep_{args.axis}.png"))
    if result.errors:
        with open(os.path.join(out, f"sweep_{args.axis}_errors.log"), "w",
                  encoding="utf-8") as f:
            for e in result.errors:
                print(json.dumps(e), file=f)
    print(json.dumps({"written": path, "points": len(result.rows),
                      "failed": len(result.errors)}))


def cmd_ablate(args):
    out = _outdir(args)
    doc = _load_config(args.config)
    data = _load_encoded(args.data, args.raw_csv)
    seeds = tuple(int(s) for s in args.seeds)
    result = run_ablation_suite(_model_config(doc, args.seed), data,
                                _train_config(doc, args.seed), seeds=seeds)
    path = os.path.join(out, "ablation.csv")
    _write_csv(path, ["variant", "params", "budget_ratio", "mean_auc",
                      "delta_auc"],
               [[r["variant"], r["params"], r["budget_ratio"], r["mean_auc"],
                 r["delta_auc"]] for r in result.rows])
    plots.render_ablation(result, os.path.join(out, "ablation.png"))
    print(json.dumps({"written": path, "variants": len(result.rows)}))


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssrkit",
        description="filter-then-fuse sparse recommendation backbone")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, checkpoint=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=".", help="output directory")
        if data:
            p.add_argument("--data", required=True, help="dataset CSV")
            p.add_argument("--raw-csv", action="store_true",
                           help="apply vocab/frequency preprocessing instead "
                                "of trusting integer ids")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a config")
    common(p, data=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, data=True, checkpoint=True)
    p.add_argument("--split", default="test",
                   choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="diagnostic reports")
    what = p.add_subparsers(dest="what", required=True)

    ps = what.add_parser("sparsity")
    common(ps)
    ps.add_argument("--checkpoint", required=True)
    ps.add_argument("--tau", type=float, default=1e-3)
    ps.add_argument("--q", type=float, default=0.8)
    ps.add_argument("--matrix", default=None)
    ps.set_defaults(func=cmd_analyze)

    pi = what.add_parser("ics")
    common(pi, data=True)
    pi.add_argument("--steps", type=int, default=200)
    pi.add_argument("--sample-every", type=int, default=20)
    pi.set_defaults(func=cmd_analyze)

    pv = what.add_parser("views")
    common(pv)
    pv.add_argument("--checkpoint", required=True)
    pv.add_argument("--layer", type=int, default=0)
    pv.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="train along one scaling axis")
    common(p, data=True)
    p.add_argument("--axis", required=True,
                   choices=["views", "width", "depth", "iterations", "alpha",
                            "gamma"])
    p.add_argument("--grid", nargs="+", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="component ablation suite")
    common(p, data=True)
    p.add_argument("--seeds", nargs="+", default=["0", "1", "2"])
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except Exception as e:
        print(json.dumps({"error": f"{type(e).__name__}: {e}"}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
