"""Command line entry point (``corehts`` / ``python -m corehts``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, generate_synthetic, load_panel, make_noisy, noisy_manifest, prepare, save_dataset
from .harness.bound import DEFAULT_DELTAS, verify_bound
from .harness.checkpoint import load_checkpoint
from .harness.config import STREAM_DATA, ConfigError, TrainConfig, seed_stream
from .harness.experiments import DEFAULT_WEIGHTS, curves_rows, noisy_experiment, rows_to_csv, sweep_weights
from .harness.training import RunReport, TrainingDiverged, evaluate_model, make_model, train
from .hierarchy import HierarchyError
from .models import MODES, VARIANTS

log = logging.getLogger("corehts")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--values", required=required, help="wide CSV: header of series ids, one row per timestep")
    p.add_argument("--hierarchy", required=required, help="CSV with header child,parent")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file overriding defaults (flags override the file)")
    p.add_argument("--hidden", type=int)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corehts", description="Coherency-regularized hierarchical forecasting")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and evaluate it on the test split")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("sweep", help="train one model per coherency weight and select by validation")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--weights", type=_float_list, default=list(DEFAULT_WEIGHTS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("noisy", help="run variants over many leaf-dropped copies of a dataset")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--n-datasets", type=int, default=20)
    p.add_argument("--drop", type=float, default=0.2)
    p.add_argument("--variants", default="base,core,projection,profhit_style")
    p.add_argument("--sweep", action="store_true", help="choose regularization weights by validation per dataset")
    p.add_argument("--weights", type=_float_list, default=list(DEFAULT_WEIGHTS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("verify-bound", help="Monte Carlo tail table for the coherency bound")
    p.add_argument("--d", type=int, action="append", help="width of z (repeatable); default 8, 32, 128")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--deltas", type=_float_list, default=list(DEFAULT_DELTAS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out-dir")

    p = sub.add_parser("make-noisy", help="drop a random fraction of leaves, keeping aggregates")
    _add_data_args(p)
    p.add_argument("--drop", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic coherent dataset")
    p.add_argument("--leaves", type=int, default=4, help="children per aggregate node")
    p.add_argument("--depth", type=int, default=3, help="number of hierarchy levels")
    p.add_argument("--timesteps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    return parser


def resolve_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        base = json.loads(TrainConfig.from_json(Path(args.config).read_text(encoding="utf-8")).to_json())
    for key in ("variant", "mode", "weight", "seed", "hidden", "max_epochs", "patience"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return TrainConfig.from_dict(base)


def run_id(cfg: TrainConfig) -> str:
    return f"{cfg.variant}-{cfg.mode}-w{cfg.weight:g}-s{cfg.seed}"


def _write_run(out: Path, rid: str, report: RunReport) -> None:
    d = out / "runs" / rid
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")


def _summary_row(rid: str, report: RunReport) -> dict:
    row = {"run": rid, "variant": report.config["variant"], "mode": report.config["mode"],
           "weight": report.config["weight"], "seed": report.config["seed"], "best_epoch": report.best_epoch,
           "val_mse": report.best_val_mse, "final_lc": report.final_layer["lc"]}
    row.update(report.test_metrics.flat())
    return row


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    panel, spec = load_panel(args.values, args.hierarchy)
    data = prepare(panel, spec, cfg.lag)
    out = Path(args.out_dir)
    rid = run_id(cfg)
    (out / "runs" / rid).mkdir(parents=True, exist_ok=True)
    result = train(cfg, data, checkpoint_path=out / "runs" / rid / "checkpoint")
    _write_run(out, rid, result.report)
    (out / "summary.csv").write_text(rows_to_csv([_summary_row(rid, result.report)]), encoding="utf-8")
    (out / "curves.csv").write_text(rows_to_csv(curves_rows(result.report, rid)), encoding="utf-8")
    print(result.report.test_metrics.to_json())
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    panel, spec = load_panel(args.values, args.hierarchy)
    data = prepare(panel, spec, cfg.lag)
    res = sweep_weights(cfg, data, args.weights, args.workers)
    out = Path(args.out_dir)
    summary, curves = [], []
    for w, rep in zip(res.weights, res.reports):
        rid = run_id(cfg.replace(weight=w))
        _write_run(out, rid, rep)
        summary.append(_summary_row(rid, rep))
        curves += curves_rows(rep, rid)
    (out / "summary.csv").write_text(rows_to_csv(summary), encoding="utf-8")
    (out / "curves.csv").write_text(rows_to_csv(curves), encoding="utf-8")
    (out / "sweep.csv").write_text(rows_to_csv(res.rows()), encoding="utf-8")
    print(f"best weight {res.best_weight:g} (validation MSE {res.best_report.best_val_mse:.6g})")
    return 0


def cmd_noisy(args) -> int:
    cfg = resolve_config(args)
    panel, spec = load_panel(args.values, args.hierarchy)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}")
    res = noisy_experiment(panel, spec, cfg, args.n_datasets, args.drop, variants, cfg.seed,
                           args.weights if args.sweep else None, args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "noisy_runs.csv").write_text(rows_to_csv(res.runs), encoding="utf-8")
    (out / "summary.csv").write_text(rows_to_csv(res.table()), encoding="utf-8")
    (out / "datasets.json").write_text(json.dumps(res.datasets, indent=2), encoding="utf-8")
    for row in res.table():
        print(f"{row['variant']:>14}: coherency {row['coherency_mean']:.4g} ± {row['coherency_std']:.2g}"
              f"  wmape {row['wmape_mean']:.4g} ± {row['wmape_std']:.2g}")
    return 0


def cmd_verify_bound(args) -> int:
    rows = []
    for d in args.d or [8, 32, 128]:
        rows += verify_bound(d, args.trials, args.deltas, args.seed)
    text = rows_to_csv(rows)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bound_table.csv").write_text(text, encoding="utf-8")
    print(f"{'d':>4} {'delta':>7} {'P(c>delta*lc)':>14} {'P(|z|>delta)':>13} {'4exp(-δ²/8d)':>13} {'4exp(-δ²/8d²)':>14}")
    for r in rows:
        print(f"{r['d']:>4} {r['delta']:>7g} {r['violation_freq']:>14.5f} {r['norm_exceed_freq']:>13.5f}"
              f" {r['bound_8d']:>13.5g} {r['bound_8d2']:>14.5g}")
    print("note: the 8d^2 column is shown for comparison only; E||z||^2 = d gives the 8d form, "
          "which is the one checked")
    failed = [r for r in rows if not r["holds_8d"]]
    if failed:
        print(f"bound violated in {len(failed)} rows", file=sys.stderr)
        return 1
    return 0


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_dict(ck["meta"]["config"])
    panel, spec = load_panel(args.values, args.hierarchy)
    data = prepare(panel, spec, cfg.lag)
    model = make_model(cfg, data)
    model.load_state_dict(ck["model"])
    metrics = evaluate_model(model, cfg, data, args.split)
    text = metrics.to_json()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "evaluation.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_make_noisy(args) -> int:
    panel, spec = load_panel(args.values, args.hierarchy)
    noisy, nspec, _ = make_noisy(panel, spec, args.drop, seed_stream(args.seed, STREAM_DATA))
    out = Path(args.out_dir)
    save_dataset(noisy, nspec, out)
    (out / "manifest.json").write_text(noisy_manifest(str(args.values), args.seed, noisy) + "\n", encoding="utf-8")
    print(f"dropped {len(noisy.metadata['dropped'])} leaves; raw coherency {noisy.metadata['raw_coherency']:.6g}")
    return 0


def cmd_gen_synthetic(args) -> int:
    panel, spec = generate_synthetic(args.leaves, args.depth, args.timesteps, args.seed)
    vpath, hpath = save_dataset(panel, spec, args.out_dir)
    print(f"wrote {spec.m} series x {panel.S} timesteps to {vpath} and {hpath}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "sweep": cmd_sweep,
    "noisy": cmd_noisy,
    "verify-bound": cmd_verify_bound,
    "evaluate": cmd_evaluate,
    "make-noisy": cmd_make_noisy,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="raise", invalid="raise"):
            return COMMANDS[args.command](args)
    except (ConfigError, DataError, HierarchyError, TrainingDiverged, FloatingPointError,
            ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
