"""Weight sweeps and the multi-dataset noisy-data experiment."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..data import PreparedData, SeriesPanel, make_noisy, prepare
from ..hierarchy import HierarchyError, HierarchySpec
from .config import STREAM_DATA, TrainConfig, seed_stream
from .training import RunReport, train

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (1e-4, 1e-3, 1e-2, 1e-1)


def _train_report(args) -> RunReport:
    config, data = args
    return train(config, data).report


def run_many(jobs: list[tuple[TrainConfig, PreparedData]], workers: int = 1) -> list[RunReport]:
    """Train independent runs, optionally in worker processes; order is preserved."""
    if workers <= 1 or len(jobs) <= 1:
        return [_train_report(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_train_report, jobs))


@dataclass
class SweepResult:
    weights: list[float]
    reports: list[RunReport]
    best_index: int

    @property
    def best_weight(self) -> float:
        return self.weights[self.best_index]

    @property
    def best_report(self) -> RunReport:
        return self.reports[self.best_index]

    @property
    def val_scores(self) -> list[float]:
        return [r.best_val_mse for r in self.reports]

    def rows(self) -> list[dict]:
        out = []
        for w, r in zip(self.weights, self.reports):
            out.append({
                "weight": w,
                "val_mse": r.best_val_mse,
                "best_epoch": r.best_epoch,
                "final_lc": r.final_layer["lc"],
                "test_coherency": r.test["coherency"],
                "test_wmape": r.test["wmape"],
                "test_average_mse": r.test["average_mse"],
                "selected": w == self.best_weight,
            })
        return out


def sweep_weights(config: TrainConfig, data: PreparedData, weights=DEFAULT_WEIGHTS,
                  workers: int = 1) -> SweepResult:
    """One run per weight (same seed); the weight with the lowest validation MSE wins."""
    weights = [float(w) for w in weights]
    if not weights:
        raise ValueError("need at least one weight")
    reports = run_many([(config.replace(weight=w), data) for w in weights], workers)
    best = int(np.argmin([r.best_val_mse for r in reports]))
    return SweepResult(weights, reports, best)


# ---- noisy-data protocol -------------------------------------------------------
@dataclass
class NoisyDataset:
    index: int
    attempt: int
    data: PreparedData
    dropped: list[str]
    raw_coherency: float


def noisy_datasets(panel: SeriesPanel, spec: HierarchySpec, n_datasets: int = 20, drop: float = 0.2,
                   seed: int = 0, k: int = 5, max_attempts: int = 50) -> list[NoisyDataset]:
    """Draw ``n_datasets`` distinct leaf-dropped datasets.

    A draw that would leave some aggregate without children is rejected and
    redrawn from the next sub-seed; ``attempt`` records which one was used.
    """
    out: list[NoisyDataset] = []
    seen: set[tuple[str, ...]] = set()
    for i in range(n_datasets):
        for attempt in range(max_attempts):
            try:
                noisy, nspec, _ = make_noisy(panel, spec, drop, seed_stream(seed, STREAM_DATA, i, attempt))
            except HierarchyError:
                continue
            key = tuple(noisy.metadata["dropped"])
            if key in seen and drop > 0:
                continue
            seen.add(key)
            out.append(NoisyDataset(i, attempt, prepare(noisy, nspec, k), list(key), noisy.metadata["raw_coherency"]))
            break
        else:
            raise HierarchyError(f"could not draw noisy dataset {i} in {max_attempts} attempts")
    return out


def _mean_std(vals) -> tuple[float, float]:
    a = np.asarray(vals, dtype=float)
    return float(a.mean()), float(a.std())


@dataclass
class NoisyResult:
    runs: list[dict] = field(default_factory=list)
    datasets: list[dict] = field(default_factory=list)

    def table(self) -> list[dict]:
        """One row per variant: mean and std over datasets of each metric."""
        rows = []
        variants = list(dict.fromkeys(r["variant"] for r in self.runs))
        for v in variants:
            runs = [r for r in self.runs if r["variant"] == v]
            row: dict = {"variant": v, "n_runs": len(runs)}
            keys = [k for k in runs[0] if k.startswith(("coherency", "wmape", "average_mse", "mse_l", "crps", "sample_coherency"))]
            for k in keys:
                vals = [r[k] for r in runs if r[k] is not None]
                if vals:
                    row[f"{k}_mean"], row[f"{k}_std"] = _mean_std(vals)
            rows.append(row)
        return rows


def noisy_experiment(panel: SeriesPanel, spec: HierarchySpec, config: TrainConfig, n_datasets: int = 20,
                     drop: float = 0.2, variants=("base", "core", "projection", "profhit_style"),
                     seed: int = 0, weights=None, workers: int = 1) -> NoisyResult:
    """Run every variant on ``n_datasets`` noisy copies of ``panel``.

    Regularized variants use ``config.weight`` unless ``weights`` is given,
    in which case the weight is chosen per dataset by validation MSE.
    """
    sets = noisy_datasets(panel, spec, n_datasets, drop, seed, config.lag)
    result = NoisyResult(datasets=[{"dataset": d.index, "attempt": d.attempt, "dropped": d.dropped,
                                    "raw_coherency": d.raw_coherency} for d in sets])
    for ds in sets:
        for v in variants:
            cfg = config.replace(variant=v)
            tunable = v in ("core", "profhit_style") and weights is not None
            if tunable:
                rep = sweep_weights(cfg, ds.data, weights, workers).best_report
            else:
                rep = train(cfg, ds.data).report
            test = rep.test
            row = {"dataset": ds.index, "variant": v, "weight": rep.config["weight"], "seed": cfg.seed,
                   "best_epoch": rep.best_epoch, "val_mse": rep.best_val_mse,
                   "coherency": test["coherency"], "wmape": test["wmape"], "average_mse": test["average_mse"],
                   "crps": test["crps"], "sample_coherency": test["sample_coherency"]}
            for lvl, val in sorted(test["mse_by_level"].items(), key=lambda kv: int(kv[0])):
                row[f"mse_l{lvl}"] = val
            for lvl, val in sorted(test["wmape_by_level"].items(), key=lambda kv: int(kv[0])):
                row[f"wmape_l{lvl}"] = val
            result.runs.append(row)
            log.info("noisy dataset %d %s: coherency %.4g wmape %.4g", ds.index, v, row["coherency"], row["wmape"])
    return result


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    fields_: list[str] = []
    for r in rows:
        for k in r:
            if k not in fields_:
                fields_.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields_, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields_})
    return buf.getvalue()


def curves_rows(report: RunReport, run_id: str) -> list[dict]:
    c = report.curves
    return [{"run": run_id, "epoch": i + 1, "train_loss": c["train_loss"][i], "train_mse": c["train_mse"][i],
             "lc": c["lc"][i], "val_mse": c["val_mse"][i]} for i in range(len(c["val_mse"]))]
