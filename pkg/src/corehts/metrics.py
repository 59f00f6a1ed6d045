"""Forecast evaluation: WMAPE, per-level MSE, coherency and sample CRPS.

Forecast matrices are m x T (series by timestep), like the panels.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .hierarchy import AggregationMatrix, HierarchySpec, coherency, coherency_columns

COHERENCY_NORMALIZATION = "mean over timesteps of ||y - A y||_2"
CRPS_ESTIMATOR = "energy form: mean|x_i - y| - sum_ij |x_i - x_j| / (2 n^2)"
AVERAGE_MSE = "entry-weighted mean over all series and timesteps"


def _pair(yhat, y) -> tuple[np.ndarray, np.ndarray]:
    yhat = np.asarray(yhat, dtype=float)
    y = np.asarray(y, dtype=float)
    if yhat.shape != y.shape:
        raise ValueError(f"forecast {yhat.shape} and truth {y.shape} differ in shape")
    return yhat, y


def wmape(yhat, y, rows=None) -> float:
    """sum |yhat - y| / sum y, optionally restricted to the given series rows."""
    yhat, y = _pair(yhat, y)
    if rows is not None:
        yhat, y = yhat[rows], y[rows]
    denom = float(np.sum(y))
    if not denom > 0:
        raise ValueError(f"WMAPE undefined: ground-truth total is {denom}")
    return float(np.sum(np.abs(yhat - y)) / denom)


def mse_per_level(yhat, y, spec: HierarchySpec) -> dict[int, float]:
    yhat, y = _pair(yhat, y)
    if yhat.shape[0] != spec.m:
        raise ValueError("forecast rows do not match the hierarchy")
    out = {}
    for lvl in spec.levels:
        rows = spec.level_rows(lvl)
        if rows.size == 0:
            raise ValueError(f"level {lvl} is empty")
        out[lvl] = float(np.mean((yhat[rows] - y[rows]) ** 2))
    return out


def wmape_per_level(yhat, y, spec: HierarchySpec) -> dict[int, float]:
    return {lvl: wmape(yhat, y, spec.level_rows(lvl)) for lvl in spec.levels}


def crps_empirical(samples, y) -> float:
    """Mean sample CRPS over every (series, timestep) cell.

    ``samples`` has a leading sample axis and otherwise matches ``y``
    (e.g. n x m x T against m x T, or n x 1 against a scalar).
    """
    samples = np.asarray(samples, dtype=float)
    y = np.asarray(y, dtype=float)
    if samples.ndim == 0 or samples.shape[0] == 0:
        raise ValueError("empty sample set")
    if samples.shape[1:] != y.shape and not (y.ndim == 0 and samples.shape[1:] in ((), (1,))):
        raise ValueError(f"samples {samples.shape} do not match observations {y.shape}")
    n = samples.shape[0]
    flat = np.ascontiguousarray(samples.reshape(n, -1))
    return float(np.mean(kernels.crps_energy(flat, y.reshape(-1))))


def coherency_of_samples(samples, A: AggregationMatrix) -> float:
    """Mean coherency of n sample vectors (n x m)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        return coherency(samples, A)
    if samples.ndim != 2 or samples.shape[1] != A.m:
        raise ValueError(f"samples {samples.shape} do not have {A.m} series per row")
    return float(coherency_columns(samples.T, A).mean())


def gaussian_samples(mean, stddev, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Independent per-series Gaussian draws, shape (n_samples, *mean.shape)."""
    mean = np.asarray(mean, dtype=float)
    stddev = np.asarray(stddev, dtype=float)
    return mean + stddev * rng.standard_normal((n_samples,) + mean.shape)


@dataclass
class MetricsReport:
    mse_by_level: dict[int, float]
    wmape_by_level: dict[int, float]
    average_mse: float
    wmape: float
    coherency: float
    crps: float | None = None
    sample_coherency: float | None = None
    n_series: int = 0
    n_timesteps: int = 0
    n_samples: int | None = None
    config_hash: str | None = None
    notes: dict = field(default_factory=lambda: {
        "coherency": COHERENCY_NORMALIZATION,
        "average_mse": AVERAGE_MSE,
        "crps": CRPS_ESTIMATOR,
        "levels": "1 = top of the hierarchy",
    })

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mse_by_level"] = {str(k): v for k, v in self.mse_by_level.items()}
        d["wmape_by_level"] = {str(k): v for k, v in self.wmape_by_level.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["mse_by_level"] = {int(k): v for k, v in d["mse_by_level"].items()}
        d["wmape_by_level"] = {int(k): v for k, v in d["wmape_by_level"].items()}
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def flat(self) -> dict[str, float | int | str | None]:
        row: dict = {
            "average_mse": self.average_mse,
            "wmape": self.wmape,
            "coherency": self.coherency,
            "crps": self.crps,
            "sample_coherency": self.sample_coherency,
        }
        for lvl, v in sorted(self.mse_by_level.items()):
            row[f"mse_l{lvl}"] = v
        for lvl, v in sorted(self.wmape_by_level.items()):
            row[f"wmape_l{lvl}"] = v
        row.update(n_series=self.n_series, n_timesteps=self.n_timesteps, config_hash=self.config_hash)
        return row

    def to_csv_row(self, header: bool = True) -> str:
        row = self.flat()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()


def evaluate(yhat, y, spec: HierarchySpec, A: AggregationMatrix, samples=None,
             config_hash: str | None = None) -> MetricsReport:
    """Point metrics for m x T forecasts, plus CRPS / sample coherency when
    samples (n x m x T) are given."""
    yhat, y = _pair(yhat, y)
    crps = sample_coh = None
    n = None
    if samples is not None:
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        crps = crps_empirical(samples, y)
        # (n, m, T) -> every (sample, timestep) column is one sample vector
        sample_coh = float(coherency_columns(samples.transpose(1, 0, 2).reshape(A.m, -1), A).mean())
    return MetricsReport(
        mse_by_level=mse_per_level(yhat, y, spec),
        wmape_by_level=wmape_per_level(yhat, y, spec),
        average_mse=float(np.mean((yhat - y) ** 2)),
        wmape=wmape(yhat, y),
        coherency=float(coherency_columns(yhat, A).mean()),
        crps=crps,
        sample_coherency=sample_coh,
        n_series=y.shape[0],
        n_timesteps=y.shape[1],
        n_samples=n,
        config_hash=config_hash,
    )
