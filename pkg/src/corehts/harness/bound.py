"""Monte Carlo check of the high-probability coherency bound.

z is drawn as an idealized batchnorm output (i.i.d. standard normal, so
E||z||^2 = d) and each trial gets its own random output layer. For every
delta we compare the frequency of c(yhat) > delta * l_c(L) with

* 4 exp(-delta^2 / (8 d)), which follows from E||z||^2 = d, and
* 4 exp(-delta^2 / (8 d^2)), a looser variant (d >= 1) reported alongside.

Only the 8d version is asserted.
"""
from __future__ import annotations

import numpy as np

from ..hierarchy import AggregationMatrix, HierarchySpec, build_aggregation

DEFAULT_DELTAS = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)


def example_hierarchy() -> HierarchySpec:
    """Three levels, eight series: y1 -> (y2, y3), y2 -> y4..y6, y3 -> y7, y8."""
    parent = {"y2": "y1", "y3": "y1", "y4": "y2", "y5": "y2", "y6": "y2", "y7": "y3", "y8": "y3"}
    return HierarchySpec(tuple(f"y{i}" for i in range(1, 9)), parent)


def tail_bound_8d(delta, d: int) -> np.ndarray:
    return np.minimum(1.0, 4.0 * np.exp(-np.asarray(delta, dtype=float) ** 2 / (8.0 * d)))


def tail_bound_8d2(delta, d: int) -> np.ndarray:
    return np.minimum(1.0, 4.0 * np.exp(-np.asarray(delta, dtype=float) ** 2 / (8.0 * d * d)))


def sample_trials(d: int, n_trials: int, A: AggregationMatrix, rng: np.random.Generator,
                  chunk: int = 4096, coherent_layers: bool = False):
    """Return (coherency, l_c, ||z||, ||yhat||) arrays of length ``n_trials``."""
    m = A.m
    R = np.eye(m) - A.entries
    coh, lc, znorm, ynorm = (np.empty(n_trials) for _ in range(4))
    S = A.entries[:, list(A.leaf_indices)]
    for start in range(0, n_trials, chunk):
        n = min(chunk, n_trials - start)
        if coherent_layers:
            W = np.einsum("ij,njd->nid", S, rng.standard_normal((n, S.shape[1], d)))
            b = rng.standard_normal((n, S.shape[1])) @ S.T
        else:
            W = rng.standard_normal((n, m, d))
            b = rng.standard_normal((n, m))
        z = rng.standard_normal((n, d))
        y = np.einsum("nmd,nd->nm", W, z) + b
        sl = slice(start, start + n)
        coh[sl] = np.linalg.norm(y @ R.T, axis=1)
        lc[sl] = np.linalg.norm(np.einsum("ij,njd->nid", R, W).reshape(n, -1), axis=1) + np.linalg.norm(b @ R.T, axis=1)
        znorm[sl] = np.linalg.norm(z, axis=1)
        ynorm[sl] = np.linalg.norm(y, axis=1)
    return coh, lc, znorm, ynorm


def verify_bound(d: int, n_trials: int = 100_000, deltas=DEFAULT_DELTAS, seed: int = 0,
                 A: AggregationMatrix | None = None, coherent_layers: bool = False) -> list[dict]:
    """One row per delta with empirical frequencies and both analytic bounds."""
    if d < 1:
        raise ValueError("d must be at least 1")
    if n_trials < 1000:
        raise ValueError("use at least 1000 trials")
    A = A if A is not None else build_aggregation(example_hierarchy())
    rng = np.random.default_rng(seed)
    coh, lc, znorm, ynorm = sample_trials(d, n_trials, A, rng, coherent_layers=coherent_layers)
    # roundoff allowance: a coherent layer's outputs are coherent only up to float error
    allowance = 64 * np.finfo(float).eps * A.m * ynorm
    rows = []
    for delta in deltas:
        freq = float(np.mean(coh > delta * lc + allowance))
        freq_norm = float(np.mean(znorm > delta))
        b8d = float(tail_bound_8d(delta, d))
        b8d2 = float(tail_bound_8d2(delta, d))
        rows.append({
            "d": d,
            "delta": float(delta),
            "n_trials": n_trials,
            "violation_freq": freq,
            "norm_exceed_freq": freq_norm,
            "bound_8d": b8d,
            "bound_8d2": b8d2,
            "holds_8d": freq <= b8d,
            "holds_8d2": freq <= b8d2,
            "violation_le_norm_exceed": freq <= freq_norm,
        })
    return rows
