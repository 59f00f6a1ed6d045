"""Accuracy losses, the network coherency regularizer and baseline losses.

Every loss takes an optional :class:`~corehts.numerics.Graph`; plain arrays
are wrapped as constants, so the functions double as numpy evaluators::

    float(mse(yhat, y))
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hierarchy import AggregationMatrix
from .numerics import Graph, ShapeError, Tensor, as_tensor


@dataclass
class FinalLinearLayer:
    """The output layer y = W z + b, with W of shape (m, d) and b of length m."""

    W: Tensor
    b: Tensor

    def __post_init__(self):
        self.W = as_tensor(self.W)
        self.b = as_tensor(self.b)
        if self.W.value.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"final layer needs W (m, d) and b (m,), got {self.W.shape}, {self.b.shape}")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    def __call__(self, z) -> np.ndarray:
        return np.asarray(z) @ self.W.value.T + self.b.value


@dataclass
class GaussianForecast:
    mean: Tensor
    stddev: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.stddev = as_tensor(self.stddev)
        if self.mean.shape != self.stddev.shape:
            raise ShapeError("mean and stddev shapes differ")
        if np.any(self.stddev.value <= 0):
            raise ValueError("standard deviations must be positive")


def _residual_operator(A: AggregationMatrix, m: int) -> np.ndarray:
    if A.m != m:
        raise ShapeError(f"aggregation matrix is {A.m}x{A.m}, layer has {m} outputs")
    return np.eye(m) - A.entries


def _pair(yhat, y) -> tuple[Tensor, Tensor]:
    yhat, y = as_tensor(yhat), as_tensor(y)
    if yhat.shape != y.shape:
        raise ShapeError(f"forecast {yhat.shape} and target {y.shape} differ in shape")
    return yhat, y


def mse(yhat, y, g: Graph | None = None) -> Tensor:
    g = g if g is not None else Graph()
    yhat, y = _pair(yhat, y)
    return g.mean_sq(g.sub(yhat, y))


def mae(yhat, y, g: Graph | None = None) -> Tensor:
    g = g if g is not None else Graph()
    yhat, y = _pair(yhat, y)
    return g.mean_abs(g.sub(yhat, y))


ACCURACY = {"mse": mse, "mae": mae}


def core_regularizer(layer: FinalLinearLayer, A: AggregationMatrix, g: Graph | None = None) -> Tensor:
    """||W - A W||_F + ||b - A b||_2."""
    g = g if g is not None else Graph()
    R = Tensor(_residual_operator(A, layer.m))
    w_term = g.frobenius_norm(g.matmul(R, layer.W))
    b_col = g.reshape(layer.b, (layer.m, 1))
    b_term = g.frobenius_norm(g.matmul(R, b_col))
    return g.add_scalars(w_term, b_term)


def combined_loss(yhat, y, layer: FinalLinearLayer, A: AggregationMatrix, w: float,
                  accuracy: str = "mse", g: Graph | None = None) -> Tensor:
    """``w * core_regularizer + accuracy``.

    With ``w == 0`` the regularizer is left off the tape entirely, so training
    follows the unregularized trajectory bit for bit.
    """
    if w < 0:
        raise ValueError("coherency weight must be nonnegative")
    try:
        acc_fn = ACCURACY[accuracy]
    except KeyError:
        raise ValueError(f"unknown accuracy loss {accuracy!r}") from None
    g = g if g is not None else Graph()
    acc = acc_fn(yhat, y, g)
    if w == 0:
        return acc
    return g.add_scalars(acc, g.scale(core_regularizer(layer, A, g), w))


def coherency_bound(layer: FinalLinearLayer, A: AggregationMatrix, z) -> np.ndarray:
    """Per-row ||z||_2 * ||W - A W||_F + ||b - A b||_2 for a batch z of shape (N, d)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != layer.W.shape[1]:
        raise ShapeError(f"activations {z.shape} do not fit layer input width {layer.W.shape[1]}")
    R = _residual_operator(A, layer.m)
    w_norm = np.linalg.norm(R @ layer.W.value)
    b_norm = np.linalg.norm(R @ layer.b.value)
    return np.linalg.norm(z, axis=1) * w_norm + b_norm


def layer_coherency_terms(layer: FinalLinearLayer, A: AggregationMatrix) -> tuple[float, float]:
    """(||W - A W||_F, ||b - A b||_2) as plain floats."""
    R = _residual_operator(A, layer.m)
    return float(np.linalg.norm(R @ layer.W.value)), float(np.linalg.norm(R @ layer.b.value))


def profhit_consistency(f: GaussianForecast, A: AggregationMatrix, g: Graph | None = None) -> Tensor:
    """Squared moment distance between each series' Gaussian and its leaf aggregate.

    For one forecast: sum_i (mu_i - (A mu)_i)^2 + (sigma_i - sqrt((A sigma^2)_i))^2,
    with aggregate variance computed as if the leaves were independent. A batch
    of forecasts (rows) is averaged over rows.
    """
    g = g if g is not None else Graph()
    mu, sigma = f.mean, f.stddev
    if mu.value.ndim == 1:
        mu = g.reshape(mu, (1, -1))
        sigma = g.reshape(sigma, (1, -1))
    if mu.shape[1] != A.m:
        raise ShapeError(f"forecast has {mu.shape[1]} series, hierarchy has {A.m}")
    At = Tensor(A.entries.T)
    rows = mu.shape[0]
    mean_gap = g.sub(mu, g.matmul(mu, At))
    agg_sd = g.sqrt(g.matmul(g.square(sigma), At))
    sd_gap = g.sub(sigma, agg_sd)
    total = g.add_scalars(g.sum(g.square(mean_gap)), g.sum(g.square(sd_gap)))
    return g.scale(total, 1.0 / rows)


def gaussian_nll(f: GaussianForecast, y, g: Graph | None = None) -> Tensor:
    g = g if g is not None else Graph()
    return g.gaussian_nll(f.mean, f.stddev, y)
