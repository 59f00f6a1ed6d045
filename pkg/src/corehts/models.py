"""RNN forecasters whose last layer is a plain linear map.

All variants share the same encoder: a tanh RNN over a lag window of all
series. The point model batch-normalizes the final hidden state and feeds it
to the output layer; the distributional models treat the final hidden state
as a latent code, perturb it (Gaussian noise or dropout) and decode it with
two feed-forward layers, the last of which is the regularized output layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import FinalLinearLayer, GaussianForecast
from .numerics import INFER, SAMPLE, TRAIN, BatchNormState, Graph, ShapeError, Tensor, gaussian_noise

SD_FLOOR = 1e-4

VARIANTS = ("base", "core", "projection", "profhit_style")
MODES = ("point", "vae", "dropout")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Forward:
    z: Tensor  # input of the output layer (after batchnorm)
    raw: Tensor  # output layer result W z + b
    yhat: Tensor  # forecast (raw, or projected raw)
    sigma: Tensor | None = None


class Forecaster:
    """Shared parameter handling; subclasses define ``_body``."""

    #: parameter names in a fixed order (optimizer state and checkpoints rely on it)
    param_names: tuple[str, ...] = ()

    def __init__(self, m: int, lag: int, hidden: int, bn_width: int,
                 projection: np.ndarray | None = None, bn_momentum: float = 0.1, bn_eps: float = 1e-5):
        if m < 1 or lag < 1 or hidden < 1:
            raise ValueError("series count, lag and hidden width must be positive")
        self.m = m
        self.lag = lag
        self.hidden = hidden
        self.bn = BatchNormState(bn_width, momentum=bn_momentum, eps=bn_eps)
        self.params: dict[str, Tensor] = {}
        if projection is not None:
            projection = np.asarray(projection, dtype=float)
            if projection.shape != (m, m):
                raise ShapeError(f"projection must be {m}x{m}")
        self.projection = projection

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    @property
    def parameters(self) -> list[Tensor]:
        return [self.params[n] for n in self.param_names]

    @property
    def final_layer(self) -> FinalLinearLayer:
        return FinalLinearLayer(self.params["W"], self.params["b"])

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _check_windows(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1:] != (self.lag, self.m):
            raise ShapeError(f"windows must be (N, {self.lag}, {self.m}), got {X.shape}")
        return X

    def _encode(self, g: Graph, X: np.ndarray) -> Tensor:
        h, _ = g.rnn(X, self.params["U"], self.params["V"], self.params["c"])
        return h

    def _head(self, g: Graph, z: Tensor) -> tuple[Tensor, Tensor]:
        raw = g.linear(z, self.params["W"], self.params["b"])
        yhat = raw
        if self.projection is not None:
            yhat = g.matmul(raw, Tensor(self.projection.T))
        return raw, yhat

    def forward(self, g: Graph, X, mode: str = INFER, rng: np.random.Generator | None = None) -> Forward:
        raise NotImplementedError

    def predict(self, X, mode: str = INFER, rng: np.random.Generator | None = None) -> np.ndarray:
        return self.forward(Graph(), X, mode, rng).yhat.value

    # ---- state ------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"param.{k}": v.value.copy() for k, v in self.params.items()}
        state["bn.running_mean"] = self.bn.running_mean.copy()
        state["bn.running_var"] = self.bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            arr = np.asarray(state[f"param.{k}"], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"checkpoint tensor {k} has shape {arr.shape}, expected {t.shape}")
            t.value = arr.copy()
        self.bn.running_mean = np.asarray(state["bn.running_mean"], dtype=np.float64).copy()
        self.bn.running_var = np.asarray(state["bn.running_var"], dtype=np.float64).copy()


class RnnForecaster(Forecaster):
    """Point forecaster: RNN -> batchnorm(h_k) -> W z + b.

    With ``gaussian_head=True`` a second output layer produces per-series
    standard deviations (softplus plus a small floor).
    """

    def __init__(self, m: int, hidden: int = 128, lag: int = 5, rng: np.random.Generator | None = None,
                 projection: np.ndarray | None = None, gaussian_head: bool = False, **bn):
        super().__init__(m, lag, hidden, hidden, projection, **bn)
        rng = rng if rng is not None else np.random.default_rng(0)
        d = hidden
        self._add("U", _uniform(rng, (d, m), m))
        self._add("V", _uniform(rng, (d, d), d))
        self._add("c", _uniform(rng, (d,), d))
        self._add("W", _uniform(rng, (m, d), d))
        self._add("b", _uniform(rng, (m,), d))
        names = ["U", "V", "c", "W", "b"]
        self.gaussian_head = gaussian_head
        if gaussian_head:
            self._add("W_sd", _uniform(rng, (m, d), d))
            self._add("b_sd", _uniform(rng, (m,), d))
            names += ["W_sd", "b_sd"]
        self.param_names = tuple(names)

    def forward(self, g, X, mode=INFER, rng=None):
        X = self._check_windows(X)
        h = self._encode(g, X)
        z = g.batchnorm(h, self.bn, mode)
        raw, yhat = self._head(g, z)
        sigma = None
        if self.gaussian_head:
            sigma = g.softplus(g.linear(z, self.params["W_sd"], self.params["b_sd"]), floor=SD_FLOOR)
        return Forward(z, raw, yhat, sigma)


class _LatentForecaster(Forecaster):
    """Encoder RNN -> latent perturbation -> tanh layer -> batchnorm -> W z + b."""

    def __init__(self, m: int, hidden: int = 128, lag: int = 5, rng: np.random.Generator | None = None,
                 projection: np.ndarray | None = None, decoder_width: int | None = None, **bn):
        dec = decoder_width or hidden
        super().__init__(m, lag, hidden, dec, projection, **bn)
        rng = rng if rng is not None else np.random.default_rng(0)
        d = hidden
        self.decoder_width = dec
        self._add("U", _uniform(rng, (d, m), m))
        self._add("V", _uniform(rng, (d, d), d))
        self._add("c", _uniform(rng, (d,), d))
        self._add("W1", _uniform(rng, (dec, d), d))
        self._add("b1", _uniform(rng, (dec,), d))
        self._add("W", _uniform(rng, (m, dec), dec))
        self._add("b", _uniform(rng, (m,), dec))
        self.param_names = ("U", "V", "c", "W1", "b1", "W", "b")

    def _perturb(self, g: Graph, theta: Tensor, mode: str, rng) -> Tensor:
        raise NotImplementedError

    def decode(self, g: Graph, theta: Tensor, mode: str) -> Forward:
        hidden = g.tanh(g.linear(theta, self.params["W1"], self.params["b1"]))
        z = g.batchnorm(hidden, self.bn, mode)
        raw, yhat = self._head(g, z)
        return Forward(z, raw, yhat)

    def forward(self, g, X, mode=INFER, rng=None):
        X = self._check_windows(X)
        theta = self._perturb(g, self._encode(g, X), mode, rng)
        return self.decode(g, theta, mode)


class VaeForecaster(_LatentForecaster):
    """Adds ``noise_scale * N(0, I)`` to the latent code in train and sample modes."""

    def __init__(self, m, hidden=128, lag=5, rng=None, projection=None, decoder_width=None,
                 noise_scale: float = 1.0, **bn):
        super().__init__(m, hidden, lag, rng, projection, decoder_width, **bn)
        if noise_scale < 0:
            raise ValueError("noise scale must be nonnegative")
        self.noise_scale = noise_scale

    def _perturb(self, g, theta, mode, rng):
        if mode == INFER or self.noise_scale == 0.0:
            return theta
        if rng is None:
            raise ValueError("latent noise needs an rng")
        eps = Tensor(gaussian_noise(theta.shape, rng) * self.noise_scale)
        return g.add(theta, eps)


class DropoutForecaster(_LatentForecaster):
    """Drops encoder hidden units in train and sample modes; the output layer never sees dropout."""

    def __init__(self, m, hidden=128, lag=5, rng=None, projection=None, decoder_width=None,
                 rate: float = 0.1, **bn):
        super().__init__(m, hidden, lag, rng, projection, decoder_width, **bn)
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def _perturb(self, g, theta, mode, rng):
        return g.dropout(theta, self.rate, rng, mode)


def build_model(variant: str, mode: str, m: int, *, hidden: int = 128, lag: int = 5,
                rng: np.random.Generator | None = None, projection: np.ndarray | None = None,
                dropout_rate: float = 0.1, noise_scale: float = 1.0) -> Forecaster:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; choose from {MODES}")
    P = projection if variant == "projection" else None
    if variant == "projection" and P is None:
        raise ValueError("projection variant needs a projection matrix")
    if mode == "point":
        return RnnForecaster(m, hidden, lag, rng, projection=P, gaussian_head=variant == "profhit_style")
    if variant == "profhit_style":
        raise ValueError("the profhit_style baseline is a parametric (point-mode) model")
    if mode == "vae":
        return VaeForecaster(m, hidden, lag, rng, projection=P, noise_scale=noise_scale)
    return DropoutForecaster(m, hidden, lag, rng, projection=P, rate=dropout_rate)


# ---- functional entry points --------------------------------------------------
def rnn_forward(window, model: Forecaster, mode: str = INFER, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """(z, yhat) for one window (k, m) or a batch (N, k, m)."""
    out = model.forward(Graph(), window, mode, rng)
    z, y = out.z.value, out.yhat.value
    if np.asarray(window).ndim == 2:
        return z[0], y[0]
    return z, y


def projection_forward(window, model: Forecaster, P: np.ndarray, mode: str = INFER) -> np.ndarray:
    out = model.forward(Graph(), window, mode)
    y = out.raw.value @ np.asarray(P).T
    return y[0] if np.asarray(window).ndim == 2 else y


def profhit_forward(window, model: RnnForecaster, mode: str = INFER) -> GaussianForecast:
    if not getattr(model, "gaussian_head", False):
        raise ValueError("model has no standard-deviation head")
    out = model.forward(Graph(), window, mode)
    mu, sd = out.yhat.value, out.sigma.value
    if np.asarray(window).ndim == 2:
        mu, sd = mu[0], sd[0]
    return GaussianForecast(mu, sd)


def sample_forecasts(model: Forecaster, X, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_samples`` stochastic forecasts per window: shape (n_samples, N, m).

    Batchnorm uses its running statistics; randomness comes from the latent
    noise (VAE) or encoder dropout masks.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    X = model._check_windows(X)
    N = X.shape[0]
    rep = np.broadcast_to(X, (n_samples,) + X.shape).reshape(n_samples * N, *X.shape[1:])
    y = model.forward(Graph(), rep, SAMPLE, rng).yhat.value
    return y.reshape(n_samples, N, model.m)


def vae_sample(window, model: VaeForecaster, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """(n_samples, m) forecasts decoded from noisy copies of one window's latent code."""
    if not isinstance(model, VaeForecaster):
        raise TypeError("vae_sample needs a VaeForecaster")
    return sample_forecasts(model, window, n_samples, rng)[:, 0, :]


def dropout_sample(window, model: DropoutForecaster, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """(n_samples, m) forecasts from independent encoder dropout masks."""
    if not isinstance(model, DropoutForecaster):
        raise TypeError("dropout_sample needs a DropoutForecaster")
    return sample_forecasts(model, window, n_samples, rng)[:, 0, :]


__all__ = [
    "Forecaster", "RnnForecaster", "VaeForecaster", "DropoutForecaster", "Forward", "build_model",
    "rnn_forward", "projection_forward", "profhit_forward", "sample_forecasts", "vae_sample",
    "dropout_sample", "VARIANTS", "MODES", "TRAIN", "INFER", "SAMPLE",
]
