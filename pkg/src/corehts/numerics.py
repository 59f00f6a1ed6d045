"""Small reverse-mode autodiff over dense float64 arrays.

Only the operations the forecasters need are provided. A :class:`Graph`
records operations in execution order (which is a topological order), and
:meth:`Graph.backward` replays the tape in reverse, accumulating gradients
into every :class:`Tensor` that requires them.

    >>> g = Graph()
    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> loss = g.frobenius_norm(w)
    >>> g.backward(loss)
    >>> w.grad
    array([[0.5, 0.5],
           [0.5, 0.5]])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

TRAIN, INFER, SAMPLE = "train", "infer", "sample"
_MODES = (TRAIN, INFER, SAMPLE)


class ShapeError(ValueError):
    pass


class Tensor:
    """A float64 array with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _raise_not_scalar(self)

    def __float__(self) -> float:
        return self.item()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"tensor of shape {t.shape} is not a scalar")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.value.shape:
        g = g.reshape(t.value.shape)
    t.grad = g if t.grad is None else t.grad + g


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


@dataclass
class BatchNormState:
    """Running statistics for a non-affine batch normalization layer."""

    dim: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    running_var: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("batchnorm eps must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("batchnorm momentum must lie in [0, 1]")
        if self.running_mean is None:
            self.running_mean = np.zeros(self.dim)
        if self.running_var is None:
            self.running_var = np.ones(self.dim)


class Graph:
    """Tape of differentiable operations for one forward/backward pass."""

    def __init__(self):
        self._tape: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._done = False

    def __len__(self) -> int:
        return len(self._tape)

    def _record(self, out: Tensor, parents: Sequence[Tensor], backward) -> Tensor:
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            self._tape.append((out, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        if self._done:
            raise RuntimeError("backward already ran on this graph")
        if loss.value.size != 1:
            raise ShapeError("backward needs a scalar loss")
        if not np.isfinite(loss.value).all():
            raise FloatingPointError(f"non-finite loss {loss.value.ravel()[0]!r}")
        self._done = True
        loss.grad = np.ones_like(loss.value)
        for out, fn in reversed(self._tape):
            if out.grad is not None:
                fn(out.grad)

    # ---- elementwise / linear algebra ---------------------------------
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        out = Tensor(a.value @ b.value)

        def back(g):
            if a.requires_grad:
                _acc(a, g @ b.value.T)
            if b.requires_grad:
                _acc(b, a.value.T @ g)

        return self._record(out, (a, b), back)

    def linear(self, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
        """Row-wise affine map x @ W.T + b, with W stored (out, in)."""
        if x.value.ndim != 2 or W.value.ndim != 2 or x.shape[1] != W.shape[1]:
            raise ShapeError(f"linear: input {x.shape} does not fit weights {W.shape}")
        if b.shape != (W.shape[0],):
            raise ShapeError(f"linear: bias {b.shape} does not fit weights {W.shape}")
        out = Tensor(x.value @ W.value.T + b.value)

        def back(g):
            if x.requires_grad:
                _acc(x, g @ W.value)
            if W.requires_grad:
                _acc(W, g.T @ x.value)
            if b.requires_grad:
                _acc(b, g.sum(axis=0))

        return self._record(out, (x, W, b), back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape(a, b, "add")
        out = Tensor(a.value + b.value)

        def back(g):
            _acc(a, g)
            _acc(b, g)

        return self._record(out, (a, b), back)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape(a, b, "sub")
        out = Tensor(a.value - b.value)

        def back(g):
            _acc(a, g)
            if b.requires_grad:
                _acc(b, -g)

        return self._record(out, (a, b), back)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _same_shape(a, b, "mul")
        out = Tensor(a.value * b.value)

        def back(g):
            if a.requires_grad:
                _acc(a, g * b.value)
            if b.requires_grad:
                _acc(b, g * a.value)

        return self._record(out, (a, b), back)

    def scale(self, x: Tensor, s: float) -> Tensor:
        s = float(s)
        out = Tensor(x.value * s)
        return self._record(out, (x,), lambda g: _acc(x, g * s))

    def reshape(self, x: Tensor, shape) -> Tensor:
        out = Tensor(x.value.reshape(shape))
        return self._record(out, (x,), lambda g: _acc(x, g.reshape(x.shape)))

    def tanh(self, x: Tensor) -> Tensor:
        y = np.tanh(x.value)
        out = Tensor(y)
        return self._record(out, (x,), lambda g: _acc(x, g * (1.0 - y * y)))

    def square(self, x: Tensor) -> Tensor:
        out = Tensor(x.value * x.value)
        return self._record(out, (x,), lambda g: _acc(x, 2.0 * g * x.value))

    def sqrt(self, x: Tensor) -> Tensor:
        y = np.sqrt(x.value)
        out = Tensor(y)
        return self._record(out, (x,), lambda g: _acc(x, 0.5 * g / y))

    def softplus(self, x: Tensor, floor: float = 0.0) -> Tensor:
        out = Tensor(np.logaddexp(0.0, x.value) + floor)
        sig = 0.5 * (1.0 + np.tanh(0.5 * x.value))
        return self._record(out, (x,), lambda g: _acc(x, g * sig))

    # ---- reductions ----------------------------------------------------
    def sum(self, x: Tensor) -> Tensor:
        out = Tensor(np.sum(x.value))
        return self._record(out, (x,), lambda g: _acc(x, np.full(x.shape, g.item())))

    def mean(self, x: Tensor) -> Tensor:
        n = x.value.size
        out = Tensor(np.mean(x.value))
        return self._record(out, (x,), lambda g: _acc(x, np.full(x.shape, g.item() / n)))

    def frobenius_norm(self, x: Tensor) -> Tensor:
        """Euclidean norm of all entries. The subgradient at zero is taken as zero."""
        nrm = float(np.sqrt(np.sum(x.value * x.value)))
        out = Tensor(nrm)

        def back(g):
            if nrm > 0.0:
                _acc(x, g.item() * x.value / nrm)

        return self._record(out, (x,), back)

    def mean_sq(self, x: Tensor) -> Tensor:
        n = x.value.size
        out = Tensor(np.mean(x.value * x.value))
        return self._record(out, (x,), lambda g: _acc(x, (2.0 * g.item() / n) * x.value))

    def mean_abs(self, x: Tensor) -> Tensor:
        n = x.value.size
        out = Tensor(np.mean(np.abs(x.value)))
        return self._record(out, (x,), lambda g: _acc(x, (g.item() / n) * np.sign(x.value)))

    def add_scalars(self, *terms: Tensor) -> Tensor:
        for t in terms:
            if t.value.size != 1:
                raise ShapeError("add_scalars takes 1-element tensors")
        out = Tensor(sum(float(t.value.reshape(-1)[0]) for t in terms))

        def back(g):
            for t in terms:
                _acc(t, g)

        return self._record(out, terms, back)

    # ---- network pieces --------------------------------------------------
    def rnn(self, X: np.ndarray, U: Tensor, V: Tensor, c: Tensor) -> tuple[Tensor, np.ndarray]:
        """Final hidden state of a tanh RNN run over windows X (N, k, m).

        Returns (h_k, all_states) where all_states has shape (k, N, d).
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[2] != U.shape[1]:
            raise ShapeError(f"rnn: windows {X.shape} do not fit input map {U.shape}")
        if V.shape != (U.shape[0], U.shape[0]) or c.shape != (U.shape[0],):
            raise ShapeError("rnn: recurrent map / bias shapes do not match hidden width")
        H = kernels.rnn_forward(X, U.value, V.value, c.value)
        out = Tensor(H[-1].copy())

        def back(g):
            dU, dV, dc = kernels.rnn_backward(X, H, U.value, V.value, g)
            _acc(U, dU)
            _acc(V, dV)
            _acc(c, dc)

        return self._record(out, (U, V, c), back), H

    def batchnorm(self, x: Tensor, state: BatchNormState, mode: str = TRAIN) -> Tensor:
        if mode not in _MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if x.value.ndim != 2 or x.shape[1] != state.dim:
            raise ShapeError(f"batchnorm: input {x.shape} does not match width {state.dim}")
        if mode != TRAIN:
            inv = 1.0 / np.sqrt(state.running_var + state.eps)
            out = Tensor((x.value - state.running_mean) * inv)
            return self._record(out, (x,), lambda g: _acc(x, g * inv))
        if x.shape[0] < 2:
            raise ShapeError("batchnorm in train mode needs a batch of at least 2")
        xhat, mean, var, inv = kernels.batchnorm_forward(x.value, state.eps)
        mom = state.momentum
        state.running_mean = (1.0 - mom) * state.running_mean + mom * mean
        state.running_var = (1.0 - mom) * state.running_var + mom * var
        out = Tensor(xhat)
        return self._record(out, (x,), lambda g: _acc(x, kernels.batchnorm_backward(g, xhat, inv)))

    def dropout(self, x: Tensor, rate: float, rng: np.random.Generator | None, mode: str = TRAIN) -> Tensor:
        """Inverted dropout; active in train and sample modes, identity in infer mode."""
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if mode not in _MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == INFER or rate == 0.0:
            return x
        if rng is None:
            raise ValueError("stochastic dropout needs an rng")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        out = Tensor(x.value * mask)
        return self._record(out, (x,), lambda g: _acc(x, g * mask))

    def gaussian_nll(self, mu: Tensor, sigma: Tensor, y) -> Tensor:
        """Mean negative log-likelihood of ``y`` under independent N(mu, sigma^2)."""
        y = np.asarray(y, dtype=np.float64)
        _same_shape(mu, sigma, "gaussian_nll")
        if y.shape != mu.shape:
            raise ShapeError(f"gaussian_nll: target {y.shape} vs forecast {mu.shape}")
        if np.any(sigma.value <= 0):
            raise ValueError("standard deviations must be positive")
        n = y.size
        r = y - mu.value
        s = sigma.value
        val = 0.5 * np.log(2.0 * np.pi) + np.log(s) + 0.5 * (r / s) ** 2
        out = Tensor(val.mean())

        def back(g):
            gs = g.item() / n
            if mu.requires_grad:
                _acc(mu, -gs * r / (s * s))
            if sigma.requires_grad:
                _acc(sigma, gs * (1.0 / s - r * r / (s * s * s)))

        return self._record(out, (mu, sigma), back)


def gaussian_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. standard normal draws."""
    return rng.standard_normal(shape)


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# ---- optimizers ------------------------------------------------------------
def _check_pairs(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if g is not None and np.shape(g) != p.shape:
            raise ShapeError(f"gradient {np.shape(g)} does not match parameter {p.shape}")


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], lr: float) -> None:
    _check_pairs(params, grads)
    for p, g in zip(params, grads):
        if g is not None:
            p.value -= lr * g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Iterable[Tensor]) -> "AdamState":
        params = list(params)
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    _check_pairs(params, grads)
    if len(state.m) != len(params):
        raise ShapeError("adam state does not match parameter list")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.value)
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        p.value -= lr * (state.m[i] / bc1) / (np.sqrt(state.v[i] / bc2) + eps)


# ---- gradient checking -------------------------------------------------------
def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f`` w.r.t. ``x`` (perturbed in place, then restored)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def gradients_close(analytic, numeric, rtol: float = 1e-4, atol: float = 1e-9) -> bool:
    """Elementwise |a - n| <= rtol * max(|a|, |n|) + atol.

    ``atol`` only absorbs finite-difference roundoff on entries that are ~0.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return bool(np.all(np.abs(a - n) <= rtol * np.maximum(np.abs(a), np.abs(n)) + atol))
