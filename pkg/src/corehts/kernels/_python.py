"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and semantics; the two agree to floating-point roundoff.
"""
import numpy as np


def rnn_forward(X, U, V, c):
    """Run h_t = tanh(U x_t + V h_{t-1} + c) over the window axis.

    X is (N, k, m), U is (d, m), V is (d, d), c is (d,). Returns the stacked
    hidden states H with shape (k, N, d); H[-1] is the final state.
    """
    N, k, _ = X.shape
    d = U.shape[0]
    H = np.empty((k, N, d))
    h = np.zeros((N, d))
    for t in range(k):
        h = np.tanh(X[:, t, :] @ U.T + h @ V.T + c)
        H[t] = h
    return H


def rnn_backward(X, H, U, V, dh):
    """Backpropagate ``dh`` (gradient w.r.t. the final state) through time.

    Returns (dU, dV, dc). Gradients w.r.t. X are not needed since the
    windows are data.
    """
    N, k, m = X.shape
    d = U.shape[0]
    dU = np.zeros((d, m))
    dV = np.zeros((d, d))
    dc = np.zeros(d)
    for t in range(k - 1, -1, -1):
        da = dh * (1.0 - H[t] * H[t])
        dU += da.T @ X[:, t, :]
        dc += da.sum(axis=0)
        if t > 0:
            dV += da.T @ H[t - 1]
        dh = da @ V
    return dU, dV, dc


def batchnorm_forward(x, eps):
    """Normalize columns with population statistics.

    Returns (out, mean, var, inv_std).
    """
    mean = x.mean(axis=0)
    xc = x - mean
    var = (xc * xc).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    return xc * inv_std, mean, var, inv_std


def batchnorm_backward(dout, xhat, inv_std):
    n = dout.shape[0]
    sum_d = dout.sum(axis=0)
    sum_dx = (dout * xhat).sum(axis=0)
    return (inv_std / n) * (n * dout - sum_d - xhat * sum_dx)


def crps_energy(samples, y):
    """Sample CRPS per cell: mean|x - y| - sum_ij |x_i - x_j| / (2 n^2).

    ``samples`` is (n, cells) and ``y`` is (cells,). The pairwise sum is taken
    over gaps between sorted samples, sum_{i<j} (x_j - x_i) =
    sum_g gap_g * g * (n - g), so identical samples contribute exactly zero.
    """
    samples = np.asarray(samples, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = samples.shape[0]
    if n == 0:
        raise ValueError("empty sample set")
    abs_term = np.abs(samples - y).mean(axis=0)
    if n == 1:
        return abs_term
    gaps = np.diff(np.sort(samples, axis=0), axis=0)
    g = np.arange(1, n, dtype=np.float64)
    pair_half = (g * (n - g)) @ gaps
    return np.maximum(abs_term - pair_half / (n * n), 0.0)
