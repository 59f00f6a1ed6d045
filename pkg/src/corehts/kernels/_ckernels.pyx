# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same contracts as ``_python``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm(bint ta, bint tb, int M, int N, int K, double alpha,
                       const double* A, int lda, const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # row-major C[M,N] = alpha * op(A) @ op(B) + beta * C, via column-major dgemm on C^T
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


def rnn_forward(X, U, V, c):
    cdef double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[::1] cc = np.ascontiguousarray(c, dtype=np.float64).ravel()
    cdef int N = x.shape[0], k = x.shape[1], m = x.shape[2], d = u.shape[0]
    H_arr = np.empty((k, N, d))
    cdef double[:, :, ::1] H = H_arr
    cdef int t
    if N == 0 or k == 0:
        return H_arr
    c_row = np.asarray(cc)
    for t in range(k):
        with nogil:
            _gemm(False, True, N, d, m, 1.0, &x[0, t, 0], k * m, &u[0, 0], m, 0.0, &H[t, 0, 0], d)
            if t > 0:
                _gemm(False, True, N, d, d, 1.0, &H[t - 1, 0, 0], d, &v[0, 0], d, 1.0, &H[t, 0, 0], d)
        # numpy's vectorized tanh is several times faster than a scalar libm loop
        Ht = H_arr[t]
        np.add(Ht, c_row, out=Ht)
        np.tanh(Ht, out=Ht)
    return H_arr


def rnn_backward(X, H, U, V, dh):
    cdef double[:, :, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, :, ::1] hs = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[:, ::1] u = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, ::1] v = np.ascontiguousarray(V, dtype=np.float64)
    cdef int N = x.shape[0], k = x.shape[1], m = x.shape[2], d = u.shape[0]
    dU_arr = np.zeros((d, m))
    dV_arr = np.zeros((d, d))
    dc_arr = np.zeros(d)
    da_arr = np.empty((N, d))
    dh_arr = np.array(dh, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] dU = dU_arr
    cdef double[:, ::1] dV = dV_arr
    cdef double[::1] dc = dc_arr
    cdef double[:, ::1] da = da_arr
    cdef double[:, ::1] g = dh_arr
    cdef int t, i, j
    cdef double hv
    if N == 0 or k == 0:
        return dU_arr, dV_arr, dc_arr
    with nogil:
        for t in range(k - 1, -1, -1):
            for i in range(N):
                for j in range(d):
                    hv = hs[t, i, j]
                    da[i, j] = g[i, j] * (1.0 - hv * hv)
                    dc[j] += da[i, j]
            _gemm(True, False, d, m, N, 1.0, &da[0, 0], d, &x[0, t, 0], k * m, 1.0, &dU[0, 0], m)
            if t > 0:
                _gemm(True, False, d, d, N, 1.0, &da[0, 0], d, &hs[t - 1, 0, 0], d, 1.0, &dV[0, 0], d)
                _gemm(False, False, N, d, d, 1.0, &da[0, 0], d, &v[0, 0], d, 0.0, &g[0, 0], d)
    return dU_arr, dV_arr, dc_arr


def batchnorm_forward(x_in, double eps):
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef int n = x.shape[0], d = x.shape[1]
    out_arr = np.empty((n, d))
    mean_arr = np.zeros(d)
    var_arr = np.zeros(d)
    inv_arr = np.empty(d)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef double[::1] inv = inv_arr
    cdef int i, j
    cdef double diff
    with nogil:
        for i in range(n):
            for j in range(d):
                mean[j] += x[i, j]
        for j in range(d):
            mean[j] /= n
        for i in range(n):
            for j in range(d):
                diff = x[i, j] - mean[j]
                out[i, j] = diff
                var[j] += diff * diff
        for j in range(d):
            var[j] /= n
            inv[j] = 1.0 / sqrt(var[j] + eps)
        for i in range(n):
            for j in range(d):
                out[i, j] *= inv[j]
    return out_arr, mean_arr, var_arr, inv_arr


def batchnorm_backward(dout_in, xhat_in, inv_in):
    cdef double[:, ::1] dout = np.ascontiguousarray(dout_in, dtype=np.float64)
    cdef double[:, ::1] xhat = np.ascontiguousarray(xhat_in, dtype=np.float64)
    cdef double[::1] inv = np.ascontiguousarray(inv_in, dtype=np.float64)
    cdef int n = dout.shape[0], d = dout.shape[1]
    dx_arr = np.empty((n, d))
    sd_arr = np.zeros(d)
    sdx_arr = np.zeros(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] sd = sd_arr
    cdef double[::1] sdx = sdx_arr
    cdef int i, j
    with nogil:
        for i in range(n):
            for j in range(d):
                sd[j] += dout[i, j]
                sdx[j] += dout[i, j] * xhat[i, j]
        for i in range(n):
            for j in range(d):
                dx[i, j] = (inv[j] / n) * (n * dout[i, j] - sd[j] - xhat[i, j] * sdx[j])
    return dx_arr


def crps_energy(samples, y_in):
    cdef double[:, ::1] s = np.ascontiguousarray(samples, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64).ravel()
    cdef int n = s.shape[0], cells = s.shape[1]
    if n == 0:
        raise ValueError("empty sample set")
    if y.shape[0] != cells:
        raise ValueError("observation count does not match sample cells")
    out_arr = np.empty(cells)
    # one sorted row per cell; numpy's sort beats a per-cell qsort by a wide margin
    srt_arr = np.ascontiguousarray(np.asarray(s).T)
    srt_arr.sort(axis=1)
    cdef double[:, ::1] srt = srt_arr
    cdef double[::1] out = out_arr
    cdef int c, i
    cdef double acc, pair, val
    with nogil:
        for c in range(cells):
            acc = 0.0
            for i in range(n):
                acc += fabs(srt[c, i] - y[c])
            acc /= n
            if n > 1:
                pair = 0.0
                for i in range(1, n):
                    pair += (srt[c, i] - srt[c, i - 1]) * (<double>i) * (<double>(n - i))
                val = acc - pair / (<double>n * <double>n)
                out[c] = val if val > 0.0 else 0.0
            else:
                out[c] = acc
    return out_arr
