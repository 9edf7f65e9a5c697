# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot kernels.

Semantics match ``numpy_ref`` (the reference backend); the parity tests pin
the two together to float64 round-off.  Matrix products go through BLAS
dgemm, bias/activation/Adam run as fused C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt
from scipy.linalg.cython_blas cimport dgemm

ACT_IDENTITY = 0
ACT_TANH = 1
ACT_RELU = 2
ACT_SIGMOID = 3

DEF _IDENT = 0
DEF _TANH = 1
DEF _RELU = 2
DEF _SIGMOID = 3


cdef void _matmul_xwt(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out) noexcept:
    # out (B,O) = x (B,I) @ w(O,I).T   via column-major dgemm:
    # out^T = w @ x^T  ->  dgemm('T','N', m=O, n=B, k=I) on the raw buffers.
    cdef int m = w.shape[0], n = x.shape[0], k = x.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    dgemm("T", "N", &m, &n, &k, &alpha, &w[0, 0], &k, &x[0, 0], &k, &beta, &out[0, 0], &m)


cdef void _matmul_dw(double[:, ::1] dz, double[:, ::1] a, double[:, ::1] out) noexcept:
    # out (O,I) = dz (B,O).T @ a (B,I)  ->  out^T = a^T @ dz:
    # dgemm('N','T', m=I, n=O, k=B).
    cdef int m = a.shape[1], n = dz.shape[1], k = dz.shape[0]
    cdef double alpha = 1.0, beta = 0.0
    dgemm("N", "T", &m, &n, &k, &alpha, &a[0, 0], &m, &dz[0, 0], &n, &beta, &out[0, 0], &m)


cdef void _matmul_dzw(double[:, ::1] dz, double[:, ::1] w, double[:, ::1] out) noexcept:
    # out (B,I) = dz (B,O) @ w (O,I)  ->  out^T = w^T @ dz^T:
    # dgemm('N','N', m=I, n=B, k=O).
    cdef int m = w.shape[1], n = dz.shape[0], k = dz.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    dgemm("N", "N", &m, &n, &k, &alpha, &w[0, 0], &m, &dz[0, 0], &k, &beta, &out[0, 0], &m)


cdef void _bias_act(double[:, ::1] z, double[::1] b, int code) noexcept:
    # tanh/sigmoid are not applied here: scalar libm transcendentals are far
    # slower than numpy's vectorised ufuncs, so ``forward`` applies those on
    # the whole array after the fused bias add.
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = z.shape[0], cols = z.shape[1]
    cdef double v
    for i in range(rows):
        for j in range(cols):
            v = z[i, j] + b[j]
            if code == _RELU:
                v = v if v > 0.0 else 0.0
            z[i, j] = v


cdef void _act_backward(double[:, ::1] da, double[:, ::1] a, int code, double[:, ::1] dz) noexcept:
    # dz = da * act'(a), derivative expressed via the activation output.
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = da.shape[0], cols = da.shape[1]
    cdef double g
    for i in range(rows):
        for j in range(cols):
            if code == _IDENT:
                g = 1.0
            elif code == _TANH:
                g = 1.0 - a[i, j] * a[i, j]
            elif code == _RELU:
                g = 1.0 if a[i, j] > 0.0 else 0.0
            else:
                g = a[i, j] * (1.0 - a[i, j])
            dz[i, j] = da[i, j] * g


def forward(list weights, list biases, cnp.ndarray x, int hidden_act, int out_act):
    """Run the network, returning the list [x, a_1, ..., a_L] of activations."""
    cdef list acts = [x]
    cdef int n = len(weights), i, code
    cdef cnp.ndarray cur = x, nxt
    for i in range(n):
        w = weights[i]
        nxt = np.empty((cur.shape[0], (<cnp.ndarray> w).shape[0]), dtype=np.float64)
        _matmul_xwt(cur, w, nxt)
        code = out_act if i == n - 1 else hidden_act
        _bias_act(nxt, biases[i], code)
        if code == _TANH:
            np.tanh(nxt, out=nxt)
        elif code == _SIGMOID:
            np.negative(nxt, out=nxt)
            np.exp(nxt, out=nxt)
            nxt += 1.0
            np.reciprocal(nxt, out=nxt)
        acts.append(nxt)
        cur = nxt
    return acts


def backward(list weights, list acts, cnp.ndarray d_out, int hidden_act, int out_act,
             bint need_param_grads, bint need_input_grad):
    """Backpropagate d_out; returns (d_weights, d_biases, d_x), None where skipped."""
    cdef int n = len(weights), i, code
    cdef list d_weights = [None] * n
    cdef list d_biases = [None] * n
    cdef cnp.ndarray da = d_out, dz, dw, prev
    cdef double[:, ::1] dz_mv
    cdef double[::1] db_mv
    cdef Py_ssize_t r, c
    for i in range(n - 1, -1, -1):
        code = out_act if i == n - 1 else hidden_act
        dz = np.empty_like(da)
        _act_backward(da, acts[i + 1], code, dz)
        if need_param_grads:
            w = weights[i]
            dw = np.empty_like(w)
            _matmul_dw(dz, acts[i], dw)
            d_weights[i] = dw
            db = np.zeros((<cnp.ndarray> w).shape[0], dtype=np.float64)
            dz_mv = dz
            db_mv = db
            for r in range(dz_mv.shape[0]):
                for c in range(dz_mv.shape[1]):
                    db_mv[c] += dz_mv[r, c]
            d_biases[i] = db
        if i > 0 or need_input_grad:
            prev = np.empty((dz.shape[0], (<cnp.ndarray> weights[i]).shape[1]), dtype=np.float64)
            _matmul_dzw(dz, weights[i], prev)
            da = prev
    return d_weights, d_biases, (da if need_input_grad else None)


def adam_update(cnp.ndarray param, cnp.ndarray grad, cnp.ndarray m, cnp.ndarray v,
                long t, double lr, double beta1, double beta2, double eps):
    """One Adam step with bias correction, applied in place to ``param``."""
    cdef double[::1] p1 = param.reshape(-1)
    cdef double[::1] g1 = grad.reshape(-1)
    cdef double[::1] m1 = m.reshape(-1)
    cdef double[::1] v1 = v.reshape(-1)
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i, size = p1.shape[0]
    cdef double g
    for i in range(size):
        g = g1[i]
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g
        v1[i] = beta2 * v1[i] + (1.0 - beta2) * g * g
        p1[i] -= lr * (m1[i] / bc1) / (sqrt(v1[i] / bc2) + eps)
