# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-step kernels. Mirrors iwsft._kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fmin, fmax, M_PI

cnp.import_array()

cdef double LOG_2PI = log(2.0 * M_PI)


def categorical_logp(logits, actions):
    cdef const double[:, ::1] lg = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const long long[::1] act = np.ascontiguousarray(actions, dtype=np.int64)
    cdef Py_ssize_t n = lg.shape[0], k = lg.shape[1], i, j
    out_logp = np.empty(n, dtype=np.float64)
    out_d = np.empty((n, k), dtype=np.float64)
    cdef double[::1] logp = out_logp
    cdef double[:, ::1] d = out_d
    cdef double m, s, lse
    cdef long long a
    for i in range(n):
        a = act[i]
        if a < 0 or a >= k:
            raise IndexError("action index out of range")
        m = lg[i, 0]
        for j in range(1, k):
            if lg[i, j] > m:
                m = lg[i, j]
        s = 0.0
        for j in range(k):
            s += exp(lg[i, j] - m)
        lse = m + log(s)
        logp[i] = lg[i, a] - lse
        for j in range(k):
            d[i, j] = -exp(lg[i, j] - lse)
        d[i, a] += 1.0
    return out_logp, out_d


def gaussian_logp(mean, log_std, actions):
    cdef const double[:, ::1] mu = np.ascontiguousarray(mean, dtype=np.float64)
    cdef const double[::1] ls = np.ascontiguousarray(log_std, dtype=np.float64)
    cdef const double[:, ::1] act = np.ascontiguousarray(actions, dtype=np.float64)
    cdef Py_ssize_t n = mu.shape[0], dim = mu.shape[1], i, j
    if ls.shape[0] != dim or act.shape[0] != n or act.shape[1] != dim:
        raise ValueError("shape mismatch between mean, log_std and actions")
    out_logp = np.empty(n, dtype=np.float64)
    out_dm = np.empty((n, dim), dtype=np.float64)
    out_ds = np.empty((n, dim), dtype=np.float64)
    cdef double[::1] logp = out_logp
    cdef double[:, ::1] dm = out_dm
    cdef double[:, ::1] ds = out_ds
    cdef double const_term = 0.0, acc, z, inv
    for j in range(dim):
        const_term += ls[j]
    const_term = -const_term - 0.5 * dim * LOG_2PI
    for i in range(n):
        acc = 0.0
        for j in range(dim):
            inv = exp(-ls[j])
            z = (act[i, j] - mu[i, j]) * inv
            acc += z * z
            dm[i, j] = z * inv
            ds[i, j] = z * z - 1.0
        logp[i] = -0.5 * acc + const_term
    return out_logp, out_dm, out_ds


def segment_sum(values, offsets):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t m = off.shape[0] - 1, j
    cdef long long t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc
    for j in range(m):
        if off[j + 1] <= off[j]:
            raise ValueError("segments must be non-empty")
        acc = 0.0
        for t in range(off[j], off[j + 1]):
            acc += v[t]
        o[j] = acc
    return out


def trajectory_weights(rho, offsets, k, double rho_lo, double rho_hi, double w_lo, double w_hi):
    cdef const double[::1] r = np.ascontiguousarray(rho, dtype=np.float64)
    cdef const long long[::1] off = np.ascontiguousarray(offsets, dtype=np.int64)
    cdef Py_ssize_t m = off.shape[0] - 1, j
    cdef const double[::1] kk = np.ascontiguousarray(np.broadcast_to(k, (m,)), dtype=np.float64)
    cdef long long t
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double acc, s, w, log_hi = log(w_hi)
    for j in range(m):
        if off[j + 1] <= off[j]:
            raise ValueError("segments must be non-empty")
        acc = 0.0
        for t in range(off[j], off[j + 1]):
            acc += fmin(fmax(r[t], rho_lo), rho_hi)
        s = kk[j] * acc
        if s >= log_hi:
            w = w_hi
        else:
            w = exp(s)
        o[j] = fmax(w, w_lo)
    return out
