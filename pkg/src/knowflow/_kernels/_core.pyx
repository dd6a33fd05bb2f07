# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for the flow, Cox and roster-relatedness kernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def pair_flows(const long long[:] src, const long long[:] dst,
               const double[:] weight, Py_ssize_t n):
    cdef double[:, ::1] out = np.zeros((n, n), dtype=np.float64)
    cdef Py_ssize_t k, a, b
    cdef double w
    for k in range(src.shape[0]):
        a = src[k]
        b = dst[k]
        w = weight[k]
        if a == b:
            out[a, a] += w
        else:
            out[a, b] += w
            out[b, a] += w
    return np.asarray(out)


def ragged_relatedness(const long long[:] focal, const long long[:] offsets,
                       const long long[:] prior, const double[:, :] matrix):
    cdef Py_ssize_t nrow = focal.shape[0]
    cdef double[::1] out = np.zeros(nrow, dtype=np.float64)
    cdef Py_ssize_t k, j, lo, hi
    cdef double acc
    for k in range(nrow):
        lo = offsets[k]
        hi = offsets[k + 1]
        if hi <= lo:
            continue
        acc = 0.0
        for j in range(lo, hi):
            acc += matrix[focal[k], prior[j]]
        out[k] = acc / (hi - lo)
    return np.asarray(out)


def efron_derivatives(const double[:] time, const signed char[:] event,
                      const double[:, :] X, const double[:] eta, bint breslow=False):
    """Partial log-likelihood, score and information; rows sorted by ascending time."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef double[::1] score = np.zeros(p, dtype=np.float64)
    cdef double[:, ::1] info = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] s1 = np.zeros(p, dtype=np.float64)
    cdef double[:, ::1] s2 = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] d1 = np.zeros(p, dtype=np.float64)
    cdef double[:, ::1] d2 = np.zeros((p, p), dtype=np.float64)
    cdef double[::1] m1 = np.zeros(p, dtype=np.float64)
    cdef double s0 = 0.0, d0, r, frac, m0, loglik = 0.0
    cdef Py_ssize_t hi = n, lo, i, a, b, l, nd
    while hi > 0:
        lo = hi - 1
        while lo > 0 and time[lo - 1] == time[hi - 1]:
            lo -= 1
        d0 = 0.0
        nd = 0
        for a in range(p):
            d1[a] = 0.0
            for b in range(p):
                d2[a, b] = 0.0
        for i in range(lo, hi):
            r = exp(eta[i])
            s0 += r
            for a in range(p):
                s1[a] += r * X[i, a]
                for b in range(a + 1):
                    s2[a, b] += r * X[i, a] * X[i, b]
            if event[i]:
                nd += 1
                d0 += r
                loglik += eta[i]
                for a in range(p):
                    d1[a] += r * X[i, a]
                    score[a] += X[i, a]
                    for b in range(a + 1):
                        d2[a, b] += r * X[i, a] * X[i, b]
        for l in range(nd):
            frac = 0.0 if breslow else (<double> l) / nd
            m0 = s0 - frac * d0
            loglik -= log(m0)
            for a in range(p):
                m1[a] = (s1[a] - frac * d1[a]) / m0
                score[a] -= m1[a]
            for a in range(p):
                for b in range(a + 1):
                    info[a, b] += (s2[a, b] - frac * d2[a, b]) / m0 - m1[a] * m1[b]
        hi = lo
    for a in range(p):
        for b in range(a):
            info[b, a] = info[a, b]
    return loglik, np.asarray(score), np.asarray(info)
