"""Pure numpy versions of the compiled kernels; same signatures and results."""
import numpy as np


def pair_flows(src, dst, weight, n):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=np.float64)
    off = src != dst
    idx = np.concatenate([src * n + dst, dst[off] * n + src[off]])
    w = np.concatenate([weight, weight[off]])
    return np.bincount(idx, weights=w, minlength=n * n).reshape(n, n)


def ragged_relatedness(focal, offsets, prior, matrix):
    focal = np.asarray(focal, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.int64)
    prior = np.asarray(prior, dtype=np.int64)
    counts = np.diff(offsets)
    rows = np.repeat(np.arange(len(focal)), counts)
    vals = np.asarray(matrix)[focal[rows], prior]
    sums = np.bincount(rows, weights=vals, minlength=len(focal))
    out = np.zeros(len(focal))
    nz = counts > 0
    out[nz] = sums[nz] / counts[nz]
    return out


def efron_derivatives(time, event, X, eta, breslow=False):
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event).astype(bool)
    X = np.asarray(X, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    n, p = X.shape
    r = np.exp(eta)
    rX = r[:, None] * X
    rXX = rX[:, :, None] * X[:, None, :]
    # risk-set sums over rows with time >= t: reverse cumulative sums
    S0 = np.cumsum(r[::-1])[::-1]
    S1 = np.cumsum(rX[::-1], axis=0)[::-1]
    S2 = np.cumsum(rXX[::-1], axis=0)[::-1]
    starts = np.flatnonzero(np.r_[True, time[1:] != time[:-1]])
    ends = np.r_[starts[1:], n]
    loglik = float(eta[event].sum())
    score = X[event].sum(axis=0)
    info = np.zeros((p, p))
    for lo, hi in zip(starts, ends):
        ev = event[lo:hi]
        nd = int(ev.sum())
        if nd == 0:
            continue
        sel = np.flatnonzero(ev) + lo
        d0, d1, d2 = r[sel].sum(), rX[sel].sum(axis=0), rXX[sel].sum(axis=0)
        fr = np.zeros(nd) if breslow else np.arange(nd) / nd
        m0 = S0[lo] - fr * d0
        m1 = (S1[lo][None, :] - fr[:, None] * d1[None, :]) / m0[:, None]
        loglik -= float(np.log(m0).sum())
        score = score - m1.sum(axis=0)
        info += ((S2[lo][None] - fr[:, None, None] * d2[None]) / m0[:, None, None]).sum(axis=0)
        info -= m1.T @ m1
    return loglik, score, info
