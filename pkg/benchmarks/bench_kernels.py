"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel is first checked for parity between the two backends, then timed
on inputs sized like a default synthetic panel (``--scale`` multiplies them).
"""
from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from knowflow._kernels import compiled, fallback


def cases(scale: float, rng: np.random.Generator) -> dict:
    n_moves = int(60_000 * scale)
    n_ent = 40
    n_firms = int(2_000 * scale)
    n_obs, p = int(5_000 * scale), 12

    counts = rng.integers(0, 30, n_firms)
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    time = np.sort(rng.integers(1, 40, n_obs).astype(np.float64))  # ties on purpose
    X = np.ascontiguousarray(rng.normal(size=(n_obs, p)))
    return {
        "pair_flows": (
            rng.integers(0, n_ent, n_moves).astype(np.int64),
            rng.integers(0, n_ent, n_moves).astype(np.int64),
            np.ones(n_moves),
            n_ent,
        ),
        "ragged_relatedness": (
            rng.integers(0, n_ent, n_firms).astype(np.int64),
            offsets,
            rng.integers(0, n_ent, int(offsets[-1])).astype(np.int64),
            np.ascontiguousarray(rng.uniform(size=(n_ent, n_ent))),
        ),
        "efron_derivatives": (
            time,
            (rng.uniform(size=n_obs) < 0.6).astype(np.int8),
            X,
            X @ rng.normal(scale=0.1, size=p),
        ),
    }


def _close(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_close(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-9))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not built (or KNOWFLOW_PURE_PYTHON=1); nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20} {'compiled ms':>12} {'fallback ms':>12} {'speedup':>8}  parity")
    ok = True
    for name, call_args in cases(args.scale, rng).items():
        fc, ff = getattr(compiled, name), getattr(fallback, name)
        same = _close(fc(*call_args), ff(*call_args))
        ok &= same
        tc = min(timeit.repeat(lambda: fc(*call_args), number=1, repeat=args.repeat)) * 1e3
        tf = min(timeit.repeat(lambda: ff(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20} {tc:>12.2f} {tf:>12.2f} {tf / tc:>7.1f}x  {'ok' if same else 'MISMATCH'}")
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
