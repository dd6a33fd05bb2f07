import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from knowflow import _kernels
from knowflow._kernels import fallback

compiled = _kernels.compiled
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_compiled_backend_is_active():
    if os.environ.get("KNOWFLOW_PURE_PYTHON") == "1":
        assert _kernels.BACKEND == "python"
    else:
        assert _kernels.BACKEND == "compiled"


def test_env_var_forces_fallback():
    code = "from knowflow import _kernels; print(_kernels.BACKEND, _kernels.compiled is None)"
    env = dict(os.environ, KNOWFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "True"]


def pair_loop(src, dst, w, n):
    out = np.zeros((n, n))
    for a, b, x in zip(src, dst, w):
        out[a, b] += x
        if a != b:
            out[b, a] += x
    return out


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 12), st.integers(0, 200))
def test_pair_flows_parity(seed, n, m):
    rng = np.random.default_rng(seed)
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    w = rng.uniform(0.1, 1, m)
    want = pair_loop(src, dst, w, n)
    assert np.allclose(compiled.pair_flows(src, dst, w, n), want, atol=1e-12)
    assert np.allclose(fallback.pair_flows(src, dst, w, n), want, atol=1e-12)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 8), st.integers(1, 30))
def test_ragged_parity(seed, n_ent, n_rows):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 4, n_rows)
    offsets = np.r_[0, np.cumsum(counts)].astype(np.int64)
    focal = rng.integers(0, n_ent, n_rows)
    prior = rng.integers(0, n_ent, int(offsets[-1]))
    M = np.ascontiguousarray(rng.uniform(size=(n_ent, n_ent)))
    want = np.array([M[focal[k], prior[offsets[k]:offsets[k + 1]]].mean() if counts[k] else 0.0
                     for k in range(n_rows)])
    assert np.allclose(compiled.ragged_relatedness(focal, offsets, prior, M), want, atol=1e-14)
    assert np.allclose(fallback.ragged_relatedness(focal, offsets, prior, M), want, atol=1e-14)


@needs_compiled
@pytest.mark.parametrize("breslow", [False, True])
def test_efron_parity(breslow):
    rng = np.random.default_rng(5)
    n, p = 300, 4
    t = np.sort(rng.integers(1, 20, n).astype(float))
    ev = (rng.random(n) < 0.6).astype(np.int8)
    X = np.ascontiguousarray(rng.normal(size=(n, p)))
    eta = X @ rng.normal(scale=0.3, size=p)
    a = compiled.efron_derivatives(t, ev, X, eta, breslow)
    b = fallback.efron_derivatives(t, ev, X, eta, breslow)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    assert np.allclose(a[1], b[1], rtol=1e-10, atol=1e-10)
    assert np.allclose(a[2], b[2], rtol=1e-10, atol=1e-10)


def test_benchmark_script_runs():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = subprocess.run([sys.executable, os.path.join(root, "benchmarks", "bench_kernels.py"),
                          "--repeat", "1", "--scale", "0.05"], capture_output=True, text=True)
    if compiled is None:
        assert out.returncode == 1
    else:
        assert out.returncode == 0, out.stdout + out.stderr
        assert "MISMATCH" not in out.stdout
