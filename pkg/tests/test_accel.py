import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from densechain import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba unavailable")


def brute_topk(scores, rank, k):
    out = []
    for row in scores:
        order = sorted(range(len(row)), key=lambda i: (-row[i], rank[i]))
        out.append(order[:k])
    return np.array(out, dtype=np.int64)


@given(st.integers(1, 30), st.integers(1, 12), st.integers(1, 4), st.integers(1, 35), st.integers(0, 2**31 - 1))
def test_topk_numpy_matches_sort_oracle(n, d, nq, k, seed):
    rng = np.random.default_rng(seed)
    # coarse values force plenty of ties
    scores = rng.integers(-3, 4, size=(nq, n)).astype(float)
    rank = rng.permutation(n).astype(np.int64)
    got = _accel.topk_rows_numpy(scores, rank, k)
    np.testing.assert_array_equal(got, brute_topk(scores, rank, min(k, n)))


@needs_numba
@given(st.integers(1, 30), st.integers(1, 4), st.integers(1, 35), st.integers(0, 2**31 - 1))
def test_topk_backends_agree(n, nq, k, seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(-3, 4, size=(nq, n)).astype(float)
    rank = rng.permutation(n).astype(np.int64)
    np.testing.assert_array_equal(_accel.topk_rows_numba(scores, rank, k),
                                  _accel.topk_rows_numpy(scores, rank, k))


@needs_numba
@given(st.integers(1, 25), st.integers(1, 16), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_dot_rows_backends_bitwise_equal(n, d, nq, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, d))
    q = rng.normal(size=(nq, d))
    a = _accel.dot_rows_numba(m, q)
    b = _accel.dot_rows_numpy(m, q)
    assert np.array_equal(a, b)
    np.testing.assert_allclose(a, q @ m.T, rtol=1e-12, atol=1e-12)


@needs_numba
def test_sparse_kernels_backends_agree(rng):
    w = rng.normal(size=(6, 50))
    idx = np.array([3, 7, 49], dtype=np.int64)
    val = rng.normal(size=3)
    assert np.array_equal(_accel.project_sparse_numba(w, idx, val), _accel.project_sparse_numpy(w, idx, val))
    np.testing.assert_allclose(_accel.project_sparse_numpy(w, idx, val), w[:, idx] @ val, rtol=1e-13)

    g1 = rng.normal(size=(6, 50))
    g2 = g1.copy()
    vec = rng.normal(size=6)
    _accel.add_outer_sparse_numba(g1, 0.37, vec, idx, val)
    _accel.add_outer_sparse_numpy(g2, 0.37, vec, idx, val)
    assert np.array_equal(g1, g2)


def test_add_outer_sparse_touches_only_given_columns(rng):
    g = np.zeros((4, 10))
    _accel.add_outer_sparse(g, 2.0, np.ones(4), np.array([1, 5], dtype=np.int64), np.array([1.0, -0.5]))
    assert set(np.flatnonzero(g.any(axis=0))) == {1, 5}
    np.testing.assert_array_equal(g[:, 5], -np.ones(4))


def test_env_flag_forces_numpy_path():
    code = "import densechain._accel as a; print(a.BACKEND, a.topk_rows is a.topk_rows_numpy)"
    env = {"DENSECHAIN_NO_NUMBA": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
