"""Hot numeric kernels.

Each kernel has a numba version and a pure-numpy version with identical
results. Set ``DENSECHAIN_NO_NUMBA=1`` to force the numpy path (also used
automatically when numba cannot be imported).
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("DENSECHAIN_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by DENSECHAIN_NO_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def dot_rows_numpy(matrix: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """scores[b, i] = <queries[b], matrix[i]>, summed left to right over d."""
    n, d = matrix.shape
    out = np.zeros((queries.shape[0], n), dtype=np.float64)
    for j in range(d):
        out += np.multiply.outer(queries[:, j], matrix[:, j])
    return out


def topk_rows_numpy(scores: np.ndarray, rank: np.ndarray, k: int) -> np.ndarray:
    """Per row, indices of the k best entries by (score desc, rank asc)."""
    b, n = scores.shape
    k = min(k, n)
    out = np.empty((b, k), dtype=np.int64)
    for r in range(b):
        order = np.lexsort((rank, -scores[r]))
        out[r] = order[:k]
    return out


def add_outer_sparse_numpy(grad: np.ndarray, coef: float, vec: np.ndarray,
                           idx: np.ndarray, val: np.ndarray) -> None:
    """grad[:, idx] += coef * outer(vec, val), in place."""
    if idx.size:
        grad[:, idx] += np.multiply.outer(vec, coef * val)


def project_sparse_numpy(weights: np.ndarray, idx: np.ndarray, val: np.ndarray) -> np.ndarray:
    out = np.zeros(weights.shape[0], dtype=np.float64)
    for t in range(idx.shape[0]):
        out += weights[:, idx[t]] * val[t]
    return out


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def dot_rows_numba(matrix, queries):
        n, d = matrix.shape
        nq = queries.shape[0]
        out = np.zeros((nq, n), dtype=np.float64)
        for b in range(nq):
            for i in range(n):
                s = 0.0
                for j in range(d):
                    s += queries[b, j] * matrix[i, j]
                out[b, i] = s
        return out

    @numba.njit(cache=True)
    def _better(s_a, r_a, s_b, r_b):
        return s_a > s_b or (s_a == s_b and r_a < r_b)

    @numba.njit(cache=True)
    def topk_rows_numba(scores, rank, k):
        nq, n = scores.shape
        if k > n:
            k = n
        out = np.empty((nq, k), dtype=np.int64)
        buf_s = np.empty(k, dtype=np.float64)
        buf_r = np.empty(k, dtype=np.int64)
        buf_i = np.empty(k, dtype=np.int64)
        for b in range(nq):
            filled = 0
            for i in range(n):
                s = scores[b, i]
                r = rank[i]
                if filled == k:
                    # worst kept entry sits at position k - 1
                    if not _better(s, r, buf_s[k - 1], buf_r[k - 1]):
                        continue
                    pos = k - 1
                else:
                    pos = filled
                    filled += 1
                while pos > 0 and _better(s, r, buf_s[pos - 1], buf_r[pos - 1]):
                    buf_s[pos] = buf_s[pos - 1]
                    buf_r[pos] = buf_r[pos - 1]
                    buf_i[pos] = buf_i[pos - 1]
                    pos -= 1
                buf_s[pos] = s
                buf_r[pos] = r
                buf_i[pos] = i
            for j in range(k):
                out[b, j] = buf_i[j]
        return out

    @numba.njit(cache=True)
    def add_outer_sparse_numba(grad, coef, vec, idx, val):
        d = grad.shape[0]
        for t in range(idx.shape[0]):
            c = idx[t]
            w = coef * val[t]
            for r in range(d):
                grad[r, c] += w * vec[r]

    @numba.njit(cache=True)
    def project_sparse_numba(weights, idx, val):
        d = weights.shape[0]
        out = np.zeros(d, dtype=np.float64)
        for t in range(idx.shape[0]):
            c = idx[t]
            v = val[t]
            for r in range(d):
                out[r] += weights[r, c] * v
        return out

    dot_rows = dot_rows_numba
    topk_rows = topk_rows_numba
    add_outer_sparse = add_outer_sparse_numba
    project_sparse = project_sparse_numba
else:
    dot_rows = dot_rows_numpy
    topk_rows = topk_rows_numpy
    add_outer_sparse = add_outer_sparse_numpy
    project_sparse = project_sparse_numpy
