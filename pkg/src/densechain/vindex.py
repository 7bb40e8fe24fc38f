"""Exact maximum inner-product index over passage embeddings."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _accel
from .corpus import Corpus
from .encoder import EncoderParams, encode_passage

_MAGIC = b"DCVINDEX"
_FORMAT = 1
_HEADER = struct.Struct("<8sIQIq")  # magic, format, n, d, model_version
_IDLEN = struct.Struct("<I")


class VectorIndexError(ValueError):
    """Raised for empty indexes, corrupt files and dimension mismatches."""


class IndexDimensionError(VectorIndexError):
    pass


def _id_rank(ids: Sequence[str]) -> np.ndarray:
    order = sorted(range(len(ids)), key=ids.__getitem__)
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids), dtype=np.int64)
    return rank


@dataclass(frozen=True)
class VectorIndex:
    ids: tuple[str, ...]
    matrix: np.ndarray
    model_version: int = 0
    rank: np.ndarray = field(init=False, repr=False, compare=False)
    _row: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = tuple(self.ids)
        mat = np.ascontiguousarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != len(ids):
            raise VectorIndexError(f"matrix shape {mat.shape} does not align with {len(ids)} ids")
        if len(set(ids)) != len(ids):
            raise VectorIndexError("duplicate ids in index")
        if not np.isfinite(mat).all():
            raise VectorIndexError("index contains non-finite entries")
        mat.flags.writeable = False
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "rank", _id_rank(ids))
        object.__setattr__(self, "_row", {pid: i for i, pid in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_of(self, pid: str) -> int:
        return self._row[pid]

    def vector(self, pid: str) -> np.ndarray:
        return self.matrix[self._row[pid]]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorIndex):
            return NotImplemented
        return (self.ids == other.ids and self.model_version == other.model_version
                and self.matrix.shape == other.matrix.shape
                and bool(np.array_equal(self.matrix, other.matrix)))

    __hash__ = None


def build_index(params: EncoderParams, corpus: Corpus | Iterable, model_version: int | None = None) -> VectorIndex:
    passages = corpus.passages if isinstance(corpus, Corpus) else list(corpus)
    if not passages:
        raise VectorIndexError("cannot build an index over an empty corpus")
    mat = np.empty((len(passages), params.emb_dim))
    for i, p in enumerate(passages):
        mat[i] = encode_passage(params, p)
    version = params.version if model_version is None else model_version
    return VectorIndex(tuple(p.id for p in passages), mat, version)


def refresh(index: VectorIndex, new_params: EncoderParams, corpus: Corpus) -> VectorIndex:
    """Re-embed the corpus with ``new_params``; the version stamp strictly increases."""
    if new_params.emb_dim != index.dim:
        raise VectorIndexError(f"embedding dim mismatch: index has {index.dim}, params have {new_params.emb_dim}")
    return build_index(new_params, corpus, max(index.model_version + 1, new_params.version))


def search_batch(index: VectorIndex, queries: np.ndarray, k: int) -> list[list[tuple[str, float]]]:
    """Exact top-k for each row of ``queries`` (score desc, id asc)."""
    if len(index) == 0:
        raise VectorIndexError("search on an empty index")
    if k < 1:
        raise VectorIndexError("k must be >= 1")
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    if q.shape[1] != index.dim:
        raise VectorIndexError(f"query dim {q.shape[1]} does not match index dim {index.dim}")
    scores = _accel.dot_rows(index.matrix, q)
    top = _accel.topk_rows(scores, index.rank, k)
    ids = index.ids
    return [[(ids[j], float(scores[b, j])) for j in top[b]] for b in range(q.shape[0])]


def search(index: VectorIndex, qv: np.ndarray, k: int) -> list[tuple[str, float]]:
    return search_batch(index, np.asarray(qv, dtype=np.float64)[None, :], k)[0]


def save(index: VectorIndex, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _FORMAT, len(index), index.dim, index.model_version))
        for pid in index.ids:
            raw = pid.encode("utf-8")
            fh.write(_IDLEN.pack(len(raw)))
            fh.write(raw)
        fh.write(index.matrix.astype("<f8").tobytes(order="C"))


def load(path: str | Path, expected_dim: int | None = None) -> VectorIndex:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise VectorIndexError(f"{path}: truncated index header")
    magic, fmt, n, d, version = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise VectorIndexError(f"{path}: not an index file")
    if fmt != _FORMAT:
        raise VectorIndexError(f"{path}: unsupported index format {fmt}")
    if expected_dim is not None and expected_dim != d:
        raise IndexDimensionError(f"{path}: dimension mismatch: index has d={d}, checkpoint has d={expected_dim}")
    off = _HEADER.size
    ids = []
    for _ in range(n):
        if off + _IDLEN.size > len(data):
            raise VectorIndexError(f"{path}: truncated id table")
        (ln,) = _IDLEN.unpack_from(data, off)
        off += _IDLEN.size
        if off + ln > len(data):
            raise VectorIndexError(f"{path}: truncated id table")
        ids.append(data[off:off + ln].decode("utf-8"))
        off += ln
    if len(data) - off != n * d * 8:
        raise VectorIndexError(f"{path}: truncated or oversized matrix block")
    mat = np.frombuffer(data, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    return VectorIndex(tuple(ids), mat, version)
