"""Hashed bag-of-ngrams dual encoder and the chain NLL objective."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import _accel
from .corpus import OrderedChain, Passage, QuestionRecord

SEP = "[sep]"
DEFAULT_MAX_LEN = 256

_PARAMS_MAGIC = b"DCPARAMS"
_PARAMS_FORMAT = 1
_PARAMS_HEADER = struct.Struct("<8sIQQqq")  # magic, format, V, d, seed, version


class EncoderError(ValueError):
    pass


class DimensionError(EncoderError):
    """Stored dimensions differ from the expected ones."""


class SparseFeatures(NamedTuple):
    indices: np.ndarray  # int64, strictly increasing
    values: np.ndarray  # float64, L2 norm 1 (or empty)
    dim: int

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass
class EncoderParams:
    hash_dim: int
    emb_dim: int
    w_query: np.ndarray
    w_passage: np.ndarray
    seed: int = 0
    version: int = 0

    def __post_init__(self) -> None:
        if self.hash_dim <= 0 or self.emb_dim <= 0:
            raise EncoderError("hash_dim and emb_dim must be positive")
        shape = (self.emb_dim, self.hash_dim)
        for name in ("w_query", "w_passage"):
            w = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if w.shape != shape:
                raise EncoderError(f"{name} has shape {w.shape}, expected {shape}")
            setattr(self, name, w)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.hash_dim, self.emb_dim, self.w_query.copy(),
                             self.w_passage.copy(), self.seed, self.version)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.w_query).all() and np.isfinite(self.w_passage).all())


def init_params(hash_dim: int = 32768, emb_dim: int = 512, seed: int = 0,
                tied_init: bool = True, std: float | None = None) -> EncoderParams:
    """Gaussian init; ``std`` defaults to 1/sqrt(emb_dim), so every bucket column has norm near 1.

    With ``tied_init`` both projections start from the same draw and the initial
    score approximates the cosine of the hashed feature vectors (plain term
    matching). They are still separate parameters afterwards.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(emb_dim) if std is None else float(std)
    w_q = rng.normal(0.0, scale, size=(emb_dim, hash_dim))
    w_p = w_q.copy() if tied_init else rng.normal(0.0, scale, size=(emb_dim, hash_dim))
    return EncoderParams(hash_dim, emb_dim, w_q, w_p, seed=seed)


# ---------------------------------------------------------------------------
# featurization
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1 << 20)
def _bucket(key: str, dim: int, seed: int) -> int:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8,
                             key=(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")).digest()
    return int.from_bytes(digest, "little") % dim


@lru_cache(maxsize=1 << 16)
def _featurize_cached(tokens: tuple[str, ...], dim: int, seed: int) -> SparseFeatures:
    counts: dict[int, float] = {}
    for tok in tokens:
        b = _bucket("u\x1f" + tok, dim, seed)
        counts[b] = counts.get(b, 0.0) + 1.0
    for left, right in zip(tokens, tokens[1:]):
        b = _bucket("b\x1f" + left + "\x1f" + right, dim, seed)
        counts[b] = counts.get(b, 0.0) + 1.0
    idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    val = np.array([counts[i] for i in idx.tolist()], dtype=np.float64)
    if val.size:
        val /= np.sqrt(np.dot(val, val))
    idx.flags.writeable = False
    val.flags.writeable = False
    return SparseFeatures(idx, val, dim)


def featurize(tokens: Sequence[str], dim: int, seed: int = 0) -> SparseFeatures:
    """Hash unigrams and adjacent bigrams into ``dim`` buckets, L2-normalized counts."""
    return _featurize_cached(tuple(tokens), dim, seed)


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComposedQuery:
    tokens: tuple[str, ...]


def compose_query(question_tokens: Sequence[str], hops: Sequence[Passage],
                  max_len: int = DEFAULT_MAX_LEN) -> ComposedQuery:
    """Question tokens followed by ``[sep]`` + tokens of each earlier hop, tail-truncated."""
    toks = list(question_tokens)
    for p in hops:
        if len(toks) >= max_len:
            break
        toks.append(SEP)
        toks.extend(p.tokens)
    return ComposedQuery(tuple(toks[:max_len]))


def _tokens_of(x) -> tuple[str, ...]:
    if isinstance(x, (ComposedQuery, Passage)):
        return x.tokens
    return tuple(x)


def _project(w: np.ndarray, feats: SparseFeatures) -> np.ndarray:
    if feats.dim != w.shape[1]:
        raise EncoderError(f"feature dim {feats.dim} does not match weight dim {w.shape[1]}")
    return _accel.project_sparse(w, feats.indices, feats.values)


def encode_passage(params: EncoderParams, passage) -> np.ndarray:
    return _project(params.w_passage, featurize(_tokens_of(passage), params.hash_dim, params.seed))


def encode_query(params: EncoderParams, query) -> np.ndarray:
    return _project(params.w_query, featurize(_tokens_of(query), params.hash_dim, params.seed))


def similarity(qv: np.ndarray, pv: np.ndarray) -> float:
    qv = np.asarray(qv, dtype=np.float64)
    pv = np.asarray(pv, dtype=np.float64)
    if qv.shape != pv.shape or qv.ndim != 1:
        raise EncoderError(f"dimension mismatch: {qv.shape} vs {pv.shape}")
    return float(np.dot(qv, pv))


# ---------------------------------------------------------------------------
# chain NLL loss
# ---------------------------------------------------------------------------


def _check_chains(pos: OrderedChain, negs: Sequence[OrderedChain]) -> int:
    n = len(pos)
    if n == 0:
        raise EncoderError("positive chain is empty")
    for neg in negs:
        if len(neg) != n:
            raise EncoderError(f"chain length mismatch: positive has {n} hops, negative has {len(neg)}")
    return n


def _step_features(params: EncoderParams, question: QuestionRecord, chain: OrderedChain,
                   corpus: Mapping[str, Passage], max_len: int):
    """(query features, passage features) for every step of one chain."""
    qtok = question.tokens
    hops = [corpus[pid] for pid in chain.hops]
    out = []
    for t, target in enumerate(hops):
        cq = compose_query(qtok, hops[:t], max_len)
        out.append((featurize(cq.tokens, params.hash_dim, params.seed),
                    featurize(target.tokens, params.hash_dim, params.seed)))
    return out


def _logits(params, question, pos, negs, corpus, max_len):
    n = _check_chains(pos, negs)
    chains = [pos, *negs]
    feats = [_step_features(params, question, c, corpus, max_len) for c in chains]
    # cols[t][i] = (query features, passage features, query emb, passage emb)
    cols = []
    logits = np.empty((n, len(chains)))
    for t in range(n):
        col = []
        for i, chain_feats in enumerate(feats):
            qf, pf = chain_feats[t]
            qe = _project(params.w_query, qf)
            pe = _project(params.w_passage, pf)
            logits[t, i] = np.dot(qe, pe)
            col.append((qf, pf, qe, pe))
        cols.append(col)
    return logits, cols


def _nll_from_logits(logits: np.ndarray) -> tuple[float, np.ndarray]:
    top = logits.max(axis=1, keepdims=True)
    ex = np.exp(logits - top)
    z = ex.sum(axis=1, keepdims=True)
    lse = (np.log(z) + top)[:, 0]
    loss = float(np.sum(lse - logits[:, 0]))
    return max(loss, 0.0), ex / z


def chain_nll_loss(params: EncoderParams, question: QuestionRecord, pos: OrderedChain,
                   negs: Sequence[OrderedChain], corpus: Mapping[str, Passage],
                   max_len: int = DEFAULT_MAX_LEN) -> float:
    """Sum over hops of -log softmax of the positive step score against the negatives.

    Each negative chain is scored with its own composed prefix at every step.
    """
    logits, _ = _logits(params, question, pos, negs, corpus, max_len)
    return _nll_from_logits(logits)[0]


def loss_and_gradient(params: EncoderParams, question: QuestionRecord, pos: OrderedChain,
                      negs: Sequence[OrderedChain], corpus: Mapping[str, Passage],
                      max_len: int = DEFAULT_MAX_LEN, out: tuple[np.ndarray, np.ndarray] | None = None,
                      scale: float = 1.0, touched: tuple[list, list] | None = None,
                      ) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Loss plus its exact gradient w.r.t. (w_query, w_passage).

    When ``out`` is given, ``scale * gradient`` is accumulated into it in place.
    ``touched`` collects the bucket indices of every query and passage feature
    vector involved, i.e. the only columns the gradient can reach.
    """
    logits, cols = _logits(params, question, pos, negs, corpus, max_len)
    loss, probs = _nll_from_logits(logits)
    if out is None:
        out = (np.zeros_like(params.w_query), np.zeros_like(params.w_passage))
    g_q, g_p = out
    resid = probs.copy()
    resid[:, 0] -= 1.0
    if touched is not None:
        for col in cols:
            for qf, pf, _, _ in col:
                touched[0].append(qf.indices)
                touched[1].append(pf.indices)
    if len(negs) == 0:
        return loss, out
    for t, col in enumerate(cols):
        for i, (qf, pf, qe, pe) in enumerate(col):
            r = scale * resid[t, i]
            if r == 0.0:
                continue
            # d logit / d W_Q = (W_P y) x^T ; d logit / d W_P = (W_Q x) y^T
            _accel.add_outer_sparse(g_q, r, pe, qf.indices, qf.values)
            _accel.add_outer_sparse(g_p, r, qe, pf.indices, pf.values)
    return loss, out


def loss_gradient(params: EncoderParams, question: QuestionRecord, pos: OrderedChain,
                  negs: Sequence[OrderedChain], corpus: Mapping[str, Passage],
                  max_len: int = DEFAULT_MAX_LEN) -> tuple[np.ndarray, np.ndarray]:
    return loss_and_gradient(params, question, pos, negs, corpus, max_len)[1]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_params(params: EncoderParams, path: str | Path) -> None:
    header = _PARAMS_HEADER.pack(_PARAMS_MAGIC, _PARAMS_FORMAT, params.hash_dim,
                                 params.emb_dim, params.seed, params.version)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.w_query.astype("<f8").tobytes(order="C"))
        fh.write(params.w_passage.astype("<f8").tobytes(order="C"))


def load_params(path: str | Path, hash_dim: int | None = None, emb_dim: int | None = None) -> EncoderParams:
    """Read a checkpoint; optional expected dims are checked against the file."""
    data = Path(path).read_bytes()
    if len(data) < _PARAMS_HEADER.size:
        raise EncoderError(f"{path}: truncated checkpoint header")
    magic, fmt, v, d, seed, version = _PARAMS_HEADER.unpack_from(data)
    if magic != _PARAMS_MAGIC:
        raise EncoderError(f"{path}: not an encoder checkpoint")
    if fmt != _PARAMS_FORMAT:
        raise EncoderError(f"{path}: unsupported checkpoint format {fmt}")
    if hash_dim is not None and hash_dim != v:
        raise DimensionError(f"{path}: hash_dim mismatch: expected {hash_dim}, checkpoint has {v}")
    if emb_dim is not None and emb_dim != d:
        raise DimensionError(f"{path}: emb_dim mismatch: expected {emb_dim}, checkpoint has {d}")
    size = v * d * 8
    if len(data) != _PARAMS_HEADER.size + 2 * size:
        raise EncoderError(f"{path}: truncated or oversized checkpoint body")
    off = _PARAMS_HEADER.size
    w_q = np.frombuffer(data, dtype="<f8", count=v * d, offset=off).reshape(d, v)
    w_p = np.frombuffer(data, dtype="<f8", count=v * d, offset=off + size).reshape(d, v)
    return EncoderParams(v, d, w_q.astype(np.float64), w_p.astype(np.float64), seed=seed, version=version)
