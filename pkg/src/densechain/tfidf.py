"""Smoothed-idf cosine TF-IDF retriever (warm-up negatives and baseline)."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _accel
from .corpus import Corpus
from .vindex import _id_rank

_MAGIC = b"DCTFIDF\x00"
_FORMAT = 1
_HEADER = struct.Struct("<8sIQ")  # magic, format, json payload length


class TfIdfError(ValueError):
    pass


@dataclass
class TfIdfModel:
    ids: tuple[str, ...]
    vocab: dict[str, int]
    df: np.ndarray  # per term column
    counts: sp.csr_matrix  # raw term counts, docs x terms
    doc_count: int = field(init=False)
    idf: np.ndarray = field(init=False, repr=False)
    doc_vectors: sp.csr_matrix = field(init=False, repr=False)
    doc_norms: dict[str, float] = field(init=False, repr=False)
    rank: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.doc_count = len(self.ids)
        self.idf = np.log((1.0 + self.doc_count) / (1.0 + self.df.astype(np.float64)))
        weighted = sp.csr_matrix(self.counts.multiply(self.idf[None, :]))
        norms = np.sqrt(np.asarray(weighted.multiply(weighted).sum(axis=1)).ravel())
        self.doc_norms = {pid: float(n) for pid, n in zip(self.ids, norms)}
        inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
        self.doc_vectors = sp.csr_matrix(sp.diags(inv) @ weighted)
        self.rank = _id_rank(self.ids)

    def term_idf(self, term: str) -> float:
        col = self.vocab.get(term)
        return 0.0 if col is None else float(self.idf[col])

    def query_vector(self, tokens: Sequence[str]) -> np.ndarray:
        q = np.zeros(len(self.vocab))
        for term, tf in Counter(tokens).items():
            col = self.vocab.get(term)
            if col is not None:
                q[col] = tf * self.idf[col]
        norm = np.linalg.norm(q)
        return q / norm if norm > 0 else q


def fit(corpus: Corpus) -> TfIdfModel:
    if len(corpus) == 0:
        raise TfIdfError("cannot fit tf-idf on an empty corpus")
    vocab: dict[str, int] = {}
    rows, cols, vals = [], [], []
    for r, p in enumerate(corpus.passages):
        for term, tf in Counter(p.tokens).items():
            c = vocab.setdefault(term, len(vocab))
            rows.append(r)
            cols.append(c)
            vals.append(float(tf))
    counts = sp.csr_matrix((vals, (rows, cols)), shape=(len(corpus), len(vocab)))
    counts.sort_indices()
    df = np.bincount(counts.indices, minlength=len(vocab))
    return TfIdfModel(tuple(corpus.ids), vocab, df, counts)


def scores(model: TfIdfModel, query_tokens: Sequence[str]) -> np.ndarray:
    return np.asarray(model.doc_vectors @ model.query_vector(query_tokens)).ravel()


def search_tfidf(model: TfIdfModel, query_tokens: Sequence[str], k: int) -> list[tuple[str, float]]:
    """Top-k documents by cosine similarity; ties resolved by ascending id."""
    if model.doc_count == 0:
        raise TfIdfError("search on an empty tf-idf model")
    if k < 1:
        raise TfIdfError("k must be >= 1")
    s = scores(model, query_tokens)
    top = _accel.topk_rows(s[None, :], model.rank, k)[0]
    return [(model.ids[j], float(s[j])) for j in top]


def save(model: TfIdfModel, path: str | Path) -> None:
    terms = sorted(model.vocab, key=model.vocab.__getitem__)
    c = model.counts
    payload = json.dumps({"ids": list(model.ids), "terms": terms}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _FORMAT, len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<QQ", c.indptr.size, c.indices.size))
        fh.write(c.indptr.astype("<i8").tobytes())
        fh.write(c.indices.astype("<i8").tobytes())
        fh.write(c.data.astype("<f8").tobytes())


def load(path: str | Path) -> TfIdfModel:
    data = Path(path).read_bytes()
    try:
        magic, fmt, plen = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise TfIdfError(f"{path}: not a tf-idf model file")
        if fmt != _FORMAT:
            raise TfIdfError(f"{path}: unsupported tf-idf format {fmt}")
        off = _HEADER.size
        meta = json.loads(data[off:off + plen].decode("utf-8"))
        off += plen
        n_ptr, nnz = struct.unpack_from("<QQ", data, off)
        off += 16
        if len(data) - off != 8 * (n_ptr + 2 * nnz):
            raise TfIdfError(f"{path}: truncated or oversized tf-idf body")
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TfIdfError(f"{path}: corrupt tf-idf model ({exc})") from None
    indptr = np.frombuffer(data, "<i8", n_ptr, off)
    indices = np.frombuffer(data, "<i8", nnz, off + 8 * n_ptr)
    vals = np.frombuffer(data, "<f8", nnz, off + 8 * (n_ptr + nnz))
    ids, terms = meta["ids"], meta["terms"]
    counts = sp.csr_matrix((vals.astype(np.float64), indices.astype(np.int64), indptr.astype(np.int64)),
                           shape=(len(ids), len(terms)))
    df = np.bincount(counts.indices, minlength=len(terms))
    return TfIdfModel(tuple(ids), {t: i for i, t in enumerate(terms)}, df, counts)

