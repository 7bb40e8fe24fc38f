"""Beam search over evidence chains in the dense space."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Passage, QuestionRecord, tokenize
from .encoder import DEFAULT_MAX_LEN, EncoderParams, compose_query, encode_query
from .tfidf import TfIdfModel, search_tfidf
from .vindex import VectorIndex, search_batch

SCORE_MODES = ("raw-sum", "per-step-softmax")


class BeamSearchError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredChain:
    hops: tuple[str, ...]
    step_scores: tuple[float, ...]
    score: float

    def sort_key(self):
        return (-self.score, self.hops)

    def to_json(self) -> dict:
        return {"hops": list(self.hops), "step_scores": list(self.step_scores), "score": self.score}

    @classmethod
    def from_json(cls, rec: Mapping) -> "ScoredChain":
        return cls(tuple(rec["hops"]), tuple(float(s) for s in rec.get("step_scores", ())),
                   float(rec.get("score", 0.0)))


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 10
    per_step_k: int | None = None
    chain_len: int = 2
    score_mode: str = "raw-sum"
    return_top: int = 10
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise BeamSearchError("beam_size must be >= 1")
        if self.per_step_k is not None and self.per_step_k < 1:
            raise BeamSearchError("per_step_k must be >= 1")
        if self.chain_len < 1:
            raise BeamSearchError("chain_len must be >= 1")
        if self.return_top < 1:
            raise BeamSearchError("return_top must be >= 1")
        if self.score_mode not in SCORE_MODES:
            raise BeamSearchError(f"unknown score_mode {self.score_mode!r}; expected one of {SCORE_MODES}")

    @property
    def step_k(self) -> int:
        return self.per_step_k if self.per_step_k is not None else max(self.beam_size, 10)


def _logsumexp(xs: Sequence[float]) -> float:
    top = max(xs)
    return top + math.log(math.fsum(math.exp(x - top) for x in xs))


def chain_score_update(prev, sim: float, step_candidates: Sequence[float], mode: str = "raw-sum") -> float:
    """Cumulative chain score after appending a hop with similarity ``sim``.

    ``raw-sum`` adds the similarity (a product of exp-similarities in log space);
    ``per-step-softmax`` adds the log-softmax of ``sim`` among ``step_candidates``,
    which must include ``sim`` itself.
    """
    if prev is None:
        base = 0.0
    elif isinstance(prev, ScoredChain):
        base = prev.score
    else:
        base = float(prev)
    if mode == "raw-sum":
        return base + sim
    if mode == "per-step-softmax":
        if not step_candidates:
            raise BeamSearchError("per-step-softmax needs at least one candidate")
        return base + (sim - _logsumexp(step_candidates))
    raise BeamSearchError(f"unknown score_mode {mode!r}")


def _question_tokens(question) -> list[str]:
    if isinstance(question, QuestionRecord):
        return question.tokens
    if isinstance(question, str):
        return tokenize(question)
    return list(question)


def _extend(prefix: ScoredChain | None, hits: list[tuple[str, float]], mode: str) -> list[ScoredChain]:
    used = set(prefix.hops) if prefix is not None else set()
    kept = [(pid, s) for pid, s in hits if pid not in used]
    sims = [s for _, s in kept]
    out = []
    for pid, s in kept:
        score = chain_score_update(prefix, s, sims, mode)
        if prefix is None:
            out.append(ScoredChain((pid,), (s,), score))
        else:
            out.append(ScoredChain(prefix.hops + (pid,), prefix.step_scores + (s,), score))
    return out


def _prune(pool: Iterable[ScoredChain], keep: int) -> list[ScoredChain]:
    best: dict[tuple[str, ...], ScoredChain] = {}
    for c in pool:
        cur = best.get(c.hops)
        if cur is None or c.score > cur.score:
            best[c.hops] = c
    return sorted(best.values(), key=ScoredChain.sort_key)[:keep]


def retrieve_chains(question, params: EncoderParams, index: VectorIndex,
                    corpus: Mapping[str, Passage], cfg: BeamConfig = BeamConfig(),
                    check_version: bool = False) -> list[ScoredChain]:
    """Top ``cfg.return_top`` chains of length ``cfg.chain_len``, best first."""
    if len(index) == 0:
        raise BeamSearchError("empty index")
    if cfg.chain_len > len(index):
        raise BeamSearchError(f"chain_len {cfg.chain_len} exceeds corpus size {len(index)}")
    if params.emb_dim != index.dim:
        raise BeamSearchError(f"params emb_dim {params.emb_dim} != index dim {index.dim}")
    if check_version and params.version != index.model_version:
        raise BeamSearchError(f"index version {index.model_version} != params version {params.version}")

    qtok = _question_tokens(question)
    k = cfg.step_k
    qv = encode_query(params, compose_query(qtok, (), cfg.max_len))
    hits = search_batch(index, qv[None, :], k)[0]
    beam = _prune(_extend(None, hits, cfg.score_mode), cfg.beam_size)

    for _ in range(1, cfg.chain_len):
        queries = np.empty((len(beam), params.emb_dim))
        for i, chain in enumerate(beam):
            cq = compose_query(qtok, [corpus[pid] for pid in chain.hops], cfg.max_len)
            queries[i] = encode_query(params, cq)
        pool: list[ScoredChain] = []
        for chain, chain_hits in zip(beam, search_batch(index, queries, k)):
            pool.extend(_extend(chain, chain_hits, cfg.score_mode))
        beam = _prune(pool, cfg.beam_size)

    return beam[:cfg.return_top]


def tfidf_chains(question, model: TfIdfModel, top: int = 10) -> list[ScoredChain]:
    """Term-matching chain baseline: consecutive pairs of the question's ranked hits."""
    hits = search_tfidf(model, _question_tokens(question), top + 1)
    out = [ScoredChain((a, b), (sa, sb), sa + sb) for (a, sa), (b, sb) in zip(hits, hits[1:])]
    return out[:top]


# ---------------------------------------------------------------------------
# run files
# ---------------------------------------------------------------------------


def write_run(path: str | Path, run: Mapping[str, Sequence[ScoredChain]], meta: Mapping | None = None) -> None:
    """JSONL run file; an optional first line ``{"meta": ...}`` records provenance."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": dict(meta)}, sort_keys=True) + "\n")
        for qid, chains in run.items():
            rec = {"question_id": qid, "chains": [c.to_json() for c in chains]}
            fh.write(json.dumps(rec) + "\n")


def read_run(path: str | Path) -> dict[str, list[ScoredChain]]:
    run: dict[str, list[ScoredChain]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "meta" in rec and "question_id" not in rec:
                    continue
                run[rec["question_id"]] = [ScoredChain.from_json(c) for c in rec["chains"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BeamSearchError(f"{path}: line {lineno}: malformed run record ({exc})") from None
    return run


def read_run_meta(path: str | Path) -> dict:
    """Provenance record from the first line of a run file, or ``{}``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first) if first.strip() else {}
    except json.JSONDecodeError:
        return {}
    return rec.get("meta", {}) if isinstance(rec, dict) and "question_id" not in rec else {}
