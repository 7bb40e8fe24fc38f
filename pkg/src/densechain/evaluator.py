"""Chain retrieval metrics (AR, PR, P EM, EM), hop diagnostics and embedding export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus, OrderedChain, QuestionRecord, infer_hop_order
from .encoder import DEFAULT_MAX_LEN, EncoderParams, compose_query, encode_passage, encode_query


class EvaluationError(ValueError):
    pass


@dataclass
class QuestionScores:
    question_id: str
    ar: int
    pr: int
    p_em: int
    em: int


@dataclass
class RetrievalMetrics:
    ar: float
    pr: float
    p_em: float
    em: float
    n: int
    per_question: list[QuestionScores] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {"ar": self.ar, "pr": self.pr, "p_em": self.p_em, "em": self.em, "n": self.n}


def _hops(chain) -> tuple[str, ...]:
    hops = getattr(chain, "hops", chain)
    return tuple(hops)


def _top(run: Mapping[str, Sequence], qid: str, top_chains: int) -> list[tuple[str, ...]]:
    if qid not in run:
        raise EvaluationError(f"run has no chains for question {qid!r}")
    return [_hops(c) for c in list(run[qid])[:top_chains]]


def evaluate_run(run: Mapping[str, Sequence], questions: Sequence[QuestionRecord], corpus: Corpus,
                 top_chains: int = 10) -> RetrievalMetrics:
    """Mean per-question metrics over the union of passages in the top chains.

    AR: the answer occurs (case-insensitively) in a retrieved passage.
    PR: at least one gold passage is retrieved. P EM: both are retrieved.
    EM: both gold passages are in the top-1 chain, in either order.
    """
    rows = []
    for q in questions:
        chains = _top(run, q.id, top_chains)
        retrieved = {pid for c in chains for pid in c}
        gold = set(q.gold_ids)
        answer = q.answer.lower()
        ar = int(bool(answer) and any(answer in corpus[pid].full_text.lower() for pid in retrieved))
        pr = int(bool(gold & retrieved))
        p_em = int(bool(gold) and gold <= retrieved)
        if chains and len(chains[0]) != 2:
            raise EvaluationError(f"question {q.id!r}: EM needs two-hop chains, top chain has {len(chains[0])}")
        em = int(bool(chains) and bool(gold) and gold <= set(chains[0]))
        rows.append(QuestionScores(q.id, ar, pr, p_em, em))
    n = len(rows)
    if n == 0:
        return RetrievalMetrics(0.0, 0.0, 0.0, 0.0, 0, rows)

    def mean(attr: str) -> float:
        return sum(getattr(r, attr) for r in rows) / n

    return RetrievalMetrics(mean("ar"), mean("pr"), mean("p_em"), mean("em"), n, rows)


def write_metrics(metrics: RetrievalMetrics, path: str | Path, per_question_csv: str | Path | None = None,
                  extra: Mapping | None = None) -> None:
    rec = metrics.to_json()
    if extra:
        rec.update(extra)
    Path(path).write_text(json.dumps(rec, sort_keys=True) + "\n", encoding="utf-8")
    if per_question_csv is not None:
        with open(per_question_csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["question_id", "ar", "pr", "p_em", "em"])
            for r in metrics.per_question:
                w.writerow([r.question_id, r.ar, r.pr, r.p_em, r.em])


@dataclass
class HopReport:
    hop1_acc: float
    hop2_acc: float
    overlap: float
    n: int
    flagged: int = 0

    def to_json(self) -> dict:
        return {"hop1_acc": self.hop1_acc, "hop2_acc": self.hop2_acc, "overlap": self.overlap,
                "n": self.n, "flagged": self.flagged}


def hop_report(run: Mapping[str, Sequence], questions: Sequence[QuestionRecord], corpus: Corpus,
               top_chains: int = 10) -> HopReport:
    """Per-position gold accuracy and first/second position Jaccard overlap."""
    h1 = h2 = 0
    overlaps = []
    flagged = 0
    for q in questions:
        order = infer_hop_order(q, corpus)
        flagged += order.flagged
        g1, g2 = order.chain.hops
        chains = _top(run, q.id, top_chains)
        first = {c[0] for c in chains if len(c) >= 1}
        second = {c[1] for c in chains if len(c) >= 2}
        h1 += g1 in first
        h2 += g2 in second
        union = first | second
        overlaps.append(len(first & second) / len(union) if union else 0.0)
    n = len(overlaps)
    if n == 0:
        return HopReport(0.0, 0.0, 0.0, 0)
    return HopReport(h1 / n, h2 / n, float(np.mean(overlaps)), n, flagged)


def export_embeddings(params: EncoderParams, corpus: Corpus, questions: Sequence[QuestionRecord],
                      path: str | Path, hops: Mapping[str, OrderedChain] | None = None,
                      negatives: Mapping[str, Sequence[str]] | None = None, num_negatives: int = 3,
                      max_len: int = DEFAULT_MAX_LEN) -> int:
    """Write labeled vectors as TSV: ``label, id, v_1 .. v_d``.

    Labels: Q1 (question), Q2 (question composed with the gold first hop), P1 and
    P2 (gold passages), NEG (negatives; by default the best-scoring non-gold
    passages for Q1). Returns the number of rows written.
    """
    passage_vecs = None
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["label", "id"] + [f"v{i}" for i in range(params.emb_dim)])

        def emit(label: str, rid: str, vec: np.ndarray) -> None:
            nonlocal rows
            w.writerow([label, rid] + [repr(float(x)) for x in vec])
            rows += 1

        for q in questions:
            chain = hops[q.id] if hops is not None and q.id in hops else infer_hop_order(q, corpus).chain
            p1, p2 = (corpus[pid] for pid in chain.hops[:2])
            q1 = encode_query(params, compose_query(q.tokens, (), max_len))
            emit("Q1", q.id, q1)
            emit("Q2", q.id, encode_query(params, compose_query(q.tokens, (p1,), max_len)))
            emit("P1", p1.id, encode_passage(params, p1))
            emit("P2", p2.id, encode_passage(params, p2))
            if negatives is not None and q.id in negatives:
                neg_ids = list(negatives[q.id])
            else:
                if passage_vecs is None:
                    passage_vecs = np.array([encode_passage(params, p) for p in corpus.passages])
                scores = passage_vecs @ q1
                order = sorted(range(len(scores)), key=lambda i: (-scores[i], corpus.ids[i]))
                neg_ids = [corpus.ids[i] for i in order if corpus.ids[i] not in q.gold_ids][:num_negatives]
            for pid in neg_ids:
                emit("NEG", pid, encode_passage(params, corpus[pid]))
    return rows
