"""Passages, questions, tokenization and gold hop-order inference."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

logger = logging.getLogger(__name__)

_SPLIT_RE = re.compile(r"[^\w]+|_+", re.UNICODE)


class CorpusError(ValueError):
    """Malformed or inconsistent corpus / question data."""


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _SPLIT_RE.split(text.lower()) if t]


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str
    tokens: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.tokens:
            object.__setattr__(self, "tokens", tuple(tokenize(self.full_text)))

    @property
    def full_text(self) -> str:
        return f"{self.title} {self.text}"


@dataclass(frozen=True)
class QuestionRecord:
    id: str
    text: str
    answer: str = ""
    gold_ids: frozenset[str] = frozenset()
    qtype: str | None = None

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)

    @property
    def supervised(self) -> bool:
        return len(self.gold_ids) > 0


@dataclass(frozen=True)
class OrderedChain:
    hops: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.hops)) != len(self.hops):
            raise CorpusError(f"chain repeats a passage: {self.hops}")

    def __len__(self) -> int:
        return len(self.hops)

    def __iter__(self) -> Iterator[str]:
        return iter(self.hops)


@dataclass(frozen=True)
class HopOrder:
    """Result of hop-order inference; ``flagged`` marks the fallback path."""

    chain: OrderedChain
    flagged: bool = False


class Corpus(Mapping[str, Passage]):
    """Id-addressed, insertion-ordered passage collection."""

    def __init__(self, passages: Iterable[Passage] = ()) -> None:
        self._by_id: dict[str, Passage] = {}
        for p in passages:
            if p.id in self._by_id:
                raise CorpusError(f"duplicate id {p.id!r}")
            self._by_id[p.id] = p

    def __getitem__(self, pid: str) -> Passage:
        return self._by_id[pid]

    def __iter__(self) -> Iterator[str]:
        return iter(self._by_id)

    def __len__(self) -> int:
        return len(self._by_id)

    @property
    def passages(self) -> list[Passage]:
        return list(self._by_id.values())

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, rec


def _field(rec: dict, key: str, path, lineno: int, required: bool = True) -> str:
    if key not in rec:
        if required:
            raise CorpusError(f"{path}: line {lineno}: missing field {key!r}")
        return ""
    val = rec[key]
    if not isinstance(val, str):
        raise CorpusError(f"{path}: line {lineno}: field {key!r} must be a string")
    return val


def load_corpus(path: str | Path) -> Corpus:
    passages = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        pid = _field(rec, "id", path, lineno)
        if pid in seen:
            raise CorpusError(f"{path}: line {lineno}: duplicate id {pid!r}")
        seen.add(pid)
        passages.append(Passage(pid, _field(rec, "title", path, lineno), _field(rec, "text", path, lineno)))
    return Corpus(passages)


def load_questions(path: str | Path) -> list[QuestionRecord]:
    out = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        qid = _field(rec, "id", path, lineno)
        if qid in seen:
            raise CorpusError(f"{path}: line {lineno}: duplicate id {qid!r}")
        seen.add(qid)
        gold = rec.get("gold_ids", [])
        if not isinstance(gold, list) or not all(isinstance(g, str) for g in gold):
            raise CorpusError(f"{path}: line {lineno}: gold_ids must be a list of strings")
        if len(set(gold)) != len(gold):
            raise CorpusError(f"{path}: line {lineno}: gold_ids repeats an id")
        qtype = rec.get("type")
        out.append(QuestionRecord(
            id=qid,
            text=_field(rec, "question", path, lineno),
            answer=_field(rec, "answer", path, lineno, required=False),
            gold_ids=frozenset(gold),
            qtype=qtype if isinstance(qtype, str) else None,
        ))
    return out


def passage_to_json(p: Passage) -> dict:
    return {"id": p.id, "title": p.title, "text": p.text}


def question_to_json(q: QuestionRecord, gold_order: Sequence[str] | None = None) -> dict:
    rec = {"id": q.id, "question": q.text, "answer": q.answer,
           "gold_ids": list(gold_order) if gold_order is not None else sorted(q.gold_ids)}
    if q.qtype is not None:
        rec["type"] = q.qtype
    return rec


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=False) + "\n")


def validate(questions: Sequence[QuestionRecord], corpus: Corpus, require_pairs: bool = True) -> None:
    """Check gold ids resolve in the corpus and supervised records have exactly two."""
    for q in questions:
        missing = sorted(g for g in q.gold_ids if g not in corpus)
        if missing:
            raise CorpusError(f"question {q.id!r}: gold id(s) not in corpus: {missing}")
        if require_pairs and q.supervised and len(q.gold_ids) != 2:
            raise CorpusError(f"question {q.id!r}: expected 2 gold ids, got {len(q.gold_ids)}")


def _overlap(question_tokens: set[str], passage: Passage) -> int:
    return len(question_tokens.intersection(passage.tokens))


def infer_hop_order(q: QuestionRecord, corpus: Corpus) -> HopOrder:
    """Order a two-passage gold set: the passage holding the answer is the second hop.

    If both hold the answer, a passage whose title occurs in the question goes first.
    Remaining ties go to the passage with more question-token overlap, then the
    smaller id. When neither passage holds the answer the result is flagged and the
    overlap/id rule decides alone.
    """
    if len(q.gold_ids) != 2:
        raise CorpusError(f"question {q.id!r}: hop order needs exactly 2 gold ids")
    if not q.answer:
        raise CorpusError(f"question {q.id!r}: hop order needs a non-empty answer")
    a, b = sorted(q.gold_ids)
    pa, pb = corpus[a], corpus[b]
    answer = q.answer.lower()
    has_a = answer in pa.full_text.lower()
    has_b = answer in pb.full_text.lower()

    if has_a != has_b:
        return HopOrder(OrderedChain((b, a) if has_a else (a, b)))

    flagged = not has_a
    if has_a:
        qtext = q.text.lower()
        title_a = bool(pa.title) and pa.title.lower() in qtext
        title_b = bool(pb.title) and pb.title.lower() in qtext
        if title_a != title_b:
            return HopOrder(OrderedChain((a, b) if title_a else (b, a)))

    qtok = set(q.tokens)
    ov_a, ov_b = _overlap(qtok, pa), _overlap(qtok, pb)
    if ov_b > ov_a:
        a, b = b, a
    if flagged:
        logger.debug("question %s: answer in neither gold passage, using overlap order", q.id)
    return HopOrder(OrderedChain((a, b)), flagged=flagged)
