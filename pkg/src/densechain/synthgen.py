"""Synthetic two-hop corpora with controllable lexical overlap.

Each chain has a question entity ``e1``, a bridge entity ``e2`` and an answer
token. The question mentions only ``e1``; the first-hop passage links ``e1`` to
``e2``; the second-hop passage links ``e2`` to the answer. With
``bridge_overlap=0`` the second-hop passage shares no token with the question,
so a term matcher on the question alone cannot reach it.

Entities and answers are unique single words; every other word comes from small
shared template and filler banks.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from pathlib import Path

from .corpus import Corpus, Passage, QuestionRecord, passage_to_json, question_to_json, write_jsonl
from .tfidf import fit as fit_tfidf, search_tfidf

_CONS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONS for v in _VOWELS]

# template slots: how many words each bank draws
_N_QUESTION_TEMPLATES = 12
_N_RELATION_TEMPLATES = 12
_N_ANSWER_TEMPLATES = 12
_TEMPLATE_LEN = 4
_N_FILLER_PHRASES = 40
_PHRASE_LEN = 3


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_chains: int = 200
    distractors_per_chain: int = 3
    vocab_size: int = 3000
    tokens_per_passage: int = 6
    bridge_overlap: float = 0.0
    seed: int = 0
    tfidf_check_k: int = 20
    max_resample: int = 50

    def to_json(self) -> dict:
        return asdict(self)


def _word(i: int) -> str:
    n = len(_SYLLABLES)
    return _SYLLABLES[i % n] + _SYLLABLES[(i // n) % n] + _SYLLABLES[(i // (n * n)) % n]


def _template_words_needed() -> int:
    return (_TEMPLATE_LEN * (_N_QUESTION_TEMPLATES + _N_RELATION_TEMPLATES + _N_ANSWER_TEMPLATES)
            + _PHRASE_LEN * _N_FILLER_PHRASES)


def _names_needed(cfg: SynthConfig) -> int:
    return cfg.num_chains * (2 + 2 * cfg.distractors_per_chain)


def check_feasible(cfg: SynthConfig) -> None:
    if cfg.num_chains < 1:
        raise SynthError("num_chains must be >= 1")
    if cfg.distractors_per_chain < 0:
        raise SynthError("distractors_per_chain must be >= 0")
    if not 0.0 <= cfg.bridge_overlap <= 1.0:
        raise SynthError("bridge_overlap must lie in [0, 1]")
    if cfg.tokens_per_passage < _TEMPLATE_LEN + 2:
        raise SynthError(f"tokens_per_passage must be >= {_TEMPLATE_LEN + 2}")
    need = _template_words_needed() + _names_needed(cfg) + cfg.num_chains
    if cfg.vocab_size < need:
        raise SynthError(f"vocab_size {cfg.vocab_size} too small: need at least {need} distinct words")
    if cfg.vocab_size > len(_SYLLABLES) ** 3:
        raise SynthError(f"vocab_size exceeds the {len(_SYLLABLES) ** 3} available word forms")


class _Lexicon:
    def __init__(self, cfg: SynthConfig, rng: random.Random) -> None:
        words = [_word(i) for i in range(cfg.vocab_size)]
        rng.shuffle(words)
        pos = 0

        def take(n: int) -> list[str]:
            nonlocal pos
            out = words[pos:pos + n]
            pos += n
            return out

        def bank(count: int, size: int) -> list[list[str]]:
            return [take(size) for _ in range(count)]

        self.question_templates = bank(_N_QUESTION_TEMPLATES, _TEMPLATE_LEN)
        self.relation_templates = bank(_N_RELATION_TEMPLATES, _TEMPLATE_LEN)
        self.answer_templates = bank(_N_ANSWER_TEMPLATES, _TEMPLATE_LEN)
        self.phrases = bank(_N_FILLER_PHRASES, _PHRASE_LEN)
        self._names = iter([w.capitalize() for w in take(_names_needed(cfg))])
        self.answers = take(cfg.num_chains)

    def name(self) -> str:
        return next(self._names)


def _pad(words: list[str], target: int, lex: _Lexicon, rng: random.Random) -> list[str]:
    out = list(words)
    while len(out) < target:
        out.extend(rng.choice(lex.phrases))
    return out


def _with_overlap(words: list[str], question_words: list[str], frac: float, rng: random.Random,
                  protect: int) -> list[str]:
    """Put ``round(frac * len(words))`` question words into the passage.

    Unprotected positions are overwritten first; any remainder is appended.
    """
    if frac <= 0.0 or not question_words:
        return words
    n = max(1, round(frac * len(words)))
    slots = list(range(protect, len(words)))
    out = list(words)
    for i in rng.sample(slots, min(n, len(slots))):
        out[i] = rng.choice(question_words)
    out.extend(rng.choice(question_words) for _ in range(n - len(slots)))
    return out


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[list[Passage], list[QuestionRecord]]:
    """Build passages and questions; deterministic in ``cfg``.

    With ``bridge_overlap == 0`` every chain is checked with a TF-IDF search on
    the raw question: the gold second-hop passage must not appear in the top
    ``tfidf_check_k`` with a positive score. Offending chains are resampled, and
    generation fails after ``max_resample`` rounds.
    """
    check_feasible(cfg)
    rng = random.Random(cfg.seed)
    lex = _Lexicon(cfg, rng)
    width = len(str(cfg.num_chains - 1))
    chains = []
    for c in range(cfg.num_chains):
        e1 = lex.name()
        e2 = lex.name()
        distractors = [(lex.name(), lex.name())
                       for _ in range(cfg.distractors_per_chain)]
        chains.append({"e1": e1, "e2": e2, "ans": lex.answers[c], "distractors": distractors})

    def draw_chain(c: int, entry: dict) -> tuple[list[Passage], QuestionRecord]:
        qt = rng.choice(lex.question_templates)
        rel = rng.choice(lex.relation_templates)
        at = rng.choice(lex.answer_templates)
        n_tok = cfg.tokens_per_passage
        e1, e2, ans = entry["e1"], entry["e2"], entry["ans"]
        question = qt + [e1]
        hop1 = _pad(rel + [e2], n_tok - 1, lex, rng)
        hop2 = _pad([e2] + at + [ans], n_tok - 1, lex, rng)
        hop2 = _with_overlap(hop2, qt, cfg.bridge_overlap, rng, protect=_TEMPLATE_LEN + 2)
        passages = [
            Passage(f"p{c:0{width}d}-00", e1, " ".join(hop1)),
            Passage(f"p{c:0{width}d}-01", e2, " ".join(hop2)),
        ]
        for j, (title, obj) in enumerate(entry["distractors"], start=2):
            shared = rng.sample(qt, k=_TEMPLATE_LEN // 2)
            body = _pad([title] + shared + rng.choice(lex.relation_templates) + [obj], n_tok - 1, lex, rng)
            passages.append(Passage(f"p{c:0{width}d}-{j:02d}", title, " ".join(body)))
        q = QuestionRecord(
            id=f"q{c:0{width}d}",
            text=" ".join(question) + "?",
            answer=ans,
            gold_ids=frozenset({passages[0].id, passages[1].id}),
            qtype="bridge",
        )
        return passages, q

    drawn = [draw_chain(c, entry) for c, entry in enumerate(chains)]
    if cfg.bridge_overlap == 0.0:
        for _ in range(cfg.max_resample):
            bad = _tfidf_violations(drawn, cfg.tfidf_check_k)
            if not bad:
                break
            for c in bad:
                drawn[c] = draw_chain(c, chains[c])
        else:
            raise SynthError("could not keep second-hop passages out of the TF-IDF top-k; "
                             "increase num_chains or tokens_per_passage")
    passages = [p for ps, _ in drawn for p in ps]
    questions = [q for _, q in drawn]
    return passages, questions


def _tfidf_violations(drawn, k: int) -> list[int]:
    corpus = Corpus(p for ps, _ in drawn for p in ps)
    model = fit_tfidf(corpus)
    bad = []
    for c, (ps, q) in enumerate(drawn):
        hop2 = ps[1].id
        for pid, score in search_tfidf(model, q.tokens, k):
            # a zero-score hit only got there by id tie-breaking; resampling cannot move it
            if pid == hop2 and score > 0.0:
                bad.append(c)
    return bad


def split_questions(questions: list[QuestionRecord], num_dev: int) -> tuple[list[QuestionRecord], list[QuestionRecord]]:
    """Deterministic train/dev split: the last ``num_dev`` questions form dev."""
    if not 0 <= num_dev <= len(questions):
        raise SynthError(f"num_dev {num_dev} outside [0, {len(questions)}]")
    cut = len(questions) - num_dev
    return questions[:cut], questions[cut:]


def write(cfg: SynthConfig, corpus_path: str | Path, questions_path: str | Path,
          dev_path: str | Path | None = None, num_dev: int = 0) -> dict:
    passages, questions = generate(cfg)
    write_jsonl(corpus_path, (passage_to_json(p) for p in passages))
    train, dev = split_questions(questions, num_dev if dev_path is not None else 0)
    write_jsonl(questions_path, (question_to_json(q) for q in train))
    if dev_path is not None:
        write_jsonl(dev_path, (question_to_json(q) for q in dev))
    return {"passages": len(passages), "train_questions": len(train), "dev_questions": len(dev)}
