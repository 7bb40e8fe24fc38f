import json

import pytest
from hypothesis import given, strategies as st

from densechain.corpus import (
    Corpus, CorpusError, OrderedChain, Passage, QuestionRecord, infer_hop_order, load_corpus,
    load_questions, passage_to_json, question_to_json, tokenize, validate, write_jsonl,
)


@pytest.mark.parametrize("text, expected", [
    ("Ralph Hefferline", ["ralph", "hefferline"]),
    ("", []),
    ("co-wrote a film.", ["co", "wrote", "a", "film"]),
    ("  Héllo,WORLD__x ", ["héllo", "world", "x"]),
])
def test_tokenize_examples(text, expected):
    assert tokenize(text) == expected


@given(st.text(max_size=60))
def test_tokenize_idempotent(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks
    assert all(t and t == t.lower() for t in toks)


def test_passage_tokens_cover_title_and_text():
    p = Passage("x", "The Title", "some text")
    assert p.tokens == ("the", "title", "some", "text")


def test_ordered_chain_rejects_repeats():
    with pytest.raises(CorpusError):
        OrderedChain(("a", "a"))


def test_load_two_line_corpus(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(path, [passage_to_json(Passage("a", "A", "x")), passage_to_json(Passage("b", "B", "y"))])
    corpus = load_corpus(path)
    assert len(corpus) == 2
    assert corpus["b"].title == "B"


def test_duplicate_id_is_an_error(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "title": "", "text": "x"}\n{"id": "a", "title": "", "text": "y"}\n')
    with pytest.raises(CorpusError, match="duplicate id"):
        load_corpus(path)
    with pytest.raises(CorpusError, match="duplicate id"):
        Corpus([Passage("a", "", "x"), Passage("a", "", "y")])


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "title": "", "text": "x"}\n\n{"id": oops}\n')
    with pytest.raises(CorpusError, match="line 3"):
        load_corpus(path)
    path.write_text('{"id": "a", "title": ""}\n')
    with pytest.raises(CorpusError, match="line 1: missing field 'text'"):
        load_corpus(path)


def test_question_round_trip(tmp_path):
    q = QuestionRecord("q1", "who?", "ans", frozenset({"b", "a"}), "bridge")
    path = tmp_path / "q.jsonl"
    write_jsonl(path, [question_to_json(q)])
    assert json.loads(path.read_text())["gold_ids"] == ["a", "b"]
    assert load_questions(path) == [q]


def test_missing_gold_caught_at_validation(tmp_path):
    corpus = Corpus([Passage("a", "", "x"), Passage("b", "", "y")])
    validate([QuestionRecord("q", "t", "x", frozenset({"a", "b"}))], corpus)
    with pytest.raises(CorpusError, match="not in corpus"):
        validate([QuestionRecord("q", "t", "x", frozenset({"a", "zz"}))], corpus)
    with pytest.raises(CorpusError, match="expected 2"):
        validate([QuestionRecord("q", "t", "x", frozenset({"a"}))], corpus)


def _pair(a: Passage, b: Passage, text: str, answer: str):
    corpus = Corpus([a, b])
    return infer_hop_order(QuestionRecord("q", text, answer, frozenset({a.id, b.id})), corpus)


def test_hop_order_answer_only_in_second():
    res = _pair(Passage("A", "Film X", "directed by Bob Ray"), Passage("B", "Bob Ray", "born in Oslo"),
                "where was the director of Film X born", "Oslo")
    assert res.chain.hops == ("A", "B") and not res.flagged


def test_hop_order_answer_in_first_is_reversed():
    res = _pair(Passage("A", "Bob Ray", "born in Oslo"), Passage("B", "Film X", "directed by Bob Ray"),
                "where was the director of Film X born", "Oslo")
    assert res.chain.hops == ("B", "A")


def test_hop_order_title_rule_when_both_hold_answer():
    res = _pair(Passage("B", "Lake Tor", "near Oslo"), Passage("A", "Oslo Fjord", "Oslo is near Lake Tor"),
                "what city is near lake tor", "Oslo")
    # both contain "oslo" (A through its title); only B's title occurs in the question
    assert res.chain.hops == ("B", "A")


def test_hop_order_overlap_rule_by_hand():
    # answer in both, no title in the question; overlap: A shares {red, fox}, B shares {fox}
    a = Passage("A", "Tx", "red fox ans")
    b = Passage("B", "Ty", "fox ans")
    res = _pair(b, a, "the red fox", "ans")
    assert res.chain.hops == ("A", "B") and not res.flagged


def test_hop_order_id_fallback_and_flag():
    res = _pair(Passage("m", "T1", "same words"), Passage("k", "T2", "same words"), "no overlap here", "zzz")
    assert res.flagged
    assert res.chain.hops == ("k", "m")


@given(st.lists(st.sampled_from(["a", "b", "c", "ans", "t"]), min_size=1, max_size=6),
       st.lists(st.sampled_from(["a", "b", "c", "ans", "t"]), min_size=1, max_size=6),
       st.lists(st.sampled_from(["a", "b", "c", "t"]), min_size=1, max_size=4))
def test_hop_order_total_and_deterministic(ta, tb, tq):
    a, b = Passage("x1", "t", " ".join(ta)), Passage("x2", "u", " ".join(tb))
    r1 = _pair(a, b, " ".join(tq), "ans")
    r2 = _pair(b, a, " ".join(tq), "ans")
    assert r1 == r2
    assert set(r1.chain.hops) == {"x1", "x2"}
