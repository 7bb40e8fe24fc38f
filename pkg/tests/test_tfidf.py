import math

import numpy as np
import pytest

from conftest import random_corpus
from densechain import tfidf
from densechain.corpus import Corpus, Passage


@pytest.fixture
def abc():
    return tfidf.fit(Corpus([Passage("d1", "", "a b"), Passage("d2", "", "a c")]))


def test_hand_idf(abc):
    # smoothed idf: ln((1 + N) / (1 + df))
    assert abc.term_idf("b") == pytest.approx(math.log(3 / 2))
    assert abc.term_idf("a") == pytest.approx(0.0)
    assert abc.term_idf("zzz") == 0.0


def test_query_ranks_hand_computed(abc):
    hits = tfidf.search_tfidf(abc, ["b"], 2)
    assert hits[0] == ("d1", pytest.approx(1.0))
    assert hits[1] == ("d2", 0.0)


def test_single_doc_corpus_has_zero_vector():
    m = tfidf.fit(Corpus([Passage("x", "", "only words here")]))
    assert m.doc_norms["x"] == 0.0
    assert tfidf.search_tfidf(m, ["only"], 3) == [("x", 0.0)]


def test_oov_query_returns_id_order():
    corpus = random_corpus(9, seed=2)
    m = tfidf.fit(corpus)
    hits = tfidf.search_tfidf(m, ["not-a-term"], 4)
    assert [h[0] for h in hits] == sorted(corpus.ids)[:4]
    assert all(s == 0.0 for _, s in hits)


def test_cosine_matches_dense_oracle():
    corpus = random_corpus(12, seed=5)
    m = tfidf.fit(corpus)
    vocab = sorted({t for p in corpus.passages for t in p.tokens})
    n = len(corpus)
    df = {t: sum(t in p.tokens for p in corpus.passages) for t in vocab}

    def vec(tokens):
        v = np.array([tokens.count(t) * math.log((1 + n) / (1 + df[t])) for t in vocab])
        nv = np.linalg.norm(v)
        return v / nv if nv else v

    q = list(corpus.passages[3].tokens[:4])
    expect = np.array([vec(list(p.tokens)) @ vec(q) for p in corpus.passages])
    np.testing.assert_allclose(tfidf.scores(m, q), expect, atol=1e-12)


def test_self_query_ranks_itself_first():
    corpus = Corpus([Passage(f"p{i}", "", f"uniq{i} shared common") for i in range(5)])
    m = tfidf.fit(corpus)
    for p in corpus.passages:
        assert tfidf.search_tfidf(m, list(p.tokens), 1)[0][0] == p.id


def test_k_larger_than_corpus(abc):
    assert len(tfidf.search_tfidf(abc, ["a"], 10)) == 2
    with pytest.raises(tfidf.TfIdfError):
        tfidf.search_tfidf(abc, ["a"], 0)


def test_empty_corpus_rejected():
    with pytest.raises(tfidf.TfIdfError):
        tfidf.fit(Corpus([]))


def test_save_load_round_trip(tmp_path):
    corpus = random_corpus(15, seed=3)
    m = tfidf.fit(corpus)
    tfidf.save(m, tmp_path / "t.bin")
    back = tfidf.load(tmp_path / "t.bin")
    assert back.ids == m.ids and back.vocab == m.vocab
    q = list(corpus.passages[0].tokens)
    assert tfidf.search_tfidf(back, q, 5) == tfidf.search_tfidf(m, q, 5)
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-4])
    with pytest.raises(tfidf.TfIdfError):
        tfidf.load(tmp_path / "t.bin")
