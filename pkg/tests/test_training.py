import json

import numpy as np
import pytest

from conftest import random_params
from densechain import tfidf
from densechain.beamsearch import BeamConfig
from densechain.corpus import Corpus, OrderedChain, Passage, QuestionRecord
from densechain.synthgen import SynthConfig, generate
from densechain.training import (
    REFRESHED, WARMUP, NegativeChain, NegativePool, TrainConfig, TrainingDiverged, TrainingError,
    gold_chains, mine_hard_negative_chains, mine_warmup_negatives, train,
)
from densechain.vindex import build_index
from oracles import brute_pairs

SMALL = dict(hash_dim=512, emb_dim=16, batch_size=4, refresh_every=3, negatives=2,
             mining=BeamConfig(beam_size=5))


@pytest.fixture(scope="module")
def synth():
    passages, questions = generate(SynthConfig(num_chains=12, distractors_per_chain=2, vocab_size=600, seed=1))
    return Corpus(passages), questions


@pytest.fixture
def four():
    corpus = Corpus([
        Passage("p1", "Red", "red fox jumps"),
        Passage("p2", "Fox", "fox den near river"),
        Passage("p3", "Blue", "blue bird sings"),
        Passage("p4", "Stone", "stone wall"),
    ])
    q = QuestionRecord("q", "red fox river", "river", frozenset({"p1", "p2"}))
    return corpus, q


def test_warmup_single_chain_by_hand(four):
    corpus, q = four
    # p1 and p2 are the only hits with positive score; the remaining ranks are id-ordered
    hits = [pid for pid, _ in tfidf.search_tfidf(tfidf.fit(corpus), q.tokens, 4)]
    assert hits == ["p1", "p2", "p3", "p4"]
    assert mine_warmup_negatives(tfidf.fit(corpus), q, OrderedChain(("p1", "p2")), 1) == [OrderedChain(("p3", "p4"))]


def test_warmup_keeps_single_gold_chains():
    corpus = Corpus([Passage(f"d{i}", "", f"shared t{i}") for i in range(5)])
    q = QuestionRecord("q", "shared", "", frozenset({"d0", "d4"}))
    negs = mine_warmup_negatives(tfidf.fit(corpus), q, OrderedChain(("d0", "d4")), 2, depth=5)
    assert negs == [OrderedChain(("d1", "d2")), OrderedChain(("d2", "d3"))]
    with pytest.raises(TrainingError, match="too small"):
        mine_warmup_negatives(tfidf.fit(corpus), q, OrderedChain(("d0", "d4")), 3, depth=5)


def test_hard_negatives_match_brute_force(four):
    corpus, q = four
    for seed in range(5):
        params = random_params(128, 6, seed=seed)
        idx = build_index(params, corpus)
        cfg = BeamConfig(beam_size=12, per_step_k=4)
        got = mine_hard_negative_chains(params, idx, q, OrderedChain(("p1", "p2")), corpus, cfg, 3)
        want = [h for h, _ in brute_pairs(q.tokens, params, corpus, top=12) if set(h) != {"p1", "p2"}][:3]
        assert [c.hops for c in got] == want


def test_hard_negatives_may_fall_short(four):
    corpus, q = four
    params = random_params(128, 6)
    got = mine_hard_negative_chains(params, build_index(params, corpus), q, OrderedChain(("p1", "p2")), corpus,
                                    BeamConfig(beam_size=2, per_step_k=4, return_top=1), 5)
    assert 0 < len(got) < 5


def test_pool_validation_rejects_gold():
    pool = NegativePool()
    pool.publish("q", [NegativeChain(OrderedChain(("b", "a")), WARMUP)])
    with pytest.raises(TrainingError, match="gold"):
        pool.validate({"q": OrderedChain(("a", "b"))})


@pytest.mark.parametrize("bad", [{"negatives": 0}, {"refresh_every": 0}, {"learning_rate": -1.0},
                                 {"mode": "async"}, {"batch_size": 0}])
def test_config_validation(bad):
    with pytest.raises(TrainingError):
        TrainConfig(**bad)


def test_zero_learning_rate_leaves_params(synth):
    corpus, questions = synth
    init = random_params(512, 16, seed=4)
    res = train(corpus, questions, TrainConfig(**SMALL, learning_rate=0.0, epochs=2), params=init)
    assert np.array_equal(res.params.w_query, init.w_query)
    assert np.array_equal(res.params.w_passage, init.w_passage)


def test_toy_separable_loss_decreases(four):
    corpus, q = four
    cfg = TrainConfig(negatives=1, learning_rate=0.5, epochs=200, batch_size=8, refresh=False,
                      weight_decay=0.0, hash_dim=256, emb_dim=16)
    res = train(corpus, [q], cfg)
    losses = [r["loss"] for r in res.step_log]
    assert len(losses) == 200
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.05


def test_sequential_runs_are_identical(synth, tmp_path):
    corpus, questions = synth
    cfg = TrainConfig(**SMALL, epochs=2, seed=7)
    a = train(corpus, questions, cfg, log_path=tmp_path / "a.jsonl")
    b = train(corpus, questions, cfg, log_path=tmp_path / "b.jsonl")
    assert a.params.w_query.tobytes() == b.params.w_query.tobytes()
    assert a.params.w_passage.tobytes() == b.params.w_passage.tobytes()
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_refresh_bumps_pool_and_stamps(synth):
    corpus, questions = synth
    res = train(corpus, questions, TrainConfig(**SMALL, epochs=2))
    steps = len(res.step_log)
    assert res.pool.pool_version == steps // 3
    versions = [r["pool_version"] for r in res.step_log]
    assert versions == sorted(versions)
    gold = gold_chains(questions, corpus)
    for qid, entries in res.pool.items():
        for e in entries:
            assert e.source == REFRESHED and e.model_version == 3 * res.pool.pool_version
            assert set(e.chain.hops) != set(gold[qid].hops)
    assert res.warmup_params is not None and res.warmup_params.version == 3


def test_no_refresh_keeps_warmup_pool(synth):
    corpus, questions = synth
    res = train(corpus, questions, TrainConfig(**SMALL, epochs=1, refresh=False))
    assert res.pool.pool_version == 0 and res.warmup_params is None
    assert all(e.source == WARMUP for _, entries in res.pool.items() for e in entries)


def test_concurrent_mode_produces_valid_pool(synth):
    corpus, questions = synth
    res = train(corpus, questions, TrainConfig(**SMALL, epochs=3, mode="concurrent-refresh"))
    assert np.isfinite(res.params.w_query).all()
    res.pool.validate(gold_chains(questions, corpus), chain_len=2)


def test_divergence_is_reported(synth):
    corpus, questions = synth
    with pytest.raises(TrainingDiverged):
        train(corpus, questions, TrainConfig(**SMALL, epochs=3, learning_rate=1e200, weight_decay=0.0))


def test_log_and_checkpoints(synth, tmp_path):
    corpus, questions = synth
    res = train(corpus, questions, TrainConfig(**SMALL, epochs=2, keep_checkpoints=2),
                dev=questions[:3], checkpoint_dir=tmp_path / "ck", log_path=tmp_path / "log.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert recs == res.step_log
    assert all(set(r) == {"step", "loss", "pool_version"} for r in recs)
    names = sorted(p.name for p in (tmp_path / "ck").iterdir())
    assert names[-1] == "warmup.bin" and len(names) == 3
    assert all("dev_p_em" in e and 0.0 <= e["dev_p_em"] <= 1.0 for e in res.epoch_log)
