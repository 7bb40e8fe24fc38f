import os
import random

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from densechain.corpus import Corpus, Passage, QuestionRecord
from densechain.encoder import init_params

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

WORDS = [f"w{i}" for i in range(40)]


def random_corpus(n: int, seed: int = 0, length: int = 6, prefix: str = "p") -> Corpus:
    rng = random.Random(seed)
    width = len(str(n))
    return Corpus(
        Passage(f"{prefix}{i:0{width}d}", rng.choice(WORDS), " ".join(rng.choices(WORDS, k=length)))
        for i in range(n)
    )


def random_params(hash_dim: int = 128, emb_dim: int = 8, seed: int = 0):
    return init_params(hash_dim, emb_dim, seed, tied_init=False)


def question(text: str, gold=(), answer: str = "", qid: str = "q0") -> QuestionRecord:
    return QuestionRecord(qid, text, answer, frozenset(gold))


@pytest.fixture
def toy_corpus() -> Corpus:
    return Corpus([
        Passage("a", "Alpha", "alpha river flows north"),
        Passage("b", "Beta", "beta mountain near alpha"),
        Passage("c", "Gamma", "gamma lake and beta town"),
        Passage("d", "Delta", "delta plains far away"),
        Passage("e", "Epsilon", "epsilon forest quiet"),
    ])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
