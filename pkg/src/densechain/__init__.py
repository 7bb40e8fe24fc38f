"""Multi-hop evidence chain retrieval by beam search over a trainable dual encoder."""

from ._accel import BACKEND
from .beamsearch import BeamConfig, ScoredChain, chain_score_update, retrieve_chains
from .corpus import Corpus, OrderedChain, Passage, QuestionRecord, infer_hop_order, load_corpus, load_questions, tokenize
from .encoder import EncoderParams, compose_query, encode_passage, encode_query, featurize, init_params, similarity
from .evaluator import RetrievalMetrics, evaluate_run, hop_report
from .training import NegativePool, TrainConfig, train
from .vindex import VectorIndex, build_index, search

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BeamConfig", "Corpus", "EncoderParams", "NegativePool", "OrderedChain", "Passage",
    "QuestionRecord", "RetrievalMetrics", "ScoredChain", "TrainConfig", "VectorIndex", "build_index",
    "chain_score_update", "compose_query", "encode_passage", "encode_query", "evaluate_run", "featurize",
    "hop_report", "infer_hop_order", "init_params", "load_corpus", "load_questions", "retrieve_chains", "search",
    "similarity", "tokenize", "train",
]
