"""Chain-NLL training with warm-up TF-IDF negatives and periodic hard-negative refresh."""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .beamsearch import BeamConfig, retrieve_chains
from .corpus import Corpus, CorpusError, OrderedChain, QuestionRecord, infer_hop_order, validate
from .encoder import EncoderParams, init_params, loss_and_gradient, save_params
from .tfidf import TfIdfModel, fit as fit_tfidf, search_tfidf
from .vindex import VectorIndex, build_index, refresh as refresh_index

logger = logging.getLogger(__name__)

MODES = ("sequential-refresh", "concurrent-refresh")
WARMUP = "warmup"
REFRESHED = "refreshed"


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    pass


@dataclass(frozen=True)
class NegativeChain:
    chain: OrderedChain
    source: str
    model_version: int = -1


class NegativePool:
    """Per-question negative chains; each publish replaces a question's entry whole."""

    def __init__(self) -> None:
        self._chains: dict[str, tuple[NegativeChain, ...]] = {}
        self.pool_version = 0

    def __len__(self) -> int:
        return len(self._chains)

    def __contains__(self, qid: str) -> bool:
        return qid in self._chains

    def get(self, qid: str) -> tuple[NegativeChain, ...]:
        return self._chains.get(qid, ())

    def chains(self, qid: str) -> list[OrderedChain]:
        return [n.chain for n in self.get(qid)]

    def publish(self, qid: str, entries: Sequence[NegativeChain]) -> None:
        self._chains[qid] = tuple(entries)

    def items(self):
        return self._chains.items()

    def validate(self, gold: Mapping[str, OrderedChain], chain_len: int | None = None) -> None:
        for qid, entries in self._chains.items():
            gold_set = set(gold[qid].hops)
            for e in entries:
                if set(e.chain.hops) == gold_set:
                    raise TrainingError(f"negative pool for {qid!r} contains the gold chain {e.chain.hops}")
                if chain_len is not None and len(e.chain) != chain_len:
                    raise TrainingError(f"negative chain for {qid!r} has length {len(e.chain)}, expected {chain_len}")


@dataclass
class TrainConfig:
    negatives: int = 4
    learning_rate: float = 0.1
    epochs: int = 8
    batch_size: int = 8
    refresh_every: int = 20
    warmup_steps: int | None = None
    mining: BeamConfig = field(default_factory=BeamConfig)
    seed: int = 0
    mode: str = "sequential-refresh"
    refresh: bool = True
    hash_dim: int = 32768
    emb_dim: int = 512
    weight_decay: float = 0.3
    keep_checkpoints: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.mining, Mapping):
            self.mining = BeamConfig(**self.mining)
        if self.negatives < 1:
            raise TrainingError("negatives must be >= 1")
        if self.refresh_every < 1:
            raise TrainingError("refresh_every must be >= 1")
        if self.weight_decay < 0.0 or self.learning_rate < 0.0:
            raise TrainingError("learning_rate and weight_decay must be >= 0")
        if self.keep_checkpoints < 0:
            raise TrainingError("keep_checkpoints must be >= 0")
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")
        if self.mode not in MODES:
            raise TrainingError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def first_refresh(self) -> int:
        return self.refresh_every if self.warmup_steps is None else max(1, self.warmup_steps)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    params: EncoderParams
    warmup_params: EncoderParams | None
    pool: NegativePool
    step_log: list[dict]
    epoch_log: list[dict]
    seconds: float = 0.0


# ---------------------------------------------------------------------------
# negative mining
# ---------------------------------------------------------------------------


def mine_warmup_negatives(model: TfIdfModel, question: QuestionRecord, gold_chain: OrderedChain,
                          m: int, depth: int | None = None) -> list[OrderedChain]:
    """Pair consecutive non-gold TF-IDF hits for the question: (r1, r2), (r2, r3), ..."""
    gold = set(gold_chain.hops)
    depth = depth or (m + 1 + len(gold))
    hits = [pid for pid, _ in search_tfidf(model, question.tokens, depth) if pid not in gold]
    out = []
    for a, b in zip(hits, hits[1:]):
        if {a, b} == gold:
            continue
        out.append(OrderedChain((a, b)))
        if len(out) == m:
            return out
    raise TrainingError(f"question {question.id!r}: corpus too small for {m} warm-up negative chains")


def mine_hard_negative_chains(params: EncoderParams, index: VectorIndex, question: QuestionRecord,
                              gold_chain: OrderedChain, corpus: Corpus, cfg: BeamConfig,
                              m: int) -> list[OrderedChain]:
    """Best-scoring retrieved chains whose passage set differs from the gold set.

    May return fewer than ``m`` chains when the beam does not hold enough.
    """
    gold = set(gold_chain.hops)
    cfg = replace(cfg, chain_len=len(gold_chain), return_top=max(cfg.return_top, m + 2))
    out = []
    for c in retrieve_chains(question, params, index, corpus, cfg):
        if set(c.hops) != gold:
            out.append(OrderedChain(c.hops))
            if len(out) == m:
                break
    if len(out) < m:
        logger.warning("question %s: only %d of %d hard negatives found", question.id, len(out), m)
    return out


def _refresh_pool(params: EncoderParams, index: VectorIndex, questions, gold, corpus, cfg: TrainConfig,
                  publish: Callable[[str, list[NegativeChain]], None]) -> None:
    for q in questions:
        mined = mine_hard_negative_chains(params, index, q, gold[q.id], corpus, cfg.mining, cfg.negatives)
        if mined:
            publish(q.id, [NegativeChain(c, REFRESHED, index.model_version) for c in mined])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def gold_chains(questions: Sequence[QuestionRecord], corpus: Corpus) -> dict[str, OrderedChain]:
    out = {}
    for q in questions:
        if len(q.gold_ids) != 2:
            raise CorpusError(f"question {q.id!r}: training needs exactly 2 gold ids")
        out[q.id] = infer_hop_order(q, corpus).chain
    return out


def _dev_p_em(params, corpus, dev, beam: BeamConfig) -> float:
    from .evaluator import evaluate_run

    index = build_index(params, corpus)
    run = {q.id: retrieve_chains(q, params, index, corpus, beam) for q in dev}
    return evaluate_run(run, dev, corpus, top_chains=beam.return_top).p_em


class _Refresher(threading.Thread):
    """Background miner: consumes parameter snapshots, publishes refreshed pools."""

    def __init__(self, corpus, questions, gold, cfg: TrainConfig, pool: NegativePool,
                 lock: threading.Lock, index: VectorIndex) -> None:
        super().__init__(daemon=True, name="negative-refresher")
        self.corpus, self.questions, self.gold, self.cfg = corpus, questions, gold, cfg
        self.pool, self.lock, self.index = pool, lock, index
        self.requests: queue.Queue = queue.Queue(maxsize=1)
        self.error: BaseException | None = None

    def submit(self, snapshot: EncoderParams) -> None:
        try:
            self.requests.get_nowait()  # drop a stale pending snapshot
        except queue.Empty:
            pass
        self.requests.put(snapshot)

    def run(self) -> None:
        while True:
            snap = self.requests.get()
            if snap is None:
                return
            try:
                self.index = refresh_index(self.index, snap, self.corpus)
                fresh: dict[str, list[NegativeChain]] = {}
                _refresh_pool(snap, self.index, self.questions, self.gold, self.corpus, self.cfg,
                              fresh.__setitem__)
                with self.lock:
                    for qid, entries in fresh.items():
                        self.pool.publish(qid, entries)
                    self.pool.pool_version += 1
            except BaseException as exc:  # surfaced by the trainer
                self.error = exc
                return

    def stop(self) -> None:
        self.requests.put(None)
        self.join()


def _sgd_columns(weights: np.ndarray, grad: np.ndarray, cols: np.ndarray, lr: float, decay: float) -> None:
    """SGD on the active bucket columns, then clear their gradient.

    Decay shrinks only columns present in the minibatch, so buckets never seen
    in training keep their initial values.
    """
    w = weights[:, cols] - lr * grad[:, cols]
    if decay > 0.0:
        w *= max(0.0, 1.0 - lr * decay)
    if not np.isfinite(w).all():
        raise TrainingDiverged("non-finite parameters; lower learning_rate")
    weights[:, cols] = w
    grad[:, cols] = 0.0


def train(corpus: Corpus, questions: Sequence[QuestionRecord], cfg: TrainConfig = TrainConfig(),
          params: EncoderParams | None = None, dev: Sequence[QuestionRecord] | None = None,
          dev_beam: BeamConfig | None = None, checkpoint_dir: str | Path | None = None,
          log_path: str | Path | None = None) -> TrainResult:
    """Minibatch SGD on the chain NLL loss.

    Negatives start as TF-IDF warm-up chains. From step ``first_refresh`` on,
    every ``refresh_every`` steps the corpus is re-embedded and each question's
    negatives are re-mined by beam search with the current parameters.
    ``warmup_params`` holds the parameters right before the first refresh.
    """
    t0 = time.perf_counter()
    questions = list(questions)
    if not questions:
        raise TrainingError("no training questions")
    validate(questions, corpus)
    gold = gold_chains(questions, corpus)
    if params is None:
        params = init_params(cfg.hash_dim, cfg.emb_dim, cfg.seed)
    else:
        params = params.copy()
    mining = replace(cfg.mining, chain_len=2)
    cfg = replace(cfg, mining=mining)
    dev_beam = dev_beam or BeamConfig()
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    tfidf_model = fit_tfidf(corpus)
    pool = NegativePool()
    for q in questions:
        negs = mine_warmup_negatives(tfidf_model, q, gold[q.id], cfg.negatives)
        pool.publish(q.id, [NegativeChain(c, WARMUP) for c in negs])
    pool.validate(gold, chain_len=2)

    lock = threading.Lock()
    refresher = None
    index: VectorIndex | None = None
    if cfg.mode == "concurrent-refresh" and cfg.refresh:
        refresher = _Refresher(corpus, questions, gold, cfg, pool, lock, build_index(params, corpus))
        refresher.start()

    rng = np.random.default_rng(cfg.seed)
    g_q = np.zeros_like(params.w_query)
    g_p = np.zeros_like(params.w_passage)
    step_log: list[dict] = []
    epoch_log: list[dict] = []
    warmup_params = None
    saved: list[Path] = []
    step = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(questions))
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = [questions[i] for i in order[start:start + cfg.batch_size]]
                with lock:
                    negs = {q.id: pool.chains(q.id) for q in batch}
                    pool_version = pool.pool_version
                touched: tuple[list, list] = ([], [])
                batch_loss = 0.0
                for q in batch:
                    loss, _ = loss_and_gradient(params, q, gold[q.id], negs[q.id], corpus,
                                                out=(g_q, g_p), scale=1.0 / len(batch), touched=touched)
                    if not np.isfinite(loss):
                        raise TrainingDiverged(f"non-finite loss at step {step} on question {q.id!r}")
                    batch_loss += loss
                for w, g, idx in ((params.w_query, g_q, touched[0]), (params.w_passage, g_p, touched[1])):
                    _sgd_columns(w, g, np.unique(np.concatenate(idx)), cfg.learning_rate, cfg.weight_decay)
                step += 1
                params.version = step
                mean_loss = batch_loss / len(batch)
                losses.append(mean_loss)
                rec = {"step": step, "loss": mean_loss, "pool_version": pool_version}
                step_log.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")

                if cfg.refresh and step >= cfg.first_refresh and (step - cfg.first_refresh) % cfg.refresh_every == 0:
                    if warmup_params is None:
                        warmup_params = params.copy()
                        if ckdir is not None:
                            save_params(warmup_params, ckdir / "warmup.bin")
                    if refresher is not None:
                        if refresher.error is not None:
                            raise TrainingError("negative refresher failed") from refresher.error
                        refresher.submit(params.copy())
                    else:
                        index = build_index(params, corpus) if index is None else refresh_index(index, params, corpus)
                        if index.model_version != params.version:
                            raise TrainingError("index stamp does not match the current parameters")
                        _refresh_pool(params, index, questions, gold, corpus, cfg, pool.publish)
                        pool.pool_version += 1
                        pool.validate(gold, chain_len=2)
                    if ckdir is not None:
                        saved.append(ckdir / f"step-{step:06d}.bin")
                        save_params(params, saved[-1])
                        while len(saved) > cfg.keep_checkpoints:
                            saved.pop(0).unlink(missing_ok=True)

            ep = {"epoch": epoch + 1, "step": step, "mean_loss": float(np.mean(losses)),
                  "pool_version": pool.pool_version}
            if dev:
                ep["dev_p_em"] = _dev_p_em(params, corpus, dev, dev_beam)
            epoch_log.append(ep)
            logger.info("epoch %d: %s", epoch + 1, ep)
    finally:
        if refresher is not None:
            refresher.stop()
        if log_fh is not None:
            log_fh.close()
    if refresher is not None and refresher.error is not None:
        raise TrainingError("negative refresher failed") from refresher.error
    with lock:
        pool.validate(gold, chain_len=2)
    return TrainResult(params, warmup_params, pool, step_log, epoch_log, time.perf_counter() - t0)
