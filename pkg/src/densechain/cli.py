"""Command-line pipeline: synth, validate, fit-tfidf, train, build-index, retrieve, eval, export-embeddings.

Every command reads an optional JSON config, applies flag overrides (flags win),
writes its artifact and prints a one-line JSON summary on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from . import tfidf as tfidf_mod
from . import vindex
from .beamsearch import SCORE_MODES, BeamConfig, BeamSearchError, read_run, read_run_meta, retrieve_chains, \
    tfidf_chains, write_run
from .corpus import CorpusError, infer_hop_order, load_corpus, load_questions, validate
from .encoder import DimensionError, EncoderError, init_params, load_params, save_params
from .evaluator import EvaluationError, evaluate_run, export_embeddings, hop_report, write_metrics
from .synthgen import SynthConfig, SynthError, write as write_synth
from .training import MODES, TrainConfig, TrainingDiverged, TrainingError, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_DIMENSION = 4
EXIT_DATA = 5
EXIT_DIVERGED = 6


class ConfigError(ValueError):
    pass


class MissingInput(FileNotFoundError):
    pass


@dataclass
class Paths:
    corpus: str = "data/corpus.jsonl"
    questions: str = "data/train.jsonl"
    dev: str = "data/dev.jsonl"
    checkpoints: str = "checkpoints"
    tfidf: str = "tfidf.bin"
    index: str = "index.bin"
    run: str = "run.jsonl"
    metrics: str = "metrics.json"
    embeddings: str = "embeddings.tsv"


_TRAIN_KEYS = ("negatives", "learning_rate", "epochs", "batch_size", "refresh_every", "warmup_steps",
               "mode", "refresh", "weight_decay", "keep_checkpoints")


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    hash_dim: int = TrainConfig.hash_dim
    emb_dim: int = TrainConfig.emb_dim
    beam: BeamConfig = field(default_factory=BeamConfig)
    train: dict = field(default_factory=dict)
    mining: BeamConfig = field(default_factory=BeamConfig)
    synth: dict = field(default_factory=dict)
    num_dev: int = 50

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train, mining=self.mining, seed=self.seed,
                           hash_dim=self.hash_dim, emb_dim=self.emb_dim)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.synth, seed=self.seed)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "paths": asdict(self.paths),
            "hash_dim": self.hash_dim,
            "emb_dim": self.emb_dim,
            "beam": asdict(self.beam),
            "train": dict(self.train),
            "mining": asdict(self.mining),
            "synth": dict(self.synth),
            "num_dev": self.num_dev,
        }

    @classmethod
    def from_json(cls, rec: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(rec) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            cfg = cls(
                seed=int(rec.get("seed", 0)),
                paths=Paths(**rec.get("paths", {})),
                hash_dim=int(rec.get("hash_dim", TrainConfig.hash_dim)),
                emb_dim=int(rec.get("emb_dim", TrainConfig.emb_dim)),
                beam=BeamConfig(**rec.get("beam", {})),
                train=dict(rec.get("train", {})),
                mining=BeamConfig(**rec.get("mining", {})),
                synth=dict(rec.get("synth", {})),
                num_dev=int(rec.get("num_dev", 50)),
            )
        except (TypeError, BeamSearchError) as exc:
            raise ConfigError(f"bad config: {exc}") from None
        bad = set(cfg.train) - set(_TRAIN_KEYS)
        if bad:
            raise ConfigError(f"unknown train keys: {sorted(bad)}")
        synth_keys = {f.name for f in fields(SynthConfig)} - {"seed"}
        bad = set(cfg.synth) - synth_keys
        if bad:
            raise ConfigError(f"unknown synth keys: {sorted(bad)}")
        return cfg


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.is_file():
        raise MissingInput(f"config file not found: {p}")
    try:
        rec = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(rec, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return PipelineConfig.from_json(rec)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    beam = {}
    for flag, key in (("beam", "beam_size"), ("per_step_k", "per_step_k"), ("chain_len", "chain_len"),
                      ("top", "return_top"), ("score_mode", "score_mode")):
        value = getattr(args, flag, None)
        if value is not None:
            beam[key] = value
    train_over = {}
    for flag, key in (("negatives", "negatives"), ("refresh_every", "refresh_every"), ("epochs", "epochs"),
                      ("lr", "learning_rate"), ("mode", "mode")):
        value = getattr(args, flag, None)
        if value is not None:
            train_over[key] = value
    try:
        new_beam = replace(cfg.beam, **beam)
    except BeamSearchError as exc:
        raise ConfigError(str(exc)) from None
    seed = cfg.seed if args.seed is None else args.seed
    return replace(cfg, seed=seed, beam=new_beam, train={**cfg.train, **train_over})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _require(*paths: str | Path) -> None:
    for p in paths:
        if not Path(p).exists():
            raise MissingInput(f"input not found: {p}")


def _ensure_parent(path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _checkpoint(cfg: PipelineConfig, args) -> Path:
    return Path(args.checkpoint) if getattr(args, "checkpoint", None) else Path(cfg.paths.checkpoints) / "final.bin"


def _questions_path(cfg: PipelineConfig, args) -> str:
    return args.questions or cfg.paths.dev


def cmd_synth(cfg: PipelineConfig, args) -> dict:
    scfg = cfg.synth_config()
    for p in (cfg.paths.corpus, cfg.paths.questions, cfg.paths.dev):
        _ensure_parent(p)
    counts = write_synth(scfg, cfg.paths.corpus, cfg.paths.questions, cfg.paths.dev, num_dev=cfg.num_dev)
    meta = {"seed": cfg.seed, "synth": scfg.to_json(), "num_dev": cfg.num_dev, **counts}
    Path(cfg.paths.corpus + ".synth.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return {"corpus": cfg.paths.corpus, **counts}


def cmd_validate(cfg: PipelineConfig, args) -> dict:
    paths = [cfg.paths.corpus, cfg.paths.questions] + ([cfg.paths.dev] if Path(cfg.paths.dev).exists() else [])
    _require(*paths)
    corpus = load_corpus(cfg.paths.corpus)
    out = {"passages": len(corpus)}
    flagged = 0
    for name, path in zip(("questions", "dev"), paths[1:]):
        qs = load_questions(path)
        validate(qs, corpus)
        flagged += sum(infer_hop_order(q, corpus).flagged for q in qs)
        out[name] = len(qs)
    out["flagged_hop_order"] = flagged
    return out


def cmd_fit_tfidf(cfg: PipelineConfig, args) -> dict:
    _require(cfg.paths.corpus)
    corpus = load_corpus(cfg.paths.corpus)
    model = tfidf_mod.fit(corpus)
    _ensure_parent(cfg.paths.tfidf)
    tfidf_mod.save(model, cfg.paths.tfidf)
    return {"tfidf": cfg.paths.tfidf, "docs": model.doc_count, "terms": len(model.vocab)}


def cmd_train(cfg: PipelineConfig, args) -> dict:
    _require(cfg.paths.corpus, cfg.paths.questions)
    dev_path = cfg.paths.dev if args.dev_eval else None
    if dev_path is not None:
        _require(dev_path)
    corpus = load_corpus(cfg.paths.corpus)
    questions = load_questions(cfg.paths.questions)
    dev = load_questions(dev_path) if dev_path is not None else None
    tcfg = cfg.train_config()
    ckdir = Path(cfg.paths.checkpoints)
    ckdir.mkdir(parents=True, exist_ok=True)
    params = init_params(cfg.hash_dim, cfg.emb_dim, cfg.seed)
    res = train(corpus, questions, tcfg, params=params, dev=dev, dev_beam=cfg.beam,
                checkpoint_dir=ckdir, log_path=ckdir / "train_log.jsonl")
    save_params(res.params, ckdir / "final.bin")
    if res.warmup_params is None:
        save_params(res.params, ckdir / "warmup.bin")
    summary = {"seed": cfg.seed, "steps": res.params.version, "final_loss": res.step_log[-1]["loss"],
               "pool_version": res.pool.pool_version, "checkpoint": str(ckdir / "final.bin")}
    record = {**summary, "config": cfg.to_json(), "epochs": res.epoch_log}
    (ckdir / "train.json").write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def _load_params(cfg: PipelineConfig, path: Path):
    _require(path)
    return load_params(path, hash_dim=cfg.hash_dim, emb_dim=cfg.emb_dim)


def cmd_build_index(cfg: PipelineConfig, args) -> dict:
    ck = _checkpoint(cfg, args)
    _require(cfg.paths.corpus, ck)
    params = _load_params(cfg, ck)
    corpus = load_corpus(cfg.paths.corpus)
    index = vindex.build_index(params, corpus)
    _ensure_parent(cfg.paths.index)
    vindex.save(index, cfg.paths.index)
    return {"index": cfg.paths.index, "passages": len(index), "dim": index.dim,
            "model_version": index.model_version}


def cmd_retrieve(cfg: PipelineConfig, args) -> dict:
    qpath = _questions_path(cfg, args)
    out = args.out or cfg.paths.run
    _require(cfg.paths.corpus, qpath)
    corpus = load_corpus(cfg.paths.corpus)
    questions = load_questions(qpath)
    meta = {"seed": cfg.seed, "retriever": args.retriever, "beam": asdict(cfg.beam), "questions": qpath}
    if args.retriever == "tfidf":
        _require(cfg.paths.tfidf)
        model = tfidf_mod.load(cfg.paths.tfidf)
        run = {q.id: tfidf_chains(q, model, cfg.beam.return_top) for q in questions}
    else:
        ck = _checkpoint(cfg, args)
        _require(ck, cfg.paths.index)
        params = _load_params(cfg, ck)
        index = vindex.load(cfg.paths.index, expected_dim=params.emb_dim)
        if set(index.ids) != set(corpus.ids):
            raise CorpusError(f"index {cfg.paths.index} was built for a different corpus")
        meta["model_version"] = index.model_version
        run = {q.id: retrieve_chains(q, params, index, corpus, cfg.beam) for q in questions}
    _ensure_parent(out)
    write_run(out, run, meta=meta)
    return {"run": str(out), "questions": len(run), "retriever": args.retriever, "seed": cfg.seed}


def cmd_eval(cfg: PipelineConfig, args) -> dict:
    qpath = _questions_path(cfg, args)
    run_path = args.run or cfg.paths.run
    out = args.out or cfg.paths.metrics
    _require(cfg.paths.corpus, qpath, run_path)
    corpus = load_corpus(cfg.paths.corpus)
    questions = load_questions(qpath)
    run = read_run(run_path)
    metrics = evaluate_run(run, questions, corpus, top_chains=args.top_chains)
    extra = {"seed": read_run_meta(run_path).get("seed", cfg.seed), "run": str(run_path)}
    if not args.no_hops:
        extra["hops"] = hop_report(run, questions, corpus, top_chains=args.top_chains).to_json()
    _ensure_parent(out)
    write_metrics(metrics, out, per_question_csv=args.per_question, extra=extra)
    return {**metrics.to_json(), "metrics": str(out)}


def cmd_export(cfg: PipelineConfig, args) -> dict:
    qpath = _questions_path(cfg, args)
    ck = _checkpoint(cfg, args)
    out = args.out or cfg.paths.embeddings
    _require(cfg.paths.corpus, qpath, ck)
    params = _load_params(cfg, ck)
    corpus = load_corpus(cfg.paths.corpus)
    questions = load_questions(qpath)
    _ensure_parent(out)
    rows = export_embeddings(params, corpus, questions, out, num_negatives=args.num_negatives,
                             max_len=cfg.beam.max_len)
    return {"embeddings": str(out), "rows": rows, "seed": cfg.seed}


COMMANDS: dict[str, Callable[[PipelineConfig, argparse.Namespace], dict]] = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "fit-tfidf": cmd_fit_tfidf,
    "train": cmd_train,
    "build-index": cmd_build_index,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
    "export-embeddings": cmd_export,
}


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override its values")
    common.add_argument("--seed", type=int, help="root seed for every random choice")
    common.add_argument("--beam", type=_positive, help="beam size b")
    common.add_argument("--per-step-k", type=_positive, help="candidates fetched per beam entry and step")
    common.add_argument("--chain-len", type=_positive, help="hops per chain")
    common.add_argument("--top", type=_positive, help="chains returned per question")
    common.add_argument("--score-mode", choices=SCORE_MODES)
    common.add_argument("--negatives", type=_positive, help="negative chains per question")
    common.add_argument("--refresh-every", type=_positive, help="steps between negative refreshes")
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float, help="learning rate")
    common.add_argument("--mode", choices=MODES, help="refresh scheduling")

    parser = argparse.ArgumentParser(prog="densechain", description="Dense multi-hop chain retrieval pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic two-hop corpus")
    sub.add_parser("validate", parents=[common], help="check corpus and question files")
    sub.add_parser("fit-tfidf", parents=[common], help="fit the tf-idf baseline")
    p = sub.add_parser("train", parents=[common], help="train the dual encoder")
    p.add_argument("--dev-eval", action="store_true", help="log dev P EM after every epoch")
    p = sub.add_parser("build-index", parents=[common], help="embed the corpus")
    p.add_argument("--checkpoint")
    p = sub.add_parser("retrieve", parents=[common], help="write top chains per question")
    p.add_argument("--checkpoint")
    p.add_argument("--questions", help="question file (default: dev path)")
    p.add_argument("--retriever", choices=("dense", "tfidf"), default="dense")
    p.add_argument("--out", help="run file (default: paths.run)")
    p = sub.add_parser("eval", parents=[common], help="score a run file")
    p.add_argument("--questions")
    p.add_argument("--run")
    p.add_argument("--out")
    p.add_argument("--top-chains", type=_positive, default=10)
    p.add_argument("--per-question", help="also write a per-question CSV")
    p.add_argument("--no-hops", action="store_true", help="skip the hop-level report")
    p = sub.add_parser("export-embeddings", parents=[common], help="dump labeled vectors as TSV")
    p.add_argument("--checkpoint")
    p.add_argument("--questions")
    p.add_argument("--out")
    p.add_argument("--num-negatives", type=int, default=3)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        summary = COMMANDS[args.command](cfg, args)
    except MissingInput as exc:
        return _fail(exc, EXIT_MISSING)
    except (DimensionError, vindex.IndexDimensionError) as exc:
        return _fail(exc, EXIT_DIMENSION)
    except TrainingDiverged as exc:
        return _fail(exc, EXIT_DIVERGED)
    except (ConfigError, CorpusError, EncoderError, vindex.VectorIndexError, tfidf_mod.TfIdfError,
            BeamSearchError, EvaluationError, SynthError, TrainingError) as exc:
        return _fail(exc, EXIT_DATA)
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return EXIT_OK


def _fail(exc: BaseException, code: int) -> int:
    print(f"densechain: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
