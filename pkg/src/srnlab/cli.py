"""Command-line entry point tying the pipeline together: synthetic data
generation, preprocessing, the four training drivers, evaluation against
checkpoints or baselines, prediction benchmarking, and checkpoint
inspection.

Exit codes: 0 success, 1 usage/config error, 2 data or checkpoint error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as ds
from . import evaluation as ev
from .errors import CheckpointError, ConfigError, DataError, NumericError, ShapeError
from .model import EMBEDDING_HEAD, SOFTMAX_HEAD, ModelConfig, ModelParams
from .tensor import AdamConfig
from .training import DistillConfig, TrainConfig, TrainReport, finetune_m2, train_m1, train_m3, train_m4

_ALLOWED_FRACTIONS = {Fraction(1, 256), Fraction(1, 64), Fraction(1, 16), Fraction(1, 4), Fraction(1, 1)}


@dataclass
class RunConfig:
    """Every tunable in one place; echoed into outputs for provenance."""

    data: str | None = None
    out: str = "."
    seed: int = 7
    # model
    embed_dim: int = 50
    gru_units: int = 100
    window: int = 19
    embed_dropout_rate: float = 0.25
    hidden_dense_units: int | None = None
    # training
    batch_size: int = 512
    max_epochs: int = 10
    early_stop_patience: int = 2
    validation_fraction: float = 0.1
    learning_rate: float = 0.001
    # distillation
    lam: float = 0.2
    temperature: float = 1.0
    # evaluation
    k: int = 20
    eval_batch_size: int = 512
    # preprocessing
    min_session_length: int = 2
    min_item_support: int = 5
    fraction: float = 1.0
    # synthetic generation
    items: int = 200
    sessions: int = 20000
    days: int = 10
    drift: float | None = None

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))


_FIELD_TYPES = {
    "data": str, "out": str, "seed": int,
    "embed_dim": int, "gru_units": int, "window": int,
    "embed_dropout_rate": float, "hidden_dense_units": int,
    "batch_size": int, "max_epochs": int, "early_stop_patience": int,
    "validation_fraction": float, "learning_rate": float,
    "lam": float, "temperature": float,
    "k": int, "eval_batch_size": int,
    "min_session_length": int, "min_item_support": int, "fraction": float,
    "items": int, "sessions": int, "days": int, "drift": float,
}


def load_config_file(path) -> dict:
    """Parse key=value lines; unknown keys are rejected, not ignored."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _FIELD_TYPES[key](value.strip())
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def parse_fraction(text: str) -> float:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse fraction {text!r}") from None
    return float(value)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); map onto exit code 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file applied before flags")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default .)")

    parser = _Parser(prog="srnlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic click log")
    p.add_argument("--items", type=int)
    p.add_argument("--sessions", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--drift", type=float, help="timeline fraction after which transitions switch")

    p = sub.add_parser("prepare", parents=[common], help="parse, split, filter, and augment a click log")
    p.add_argument("--data", required=True)
    p.add_argument("--min-item-support", type=int, dest="min_item_support")
    p.add_argument("--min-session-length", type=int, dest="min_session_length")
    p.add_argument("--dump-examples", dest="dump_examples", help="write prefix|label|privileged lines here")

    for name in ("train", "finetune", "distill", "train-embed"):
        p = sub.add_parser(name, parents=[common], help=f"{name} driver")
        p.add_argument("--data", required=True)
        p.add_argument("--min-item-support", type=int, dest="min_item_support")
        p.add_argument("--min-session-length", type=int, dest="min_session_length")
        p.add_argument("--gru-units", type=int, dest="gru_units")
        p.add_argument("--embed-dim", type=int, dest="embed_dim")
        p.add_argument("--epochs", type=int, dest="max_epochs")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--dropout", type=float, dest="embed_dropout_rate")
        p.add_argument("--learning-rate", type=float, dest="learning_rate")
        if name == "finetune":
            p.add_argument("--base-checkpoint", required=True, dest="base_checkpoint")
            p.add_argument("--fraction", required=True, help="one of 1/256, 1/64, 1/16, 1/4, 1")
        if name == "distill":
            p.add_argument("--lambda", type=float, dest="lam")
            p.add_argument("--temperature", type=float)
        if name == "train-embed":
            p.add_argument("--embedding-source", required=True, dest="embedding_source")
            p.add_argument("--hidden-units", type=int, dest="hidden_dense_units")
            p.add_argument("--freeze-input-embedding", action="store_true", dest="freeze_input_embedding")

    p = sub.add_parser("evaluate", parents=[common], help="Recall@k / MRR@k on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint path, or one of: spop, itemknn")
    p.add_argument("--k", type=int)
    p.add_argument("--min-item-support", type=int, dest="min_item_support")
    p.add_argument("--min-session-length", type=int, dest="min_session_length")

    p = sub.add_parser("bench", parents=[common], help="time prediction passes for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--batches", type=int, default=8)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--repetitions", type=int, default=5)

    p = sub.add_parser("inspect", parents=[common], help="print a checkpoint manifest")
    p.add_argument("checkpoint")

    return parser


def _effective_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **load_config_file(args.config))
    overrides = {}
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    if getattr(args, "fraction", None) is not None:
        overrides["fraction"] = parse_fraction(args.fraction)
    return replace(cfg, **overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    (out / "run_config.txt").write_text(f"command={command}\n" + cfg.to_text(), encoding="utf-8")


def _load_corpus(cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("--data is required")
    sessions = ds.parse_clicks_file(cfg.data)
    train, test, vocab = ds.split_and_filter(sessions, cfg.min_session_length, cfg.min_item_support)
    examples = ds.augment_corpus(train, vocab)
    return train, test, vocab, examples


def _model_config(cfg: RunConfig, vocab_size_with_pad: int, head: str) -> ModelConfig:
    return ModelConfig(
        vocab_size_with_pad=vocab_size_with_pad,
        embed_dim=cfg.embed_dim,
        gru_units=cfg.gru_units,
        head=head,
        hidden_dense_units=cfg.hidden_dense_units if head == EMBEDDING_HEAD else None,
        window=cfg.window,
        embed_dropout_rate=cfg.embed_dropout_rate,
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        max_epochs=cfg.max_epochs,
        batch_size=cfg.batch_size,
        early_stop_patience=cfg.early_stop_patience,
        validation_fraction=cfg.validation_fraction,
        adam=AdamConfig(learning_rate=cfg.learning_rate),
        seed=cfg.seed,
    )


def _save_outputs(
    out: Path,
    stem: str,
    params: ModelParams,
    mcfg: ModelConfig,
    report: TrainReport,
    cfg: RunConfig,
    kind: str,
) -> Path:
    path = out / f"{stem}.ckpt"
    ckpt.save_checkpoint(params, mcfg, path, extras={"kind": kind, "seed": str(cfg.seed)})
    (out / f"{stem}_train_report.txt").write_text(report.to_text(), encoding="utf-8")
    return path


def _ranker_for_checkpoint(path, vocab_size_with_pad: int):
    params, mcfg, _ = ckpt.load_checkpoint(path)
    if mcfg.vocab_size_with_pad != vocab_size_with_pad:
        raise CheckpointError(
            f"checkpoint vocabulary ({mcfg.vocab_size_with_pad}) does not match the data "
            f"({vocab_size_with_pad}); same click log and filter settings required"
        )
    if mcfg.head == SOFTMAX_HEAD:
        return ev.SoftmaxRanker(params, mcfg), mcfg
    return ev.EmbeddingRanker(params, mcfg), mcfg


def _cmd_gen_data(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    sessions = ds.synth_generate(cfg.seed, cfg.items, cfg.sessions, cfg.days, cfg.drift)
    path = out / "clicks.csv"
    ds.write_clicks(sessions, path)
    _echo_config(cfg, out, "gen-data")
    events = sum(len(s) for s in sessions)
    print(f"wrote {path} ({len(sessions)} sessions, {events} events, {cfg.items} items)")
    return 0


def _cmd_prepare(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    train, test, vocab, examples = _load_corpus(cfg)
    _echo_config(cfg, out, "prepare")
    if getattr(args, "dump_examples", None):
        ds.dump_examples(examples, args.dump_examples)
    print(f"train sessions: {len(train)}")
    print(f"test sessions: {len(test)}")
    print(f"items: {vocab.m}")
    print(f"{len(examples)} training sequences")
    return 0


def _cmd_train(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    _, _, vocab, examples = _load_corpus(cfg)
    mcfg = _model_config(cfg, vocab.m + 1, SOFTMAX_HEAD)
    params, report = train_m1(examples, mcfg, _train_config(cfg))
    path = _save_outputs(out, "m1", params, mcfg, report, cfg, "m1")
    _echo_config(cfg, out, "train")
    print(report.to_text(), end="")
    print(f"saved {path}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    fraction = Fraction(args.fraction)
    if fraction not in _ALLOWED_FRACTIONS:
        raise ConfigError(f"--fraction must be one of 1/256, 1/64, 1/16, 1/4, 1; got {args.fraction}")
    _, _, vocab, examples = _load_corpus(cfg)
    base_params, base_cfg, _ = ckpt.load_checkpoint(args.base_checkpoint)
    if base_cfg.vocab_size_with_pad != vocab.m + 1:
        raise CheckpointError("base checkpoint vocabulary does not match the data")
    recent = ds.temporal_fraction(examples, float(fraction))
    params, report = finetune_m2(base_params, recent, base_cfg, _train_config(cfg))
    path = _save_outputs(out, "m2", params, base_cfg, report, cfg, "m2")
    _echo_config(cfg, out, "finetune")
    print(report.to_text(), end="")
    print(f"saved {path}")
    return 0


def _cmd_distill(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    _, _, vocab, examples = _load_corpus(cfg)
    mcfg = _model_config(cfg, vocab.m + 1, SOFTMAX_HEAD)
    dcfg = DistillConfig(lam=cfg.lam, temperature=cfg.temperature)
    teacher, student, teacher_report, student_report = train_m3(
        examples, mcfg, _train_config(cfg), dcfg
    )
    teacher_path = _save_outputs(out, "m3_teacher", teacher, mcfg, teacher_report, cfg, "m3-teacher")
    student_path = _save_outputs(out, "m3_student", student, mcfg, student_report, cfg, "m3-student")
    _echo_config(cfg, out, "distill")
    print(student_report.to_text(), end="")
    print(f"saved {teacher_path}")
    print(f"saved {student_path}")
    return 0


def _cmd_train_embed(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    _, _, vocab, examples = _load_corpus(cfg)
    source_params, source_cfg, _ = ckpt.load_checkpoint(args.embedding_source)
    if source_cfg.vocab_size_with_pad != vocab.m + 1:
        raise CheckpointError("embedding source vocabulary does not match the data")
    if source_cfg.embed_dim != cfg.embed_dim:
        raise CheckpointError(
            f"embedding source dimension {source_cfg.embed_dim} != requested {cfg.embed_dim}"
        )
    mcfg = _model_config(cfg, vocab.m + 1, EMBEDDING_HEAD)
    params, report = train_m4(
        examples,
        mcfg,
        source_params.embedding.value,
        _train_config(cfg),
        train_input_embedding=not getattr(args, "freeze_input_embedding", False),
    )
    path = _save_outputs(out, "m4", params, mcfg, report, cfg, "m4")
    _echo_config(cfg, out, "train-embed")
    print(report.to_text(), end="")
    print(f"saved {path}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    train, test, vocab, _ = _load_corpus(cfg)
    if not test:
        raise DataError("test split is empty after filtering")
    test_sequences = ds.index_sessions(test, vocab)
    window = cfg.window
    if args.model in ("spop", "itemknn"):
        train_sequences = ds.index_sessions(train, vocab)
        popularity = ev.popularity_table(train_sequences, vocab.m)
        if args.model == "spop":
            ranker = ev.SPopRanker(popularity)
        else:
            ranker = ev.ItemKnnRanker(ev.ItemKnnIndex(train_sequences, vocab.m), popularity)
    else:
        ranker, mcfg = _ranker_for_checkpoint(args.model, vocab.m + 1)
        window = mcfg.window
    report = ev.evaluate(ranker, test_sequences, ev.EvalConfig(k=cfg.k, batch_size=cfg.eval_batch_size), window)
    (out / "eval_report.txt").write_text(report.to_text(), encoding="utf-8")
    _echo_config(cfg, out, "evaluate")
    print(report.to_text(), end="")
    return 0


def _cmd_bench(args) -> int:
    cfg = _effective_config(args)
    out = _out_dir(cfg)
    params, mcfg, _ = ckpt.load_checkpoint(args.checkpoint)
    if mcfg.head == SOFTMAX_HEAD:
        ranker = ev.SoftmaxRanker(params, mcfg)
    else:
        ranker = ev.EmbeddingRanker(params, mcfg)
    rng = np.random.default_rng(cfg.seed)
    batches = []
    for _ in range(args.batches):
        inputs = rng.integers(1, mcfg.vocab_size_with_pad, size=(cfg.batch_size, mcfg.window))
        batches.append(ds.MiniBatch(inputs, np.ones(inputs.shape), np.ones(len(inputs), dtype=np.int64)))
    mean, std = ev.bench_prediction(ranker, batches, args.repetitions, cfg.k)
    _echo_config(cfg, out, "bench")
    print(f"mean_pass_seconds={mean:.6f}")
    print(f"std_pass_seconds={std:.6f}")
    print(f"mean_batch_seconds={mean / args.batches:.6f}")
    return 0


def _cmd_inspect(args) -> int:
    print(ckpt.manifest_text(args.checkpoint), end="")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "distill": _cmd_distill,
    "train-embed": _cmd_train_embed,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ShapeError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
