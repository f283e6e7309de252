"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .data import (
    DatasetSplit,
    build_idf,
    build_instances,
    filter_degenerate,
    group_by_question,
    parse_split,
)
from .embeddings import EmbeddingTable, load_embeddings
from .errors import AnswerSelectError, ConfigError, NumericalError, ParseError
from .evaluation import RankedRun, emit_qrels, emit_run_file, evaluate
from .gradcheck import TOLERANCE, run_suite
from .matchnet import NetConfig, init_params, load_checkpoint, save_checkpoint, score_candidates, score_instances
from .trainer import TrainConfig, train

logger = logging.getLogger("answer_select")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
WORKERS_ENV = "ANSWER_SELECT_WORKERS"

DEFAULT_CONFIG = """\
[data]
train =
dev =
test =
embeddings =
embedding_dim = 50

[net]
measurement = metric
k = 1
depth = deep
filters = 100
kernel = 3
pool = 2
dropout = 0.5
q_len = 40
a_len = 40

[train]
lambda = 5e-4
batch_size = 50
max_epochs = 50
patience = 5
rho = 0.95
eps = 1e-6
seed = 1
clip = 1e-7
"""


class UsageError(AnswerSelectError):
    pass


def read_config(path: str | None, overrides: list[str]) -> tuple[configparser.ConfigParser, str]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(DEFAULT_CONFIG)
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from None
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, option = key.strip().partition(".")
        if not sep or not dot:
            raise UsageError(f"override must look like section.key=value, got {item!r}")
        if not parser.has_section(section):
            raise ConfigError(f"unknown config section {section!r}")
        parser.set(section, option, value.strip())
    return parser, text


def net_config(parser: configparser.ConfigParser) -> NetConfig:
    s = parser["net"]
    try:
        return NetConfig.preset(
            s.get("measurement"),
            k=s.getint("k"),
            depth=s.get("depth").strip().lower(),
            filters=s.getint("filters"),
            kernel=s.getint("kernel"),
            pool=s.getint("pool"),
            dropout=s.getfloat("dropout"),
            q_len=s.getint("q_len"),
            a_len=s.getint("a_len"),
            dim=parser["data"].getint("embedding_dim"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config(parser: configparser.ConfigParser) -> TrainConfig:
    s = parser["train"]
    try:
        return TrainConfig(
            lam=s.getfloat("lambda"),
            batch_size=s.getint("batch_size"),
            max_epochs=s.getint("max_epochs"),
            patience=s.getint("patience"),
            rho=s.getfloat("rho"),
            eps=s.getfloat("eps"),
            seed=s.getint("seed"),
            clip=s.getfloat("clip"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _existing(parser, key: str, required: bool) -> Path | None:
    value = parser["data"].get(key, "").strip()
    if not value:
        if required:
            raise UsageError(f"config [data] {key} is required")
        return None
    path = Path(value)
    if not path.exists():
        raise UsageError(f"data path for {key} does not exist: {path}")
    return path


def _vocabulary(splits: list[DatasetSplit]) -> set[str]:
    vocab: set[str] = set()
    for split in splits:
        for q in split.questions:
            vocab.update(q.tokens)
            for c in q.candidates:
                vocab.update(c.tokens)
    return vocab


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out_dir: Path, **fields) -> None:
    manifest = {"version": __version__, **fields}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _score_run(instances, params, cfg, run_id: str) -> RankedRun:
    return RankedRun.from_instances(instances, score_instances(instances, params, cfg), run_id=run_id)


def _write_eval(out_dir: Path, prefix: str, run: RankedRun):
    report = evaluate(run)
    emit_run_file(run, out_dir / f"{prefix}.run")
    emit_qrels(run, out_dir / f"{prefix}.qrels")
    (out_dir / f"{prefix}.report.txt").write_text(report.as_text(), encoding="utf-8")
    return report


def cmd_train(args) -> int:
    started = _now()
    parser, text = read_config(args.config, args.set)
    net_cfg, train_cfg = net_config(parser), train_config(parser)
    train_path = _existing(parser, "train", required=True)
    dev_path = _existing(parser, "dev", required=True)
    test_path = _existing(parser, "test", required=False)
    emb_path = _existing(parser, "embeddings", required=False)

    train_split = parse_split(train_path, "train")
    dev_split = filter_degenerate(parse_split(dev_path, "dev"))
    test_split = filter_degenerate(parse_split(test_path, "test")) if test_path else None
    splits = [s for s in (train_split, dev_split, test_split) if s is not None]
    vocab = _vocabulary(splits)
    if emb_path:
        table = load_embeddings(emb_path, net_cfg.dim, keep=vocab)
    else:
        logger.warning("no embeddings file configured; using random vectors")
        table = EmbeddingTable.random(vocab, net_cfg.dim, seed=train_cfg.seed)
    idf = build_idf(train_split)

    build = lambda split: build_instances(split, table, idf, net_cfg.q_len, net_cfg.a_len)  # noqa: E731
    train_set, dev_set = build(train_split), build(dev_split)
    params = init_params(net_cfg, table, seed=train_cfg.seed)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    result = train(train_set, dev_set, params, net_cfg, train_cfg, log_path=out / "train_log.tsv")
    save_checkpoint(
        out / "best.ckpt", result.params, net_cfg, table.tokens, idf, meta={"best_epoch": result.best_epoch}
    )

    metrics = {"best_epoch": result.best_epoch, "epochs_run": len(result.log)}
    dev_report = _write_eval(out, "dev", _score_run(dev_set, result.params, net_cfg, "dev"))
    metrics.update(dev_map=dev_report.map, dev_mrr=dev_report.mrr)
    if test_split is not None:
        test_report = _write_eval(out, "test", _score_run(build(test_split), result.params, net_cfg, "test"))
        metrics.update(test_map=test_report.map, test_mrr=test_report.mrr)
    print(f"best epoch {result.best_epoch}: dev MAP {dev_report.map:.4f} MRR {dev_report.mrr:.4f}")
    if test_split is not None:
        print(f"test MAP {metrics['test_map']:.4f} MRR {metrics['test_mrr']:.4f}")

    buf = []
    for section in parser.sections():
        buf.append(f"[{section}]")
        buf.extend(f"{k} = {v}" for k, v in parser[section].items())
    _write_manifest(
        out,
        command="train",
        config_file=text,
        effective_config="\n".join(buf) + "\n",
        seed=train_cfg.seed,
        started=started,
        finished=_now(),
        metrics=metrics,
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _now()
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.idf is None:
        raise ConfigError("checkpoint carries no IDF weights")
    split = parse_split(args.split)
    if not args.keep_degenerate:
        split = filter_degenerate(split)
    instances = build_instances(split, ckpt.table, ckpt.idf, ckpt.cfg.q_len, ckpt.cfg.a_len)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    report = _write_eval(out, split.name, _score_run(instances, ckpt.params, ckpt.cfg, args.run_id))
    print(f"MAP {report.map:.4f}")
    print(f"MRR {report.mrr:.4f}")
    _write_manifest(
        out,
        command="evaluate",
        checkpoint=str(args.checkpoint),
        split=str(args.split),
        started=started,
        finished=_now(),
        metrics={"map": report.map, "mrr": report.mrr, "questions": report.n_questions},
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.idf is None:
        raise ConfigError("checkpoint carries no IDF weights")
    split = parse_split(args.pairs)
    instances = build_instances(split, ckpt.table, ckpt.idf, ckpt.cfg.q_len, ckpt.cfg.a_len)
    for qid, group in group_by_question(instances).items():
        scores = score_candidates(
            group[0].question, [inst.answer for inst in group], np.stack([i.features for i in group]), ckpt.params, ckpt.cfg
        )
        for inst, score in zip(group, scores):
            print(f"{qid}\t{inst.docid}\t{score:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    ctx = ad.inject_fault(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with ctx:
        results = run_suite(args.seed)
    failed = []
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.measurement:<10} {r.group:<10} {r.error:.3e}  {status}")
        if not r.ok:
            failed.append(f"{r.measurement}/{r.group}")
    if failed:
        print(f"gradient check failed (tolerance {TOLERANCE:g}): {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_data_stats(args) -> int:
    rows = []
    for path in args.splits:
        split = parse_split(path)
        rows.append((split.name, "raw", *split.stats()))
        rows.append((split.name, "filtered", *filter_degenerate(split).stats()))
    width = max([5] + [len(r[0]) for r in rows])
    print(f"{'split':<{width}}  {'stage':<8}  {'#q':>6}  {'#pairs':>7}  {'%pos':>6}")
    for name, stage, nq, npairs, pct in rows:
        print(f"{name:<{width}}  {stage:<8}  {nq:>6}  {npairs:>7}  {pct:5.1f}%")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="answer-select", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint, log and manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a split and report MAP/MRR")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--run-id", default="answer-select")
    p.add_argument("--keep-degenerate", action="store_true", help="do not drop all-positive/all-negative questions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score a TSV of pairs to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pairs", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("data-stats", help="question/pair/positive counts before and after filtering")
    p.add_argument("splits", nargs="+")
    p.set_defaults(func=cmd_data_stats)
    return parser


def _thread_limit():
    value = os.environ.get(WORKERS_ENV)
    if not value:
        return contextlib.nullcontext()
    try:
        workers = int(value)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, workers))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
