"""Command-line entry point wiring the retrieval workflow together.

Config files are line-oriented ``key = value`` (UTF-8, ``#`` comments);
command-line flags override file values.  Exit codes: 0 success, 1 usage
error, 2 data/validation error, 3 runtime/transport error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .corpus import DocFormat, Query
from .encoding import HashEncoderBackend
from .errors import DataError, RuntimeFailure, SchemaError
from .experiments import (
    learning_curve,
    run_classify_eval,
    run_document_eval,
    run_format_ablation,
    run_granularity_comparison,
    run_section_eval,
)
from .experiments import format_view
from .index import build_index, load_index, save_index, search
from .ingest import (
    ingest_directory,
    read_corpus,
    read_qrels,
    read_queries,
    validate_qrels,
    write_corpus,
    write_qrels,
    write_queries,
)
from .remote import conformance_check
from .synthetic import SynthConfig, gen_synthetic, split_queries
from .training import (
    Hyperparams,
    NEGATIVE_STRATEGIES,
    RERANKER_OBJECTIVES,
    load_reranker_checkpoint,
    load_retriever_checkpoint,
    save_reranker_checkpoint,
    save_retriever_checkpoint,
    train_reranker,
    train_retriever,
)

USAGE_EXIT = 1
DATA_EXIT = 2
RUNTIME_EXIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def load_config(path) -> dict:
    """Parse a ``key = value`` config file into a string map."""
    values = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"expected 'key = value', got {raw!r}", line=line_no)
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(cls, values: dict):
    """Build a config dataclass from string values, with type coercion."""
    kwargs = {}
    fields = {f.name: f.type for f in dataclasses.fields(cls)}
    for key, value in values.items():
        if key not in fields:
            raise SchemaError(f"unknown config key {key!r}")
        target = fields[key]
        if target in (int, "int"):
            kwargs[key] = int(value)
        elif target in (float, "float"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _hyperparams(args) -> Hyperparams:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    overrides = {
        "seed": getattr(args, "seed", None),
        "epochs": getattr(args, "epochs", None),
        "lr": getattr(args, "lr", None),
        "B": getattr(args, "batch_size", None),
        "negative_strategy": getattr(args, "negatives", None),
    }
    for key, value in overrides.items():
        if value is not None:
            values[key] = str(value)
    return _coerce(Hyperparams, values)


def _load_eval_inputs(args):
    corpus = read_corpus(args.corpus)
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels)
    validate_qrels(qrels, corpus, queries)
    return corpus, queries, qrels


def _split_or_all(queries):
    train, eval_ = split_queries(queries)
    if not train or not eval_:
        return list(queries), list(queries)
    return train, eval_


def _emit_report(report, out_path=None):
    print(report.to_text())
    if out_path:
        Path(out_path).write_text(report.to_json() + "\n", encoding="utf-8")


def _emit_rows(rows, out_path=None):
    if rows:
        keys = list(rows[0].keys())
        widths = [max(len(str(k)), max(len(_fmt(r[k])) for r in rows)) for k in keys]
        print("  ".join(k.ljust(w) for k, w in zip(keys, widths)))
        for r in rows:
            print("  ".join(_fmt(r[k]).ljust(w) for k, w in zip(keys, widths)))
    if out_path:
        Path(out_path).write_text(
            json.dumps(rows, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


def _fmt(value) -> str:
    return f"{value:.4f}" if isinstance(value, float) else str(value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="interdoc", description="Interleaved multimodal document retrieval")
    parser.add_argument("--threads", type=int, default=1, help="worker parallelism (advisory)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an HTML directory into a corpus")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None)

    for name in ("train-retriever", "train-reranker"):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a corpus")
        p.add_argument("--corpus", required=True)
        p.add_argument("--queries", required=True)
        p.add_argument("--qrels", required=True)
        p.add_argument("--config", default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        if name == "train-reranker":
            p.add_argument("--objective", choices=RERANKER_OBJECTIVES, default="section_bce")
            p.add_argument("--negatives", choices=NEGATIVE_STRATEGIES, default=None)
            p.add_argument("--index", default=None, help="document index (top_k negatives)")
            p.add_argument("--checkpoint", default=None, help="retriever checkpoint (top_k negatives)")

    p = sub.add_parser("index", help="embed a corpus and build a search index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--format", choices=[f.value for f in DocFormat], default="interleaved")
    p.add_argument("--out", required=True)

    p = sub.add_parser("search", help="query an index")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--image-ref", action="append", default=[])
    p.add_argument("-k", type=int, default=10)

    p = sub.add_parser("eval", help="run an evaluation or ablation")
    p.add_argument("--mode", required=True, choices=(
        "document", "section", "classify", "ablate-formats", "granularity", "learning-curve",
    ))
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--reranker", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--pool", type=int, default=25)
    p.add_argument("--ratios", default="0.1,0.5,1.0")
    p.add_argument("--formats", default=",".join(f.value for f in DocFormat))
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)

    p = sub.add_parser("sidecar-check", help="probe an encoder service for conformance")
    p.add_argument("--endpoint", required=True)
    return parser


def _cmd_ingest(args) -> int:
    count = ingest_directory(args.in_dir, args.out)
    print(f"ingested {count} documents -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    values = load_config(args.config) if args.config else {}
    if args.seed is not None:
        values["seed"] = str(args.seed)
    cfg = _coerce(SynthConfig, values)
    corpus, queries, qrels = gen_synthetic(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out / "corpus.jsonl")
    write_queries(queries, out / "queries.jsonl")
    write_qrels(qrels, out / "qrels.tsv")
    print(f"wrote {len(corpus)} documents, {len(queries)} queries -> {out}")
    return 0


def _cmd_train_retriever(args) -> int:
    corpus, queries, qrels = _load_eval_inputs(args)
    train, _ = _split_or_all(queries)
    hp = _hyperparams(args)
    losses = []
    params = train_retriever(corpus, train, qrels, hp, loss_log=losses)
    save_retriever_checkpoint(params, args.out, step=hp.epochs)
    if losses:
        print(f"loss: {losses[0]:.4f} -> {losses[-1]:.4f} over {hp.epochs} epochs")
    print(f"saved retriever checkpoint -> {args.out}")
    return 0


def _cmd_train_reranker(args) -> int:
    corpus, queries, qrels = _load_eval_inputs(args)
    train, _ = _split_or_all(queries)
    hp = _hyperparams(args)
    index = backend = None
    if hp.negative_strategy == "top_k":
        if not args.index or not args.checkpoint:
            raise DataError("top_k negatives need --index and --checkpoint")
        index = load_index(args.index)
        backend = HashEncoderBackend(load_retriever_checkpoint(args.checkpoint)[0])
    losses = []
    params = train_reranker(
        corpus, train, qrels, hp, objective=args.objective,
        index=index, backend=backend, loss_log=losses,
    )
    save_reranker_checkpoint(params, args.out, step=hp.epochs)
    if losses:
        print(f"loss: {losses[0]:.4f} -> {losses[-1]:.4f} over {hp.epochs} epochs")
    print(f"saved reranker checkpoint -> {args.out}")
    return 0


def _cmd_index(args) -> int:
    corpus = read_corpus(args.corpus)
    view = format_view(corpus, DocFormat(args.format))
    params, _ = load_retriever_checkpoint(args.checkpoint)
    index = build_index(view, HashEncoderBackend(params))
    save_index(index, args.out)
    flagged = index.zero_norm_ids()
    if flagged:
        print(f"warning: {len(flagged)} zero-norm rows: {', '.join(flagged[:5])}")
    print(f"indexed {len(index)} documents -> {args.out}")
    return 0


def _cmd_search(args) -> int:
    index = load_index(args.index)
    params, _ = load_retriever_checkpoint(args.checkpoint)
    backend = HashEncoderBackend(params)
    query = Query(query_id="cli", text=args.query, image_refs=tuple(args.image_ref))
    for doc_id, score in search(index, backend.encode_query(query), args.k):
        print(f"{doc_id}\t{score:.6f}")
    return 0


def _cmd_eval(args) -> int:
    corpus, queries, qrels = _load_eval_inputs(args)
    seed = args.seed if args.seed is not None else 0

    if args.mode in ("document", "section", "classify"):
        if args.mode in ("document", "section"):
            if not args.index or not args.checkpoint:
                raise DataError(f"--mode {args.mode} needs --index and --checkpoint")
            index = load_index(args.index)
            backend = HashEncoderBackend(load_retriever_checkpoint(args.checkpoint)[0])
        if args.mode == "document":
            report = run_document_eval(index, backend, queries, qrels, seed=seed)
        elif args.mode == "section":
            if not args.reranker:
                raise DataError("--mode section needs --reranker")
            reranker, _ = load_reranker_checkpoint(args.reranker)
            report = run_section_eval(
                corpus, index, backend, reranker, queries, qrels, pool=args.pool, seed=seed
            )
        else:
            if not args.reranker:
                raise DataError("--mode classify needs --reranker")
            reranker, _ = load_reranker_checkpoint(args.reranker)
            report = run_classify_eval(corpus, reranker, queries, qrels, seed=seed)
        _emit_report(report, args.out)
        return 0

    hp = _hyperparams(args)
    train, eval_ = _split_or_all(queries)
    if args.mode == "ablate-formats":
        formats = [DocFormat(f.strip()) for f in args.formats.split(",") if f.strip()]
        rows = run_format_ablation(corpus, train, eval_, qrels, formats, hp)
    elif args.mode == "granularity":
        rows = run_granularity_comparison(corpus, train, eval_, qrels, hp, pool=args.pool)
    else:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
        rows = learning_curve(corpus, train, eval_, qrels, ratios, hp)
    _emit_rows(rows, args.out)
    return 0


def _cmd_sidecar_check(args) -> int:
    results = conformance_check(args.endpoint)
    failed = [r for r in results if not r["ok"]]
    for r in results:
        status = "ok" if r["ok"] else "FAIL"
        print(f"[{status}] {r['check']}: {r['detail']}")
    if failed:
        raise DataError(f"{len(failed)} conformance checks failed")
    print("sidecar conformance: all checks passed")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "train-retriever": _cmd_train_retriever,
    "train-reranker": _cmd_train_reranker,
    "index": _cmd_index,
    "search": _cmd_search,
    "eval": _cmd_eval,
    "sidecar-check": _cmd_sidecar_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
