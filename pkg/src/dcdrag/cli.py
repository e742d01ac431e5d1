"""Command-line interface.

Subcommands: ``ingest`` (validate a manifest and build the index), ``query``
(answer one question in either mode), ``gen-dataset`` (write a synthetic
corpus manifest plus its question/answer/context dataset), ``eval`` (score a
dataset through the pipeline), ``reproduce`` (run the full offline
experiment for both modes and print the comparison table) and ``serve``
(run the HTTP service).

Exit codes: 0 success, 1 user error (bad flags, unreadable files, invalid
manifests), 2 backend failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import PipelineConfig, ServiceConfig
from .corpus import load_manifest
from .errors import (
    BackendError,
    EmptyDatasetError,
    EmptyDocumentError,
    EmptyIndexError,
    JudgeError,
    ParseError,
    UnknownIdError,
    ValidationError,
)
from .evalkit.generate import CorpusSpec, gen_corpus, gen_qac, load_records, save_records
from .evalkit.runner import (
    JudgeSuite,
    comparison_table,
    run_eval,
    run_experiment,
)
from .pipeline import build_backend, build_pipeline

_USER_ERRORS = (
    OSError,
    ParseError,
    ValidationError,
    EmptyDocumentError,
    EmptyDatasetError,
    EmptyIndexError,
    UnknownIdError,
    ValueError,
    KeyError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, per the CLI contract
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _load_config(args) -> PipelineConfig:
    config = (
        PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    )
    manifest = getattr(args, "manifest", None)
    if manifest:
        from dataclasses import replace

        config = replace(config, manifest_path=str(manifest))
    if not config.manifest_path:
        raise ValueError("a manifest is required: pass --manifest or set "
                         "manifest_path in the config file")
    return config


def _judge_suite(name: str, config: PipelineConfig) -> JudgeSuite:
    if name == "mock":
        return JudgeSuite.offline()
    return JudgeSuite.llm(build_backend("judge", config.backend("judge")))


def _cmd_ingest(args) -> int:
    config = _load_config(args)
    pipeline = build_pipeline(config)
    reg = pipeline.registry
    print(
        f"ingested {len(reg.domains)} domains, {len(reg.collections)} collections, "
        f"{len(reg.documents)} documents, {len(pipeline.index)} chunks "
        f"(dim {pipeline.index.dim})"
    )
    if args.snapshot:
        pipeline.index.save(args.snapshot)
        print(f"index snapshot written to {args.snapshot}")
    return 0


def _cmd_query(args) -> int:
    config = _load_config(args)
    pipeline = build_pipeline(config)
    if args.stream:
        outcome = None
        for kind, payload in pipeline.stream_query(args.query, args.mode):
            if kind == "token":
                joiner = getattr(pipeline.backends.generator, "token_joiner", "")
                print(payload, end=joiner, flush=True)
            else:
                outcome = payload
        print()
        print(json.dumps(outcome.to_dict(), indent=2, ensure_ascii=False,
                         sort_keys=True))
    else:
        outcome = pipeline.answer_query(args.query, args.mode)
        print(json.dumps(outcome.to_dict(), indent=2, ensure_ascii=False,
                         sort_keys=True))
    return 0


def _corpus_spec(path: str | None, seed: int) -> CorpusSpec:
    if path is None:
        return CorpusSpec(n_domains=10, collections_per_domain=3,
                          docs_per_collection=2, seed=seed)
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return CorpusSpec(
        n_domains=int(data["n_domains"]),
        collections_per_domain=int(data["collections_per_domain"]),
        docs_per_collection=int(data["docs_per_collection"]),
        seed=int(data.get("seed", seed)),
    )


def _cmd_gen_dataset(args) -> int:
    spec = _corpus_spec(args.spec, args.seed)
    registry, manifest = gen_corpus(spec)
    records = gen_qac(registry, args.per_doc, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False), encoding="utf-8"
    )
    save_records(records, out / "dataset.jsonl")
    print(
        f"wrote {out / 'manifest.json'} ({len(registry.documents)} documents) and "
        f"{out / 'dataset.jsonl'} ({len(records)} records)"
    )
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args)
    records = load_records(args.dataset)
    pipeline = build_pipeline(config)
    report = run_eval(records, pipeline, _judge_suite(args.judge, config), args.mode,
                      parallelism=args.parallelism)
    payload = json.dumps(report.to_dict(), indent=2, ensure_ascii=False,
                         sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    a = report.aggregates
    print(
        f"mode={report.mode} n={a.n} sb_arc={a.sb_arc:.2f} sb_cr={a.sb_cr:.2f} "
        f"sb_fa={a.sb_fa:.2f} rcs={a.rcs:.2f} excluded={report.excluded_count} "
        f"blocked={report.blocked_count}"
    )
    return 0


def _cmd_reproduce(args) -> int:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    judges = _judge_suite(args.judge, config)
    result = run_experiment(args.seed, per_doc=args.per_doc, judges=judges,
                            config=config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(result.manifest, indent=2, ensure_ascii=False), encoding="utf-8"
    )
    save_records(result.records, out / "dataset.jsonl")
    for name, report in (("dcd", result.dcd), ("naive", result.naive)):
        (out / f"report_{name}.json").write_text(
            json.dumps(report.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
    print(comparison_table(result.dcd, result.naive))
    ops = result.dcd.operational
    print(
        f"dcd timings: total {ops['total_eval_time_s']:.2f}s, "
        f"mean e2e {ops['mean_end_to_end_ms']:.1f}ms, "
        f"mean ttft {ops['mean_ttft_ms']:.1f}ms"
    )
    print(f"reports written to {out}")
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    config = ServiceConfig.from_file(args.config)
    serve(config)
    return 0


def _cmd_validate(args) -> int:
    reg = load_manifest(args.manifest)
    print(
        f"manifest valid: {len(reg.domains)} domains, {len(reg.collections)} "
        f"collections, {len(reg.documents)} documents"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dcdrag",
        description=(
            "Hierarchy-routed retrieval-augmented generation: ingest a "
            "domain/collection/document manifest, query it in hierarchical or "
            "naive mode, generate synthetic corpora and datasets, and run the "
            "evaluation suite. Exit codes: 0 success, 1 user error, 2 backend "
            "failure."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load a manifest and build the index")
    p.add_argument("--manifest", help="manifest JSON path")
    p.add_argument("--config", help="pipeline config JSON path")
    p.add_argument("--snapshot", help="write an index snapshot here")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("query", help="answer one question")
    p.add_argument("-q", "--query", required=True)
    p.add_argument("--mode", choices=["dcd", "naive"], default=None)
    p.add_argument("--manifest", help="manifest JSON path")
    p.add_argument("--config", help="pipeline config JSON path")
    p.add_argument("--stream", action="store_true", help="print tokens as they stream")
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("gen-dataset", help="generate a synthetic corpus + dataset")
    p.add_argument("--spec", help="corpus spec JSON path (counts)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--per-doc", type=int, default=1, dest="per_doc")
    p.add_argument("--out", default="dataset-out")
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("eval", help="evaluate a dataset through the pipeline")
    p.add_argument("--dataset", required=True, help="JSONL dataset path")
    p.add_argument("--mode", choices=["dcd", "naive"], default="dcd")
    p.add_argument("--judge", choices=["live", "mock"], default="mock")
    p.add_argument("--manifest", help="manifest JSON path")
    p.add_argument("--config", help="pipeline config JSON path")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser(
        "reproduce",
        help="run the offline experiment end-to-end for both modes",
    )
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--judge", choices=["live", "mock"], default="mock")
    p.add_argument("--per-doc", type=int, default=1, dest="per_doc")
    p.add_argument("--config", help="pipeline config JSON path")
    p.add_argument("--out", default="reproduce-out")
    p.set_defaults(func=_cmd_reproduce)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--config", required=True, help="service config JSON path")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("validate", help="validate a manifest without indexing")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def cli_run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, JudgeError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
