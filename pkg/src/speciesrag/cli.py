"""Command-line entry point wiring all modules into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 data-integrity error, 3 provider
error. Flags override config-file values. The only environment override
is the provider endpoint URL.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .benchmark import (
    RunConfig,
    config_fingerprint,
    run_ablation,
    run_benchmark,
    write_ablation,
    write_report,
)
from .errors import ConfigError, DataIntegrityError, ProviderError
from .knowledge import (
    ChunkConfig,
    KnowledgeBase,
    RefinementTelemetry,
    chunk_corpus,
    names_only_corpus,
    read_kb,
    refine_summary,
    write_kb,
)
from .providers import build_provider
from .simlab import SimConfig, generate_instance, write_instance

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if getattr(args, "m", None) is not None:
        cfg = replace(cfg, m=args.m)
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    if getattr(args, "no_rerank", False):
        cfg = replace(cfg, rerank_enabled=False)
    if getattr(args, "rerank", False):
        cfg = replace(cfg, rerank_enabled=True)
    if getattr(args, "names_only", False):
        cfg = replace(cfg, names_only=True)
    if getattr(args, "provider", None):
        cfg = replace(cfg, provider=args.provider)
    if getattr(args, "context", None):
        cfg = replace(cfg, context_type=args.context)
    if getattr(args, "scope", None):
        cfg = replace(cfg, scope=_parse_scope(args.scope, cfg))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _parse_scope(spec: str, cfg: RunConfig) -> tuple[str, ...] | None:
    if spec == "open":
        return None
    kind, _, path = spec.partition(":")
    if kind != "bounded" or not path:
        raise ConfigError(f"--scope must be 'open' or 'bounded:<file>', got {spec!r}")
    scope_path = cfg.resolve(path) if not Path(path).exists() else Path(path)
    if not scope_path.exists():
        raise ConfigError(f"scope file not found: {path}")
    with open(scope_path, encoding="utf-8") as fh:
        ids = tuple(sorted(line.strip() for line in fh if line.strip()))
    if not ids:
        raise ConfigError(f"scope file {path} is empty")
    return ids


def cmd_ingest(args) -> int:
    kb = read_kb(args.records)
    write_kb(kb, args.out)
    print(f"ingested {len(kb)} records -> {args.out}")
    flagged = kb.flagged_ids
    if flagged:
        print(f"flagged (no refined summary, excluded from retrieval): {len(flagged)}")
        for sid in flagged:
            print(f"  {sid}")
    return EXIT_OK


def cmd_refine(args) -> int:
    kb = read_kb(args.kb)
    provider = build_provider(args.provider)
    telemetry = RefinementTelemetry()
    refined = []
    for record in kb:
        refined.append(
            refine_summary(
                record,
                provider,
                telemetry=telemetry,
                max_tokens=args.max_tokens,
                force=args.force,
            )
        )
    out_kb = KnowledgeBase(refined)
    write_kb(out_kb, args.out)
    print(f"refined {len(telemetry.rows)} of {len(kb)} records -> {args.out}")
    print(telemetry.format_table())
    return EXIT_OK


def cmd_chunk(args) -> int:
    kb = read_kb(args.kb)
    cfg = ChunkConfig(max_chunk_words=args.max_words, overlap_words=args.overlap)
    chunks = names_only_corpus(kb) if args.names_only else chunk_corpus(kb, cfg)
    with open(args.out, "w", encoding="utf-8") as fh:
        for c in chunks:
            obj = {
                "chunk_id": c.chunk_id,
                "species_id": c.species_id,
                "ordinal": c.ordinal,
                "text": c.text,
                "word_count": c.word_count,
            }
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
    print(f"wrote {len(chunks)} chunks -> {args.out}")
    return EXIT_OK


def _single_query_config(args) -> tuple[RunConfig, str]:
    cfg = _load_config(args)
    cfg.validate_paths()
    return cfg, config_fingerprint(cfg)


def cmd_retrieve(args) -> int:
    cfg, fingerprint = _single_query_config(args)
    result = _run_for_query(cfg, args.query_id)
    print(f"config_fingerprint={fingerprint}")
    print(f"query={args.query_id} candidates={len(result.ranking.candidates)}")
    print(f"{'rank':<6}{'chunk_id':<24}{'species':<16}{'cross':>10}{'intra':>10}{'score':>10}")
    for i, c in enumerate(result.ranking.candidates, start=1):
        print(
            f"{i:<6}{c.chunk_id:<24}{c.species_id:<16}"
            f"{c.cross_score:>10.4f}{c.intra_score:>10.4f}{c.score:>10.4f}"
        )
    print(f"context species (top {cfg.k}): {[sid for sid, _ in result.context]}")
    return EXIT_OK


def _run_for_query(cfg: RunConfig, query_id: str):
    from .benchmark import evaluate_query, load_run
    from .rerank import RerankConfig
    from .retrieval import RetrievalConfig, scoped_chunks

    run = load_run(cfg)
    rows = [q for q in run.queries if q.query_id == query_id]
    if not rows:
        raise ConfigError(f"query {query_id!r} not in manifest {cfg.queries!r}")
    retr_cfg = RetrievalConfig(
        encoder_ids=cfg.encoder_ids(),
        m=cfg.m,
        scope=frozenset(cfg.scope) if cfg.scope is not None else None,
    )
    rr_cfg = (
        RerankConfig(
            intra_encoder_id=cfg.intra_encoder.encoder_id,
            k=cfg.k,
            anchor_aggregation=cfg.anchor_aggregation,
            missing_anchor_score=cfg.missing_anchor_score,
        )
        if cfg.rerank_enabled
        else None
    )
    provider = None
    if cfg.provider:
        truth = {q.query_id: q.ground_truth_species for q in run.queries}
        provider = build_provider(cfg.provider, truth=truth)
    corpus_by_id = {c.chunk_id: c for c in run.corpus}
    scoped_species = frozenset(c.species_id for c in scoped_chunks(run.corpus, retr_cfg.scope))
    return evaluate_query(rows[0], run, retr_cfg, rr_cfg, provider, corpus_by_id, scoped_species)


def cmd_classify(args) -> int:
    cfg, fingerprint = _single_query_config(args)
    if not cfg.provider:
        raise ConfigError("classify needs a provider (config 'provider' or --provider)")
    result = _run_for_query(cfg, args.query_id)
    pred = result.prediction
    print(f"config_fingerprint={fingerprint}")
    print(f"query={args.query_id}")
    print(f"context species: {[sid for sid, _ in result.context]}")
    print(f"raw answer: {pred.raw_text!r}")
    print(f"resolved: {pred.resolved_species} ({pred.resolution})")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    result = run_benchmark(cfg, workers=args.workers)
    paths = write_report(result, args.out)
    for line in result.report.summary_lines():
        print(line)
    print(f"wrote {paths['per_query']}, {paths['summary']}, {paths['report']}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    result = run_ablation(cfg, args.axis, workers=args.workers)
    paths = write_ablation(result, args.out)
    print(f"base_config_fingerprint={config_fingerprint(cfg)}")
    print(result.table())
    print(f"wrote {paths['cells']}, {paths['table']}")
    return EXIT_OK


def cmd_simgen(args) -> int:
    encoders = tuple(
        (f"enc-{chr(ord('a') + i)}", args.text_sigma) for i in range(args.encoders)
    )
    cfg = SimConfig(
        n_species=args.species,
        chunks_per_species=args.chunks_per_species,
        anchors_per_species=args.anchors,
        latent_dim=args.dim,
        cross_encoders=encoders,
        query_sigma=args.query_sigma,
        anchor_sigma=args.anchor_sigma,
        n_queries=args.queries,
        seed=args.seed,
        query_species_pool=args.query_pool,
    )
    instance = generate_instance(cfg)
    write_instance(instance, args.out)
    print(
        f"wrote synthetic instance to {args.out}: "
        f"{cfg.n_species} species, {len(instance.corpus)} chunks, {cfg.n_queries} queries"
    )
    print(f"run config: {Path(args.out) / 'run_config.json'}")
    return EXIT_OK


def _add_override_flags(p: argparse.ArgumentParser, with_provider: bool = True):
    p.add_argument("--m", type=int, help="candidate count after retrieval")
    p.add_argument("--k", type=int, help="candidate count after re-ranking")
    p.add_argument("--no-rerank", action="store_true", help="order purely by cross-modal score")
    p.add_argument("--rerank", action="store_true", help="force re-ranking on")
    p.add_argument("--names-only", action="store_true", help="retrieve over one name chunk per species")
    p.add_argument("--scope", help="'open' or 'bounded:<species-id file>'")
    p.add_argument("--context", choices=["summaries", "chunks", "names"], help="LMM context type")
    p.add_argument("--seed", type=int)
    if with_provider:
        p.add_argument("--provider", help="stub:echo | stub:fixed:<text> | stub:keyword-oracle | http:<url>")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="speciesrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a record stream into a KB file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("refine", help="two-stage summary refinement via a provider")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", required=True)
    p.add_argument("--max-tokens", type=int, default=512)
    p.add_argument("--force", action="store_true", help="overwrite populated fields")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("chunk", help="chunk the KB into the retrieval corpus")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-words", type=int, default=60)
    p.add_argument("--overlap", type=int, default=15)
    p.add_argument("--names-only", action="store_true")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("retrieve", help="rank candidates for one query")
    p.add_argument("--config", required=True)
    p.add_argument("--query-id", required=True)
    _add_override_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("classify", help="full pipeline incl. LMM answer for one query")
    p.add_argument("--config", required=True)
    p.add_argument("--query-id", required=True)
    _add_override_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="run the benchmark over a query manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_override_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--axis",
        action="append",
        default=[],
        help="axis spec: encoders[=a|a,b|...], reranker[=on,off], k[=5,10,15], m[=...], context[=...]",
    )
    p.add_argument("--workers", type=int, default=1)
    _add_override_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("simgen", help="generate a synthetic instance")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--species", type=int, default=200)
    p.add_argument("--queries", type=int, default=500)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--chunks-per-species", type=int, default=2)
    p.add_argument("--anchors", type=int, default=3)
    p.add_argument("--encoders", type=int, default=3)
    p.add_argument("--text-sigma", type=float, default=0.8)
    p.add_argument("--query-sigma", type=float, default=0.8)
    p.add_argument("--anchor-sigma", type=float, default=0.4)
    p.add_argument("--query-pool", type=int, default=None)
    p.set_defaults(func=cmd_simgen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataIntegrityError as exc:
        print(f"data integrity error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
