"""Benchmark runs: config handling, per-query evaluation, reports, ablations.

Runs are deterministic given config, data, and stub providers: queries are
evaluated independently (optionally in parallel) and reduced in sorted
query order, so worker count never changes any output byte. Every output
carries a config fingerprint covering all pipeline settings and the
content digests of the input files.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Sequence

from .embeddings import CROSS_MODAL, EmbeddingStore, EncoderProfile
from .errors import ConfigError, DataIntegrityError
from .knowledge import Chunk, ChunkConfig, KnowledgeBase, chunk_corpus, names_only_corpus, read_kb
from .lmm import Prediction, classify
from .metrics import DEFAULT_KS, MetricsReport, RetrievalRanking, aggregate_metrics, mrr_at_k
from .providers import build_provider
from .rerank import RerankConfig, rerank, select_context
from .retrieval import QueryInput, RetrievalConfig, retrieve, scoped_chunks
from .simlab import QueryRow, read_query_manifest

CONTEXT_TYPES = ("summaries", "chunks", "names")


@dataclass(frozen=True)
class EncoderSpec:
    encoder_id: str
    dim: int
    role: str = CROSS_MODAL
    paths: tuple[str, ...] = ()
    names_paths: tuple[str, ...] | None = None

    def to_dict(self) -> dict:
        out = {
            "encoder_id": self.encoder_id,
            "dim": self.dim,
            "role": self.role,
            "paths": list(self.paths),
        }
        if self.names_paths is not None:
            out["names_paths"] = list(self.names_paths)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderSpec":
        return cls(
            encoder_id=obj["encoder_id"],
            dim=int(obj["dim"]),
            role=obj.get("role", CROSS_MODAL),
            paths=tuple(obj.get("paths", ())),
            names_paths=tuple(obj["names_paths"]) if obj.get("names_paths") else None,
        )


@dataclass(frozen=True)
class RunConfig:
    kb: str
    queries: str
    encoders: tuple[EncoderSpec, ...]
    intra_encoder: EncoderSpec | None = None
    chunking: ChunkConfig = field(default_factory=ChunkConfig)
    m: int = 30
    scope: tuple[str, ...] | None = None  # None = open vocabulary
    rerank_enabled: bool = True
    k: int = 10
    anchor_aggregation: str = "mean"
    missing_anchor_score: float = 0.0
    provider: str | None = None
    context_type: str = "summaries"
    names_only: bool = False
    seed: int = 0
    base_dir: str = "."

    def __post_init__(self):
        if not self.encoders:
            raise ConfigError("run config needs at least one cross-modal encoder")
        if self.context_type not in CONTEXT_TYPES:
            raise ConfigError(f"context_type must be one of {CONTEXT_TYPES}")
        if self.rerank_enabled and self.intra_encoder is None:
            raise ConfigError("re-ranking enabled but no intra-modal encoder configured")
        if self.k > self.m:
            raise ConfigError(f"k ({self.k}) must not exceed m ({self.m})")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def encoder_ids(self) -> tuple[str, ...]:
        return tuple(spec.encoder_id for spec in self.encoders)

    def to_dict(self) -> dict:
        return {
            "kb": self.kb,
            "queries": self.queries,
            "encoders": [spec.to_dict() for spec in self.encoders],
            "intra_encoder": self.intra_encoder.to_dict() if self.intra_encoder else None,
            "chunking": {
                "max_chunk_words": self.chunking.max_chunk_words,
                "overlap_words": self.chunking.overlap_words,
            },
            "retrieval": {
                "m": self.m,
                "scope": "open" if self.scope is None else sorted(self.scope),
            },
            "rerank": {
                "enabled": self.rerank_enabled,
                "k": self.k,
                "anchor_aggregation": self.anchor_aggregation,
                "missing_anchor_score": self.missing_anchor_score,
            },
            "provider": self.provider,
            "context_type": self.context_type,
            "names_only": self.names_only,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str = ".") -> "RunConfig":
        retrieval = obj.get("retrieval", {})
        rr = obj.get("rerank", {})
        chunking = obj.get("chunking", {})
        scope_raw = retrieval.get("scope", "open")
        scope = None if scope_raw in (None, "open") else tuple(sorted(scope_raw))
        intra = obj.get("intra_encoder")
        return cls(
            kb=obj["kb"],
            queries=obj["queries"],
            encoders=tuple(EncoderSpec.from_dict(e) for e in obj["encoders"]),
            intra_encoder=EncoderSpec.from_dict(intra) if intra else None,
            chunking=ChunkConfig(
                max_chunk_words=int(chunking.get("max_chunk_words", 60)),
                overlap_words=int(chunking.get("overlap_words", 15)),
            ),
            m=int(retrieval.get("m", 30)),
            scope=scope,
            rerank_enabled=bool(rr.get("enabled", True)),
            k=int(rr.get("k", 10)),
            anchor_aggregation=rr.get("anchor_aggregation", "mean"),
            missing_anchor_score=float(rr.get("missing_anchor_score", 0.0)),
            provider=obj.get("provider"),
            context_type=obj.get("context_type", "summaries"),
            names_only=bool(obj.get("names_only", False)),
            seed=int(obj.get("seed", 0)),
            base_dir=base_dir,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls.from_dict(obj, base_dir=str(path.parent))

    def to_file(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def validate_paths(self) -> None:
        if self.names_only:
            for spec in self.encoders:
                if spec.names_paths is None:
                    raise ConfigError(
                        f"names-only mode needs names_paths for encoder {spec.encoder_id!r}"
                    )
        missing = [p for p in (self.kb, self.queries) if not self.resolve(p).exists()]
        missing.extend(
            p for _, p in active_embedding_paths(self) if not self.resolve(p).exists()
        )
        if missing:
            raise ConfigError(f"missing input files: {missing}")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def active_embedding_paths(cfg: RunConfig) -> list[tuple[str, str]]:
    """(encoder_id, path) pairs the run will actually load."""
    out = []
    for spec in cfg.encoders:
        paths = spec.names_paths if cfg.names_only else spec.paths
        out.extend((spec.encoder_id, p) for p in paths or ())
    if cfg.rerank_enabled and cfg.intra_encoder:
        out.extend((cfg.intra_encoder.encoder_id, p) for p in cfg.intra_encoder.paths)
    return out


def config_fingerprint(cfg: RunConfig) -> str:
    """Hash of all pipeline settings plus content digests of the input files
    the run reads.

    Worker counts and output locations are excluded: they must not change
    results. Identical fingerprints therefore imply identical reports.
    """
    payload = cfg.to_dict()
    digests = {"kb": _sha256(cfg.resolve(cfg.kb)), "queries": _sha256(cfg.resolve(cfg.queries))}
    for encoder_id, p in active_embedding_paths(cfg):
        digests[f"{encoder_id}:{p}"] = _sha256(cfg.resolve(p))
    payload["input_digests"] = dict(sorted(digests.items()))
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class LoadedRun:
    cfg: RunConfig
    kb: KnowledgeBase
    corpus: list[Chunk]
    store: EmbeddingStore
    queries: list[QueryRow]
    fingerprint: str


def load_run(cfg: RunConfig) -> LoadedRun:
    cfg.validate_paths()
    kb = read_kb(cfg.resolve(cfg.kb))
    corpus = names_only_corpus(kb) if cfg.names_only else chunk_corpus(kb, cfg.chunking)
    store = EmbeddingStore()
    for spec in cfg.encoders:
        profile = EncoderProfile(spec.encoder_id, spec.dim, spec.role)
        paths = spec.names_paths if cfg.names_only else spec.paths
        for p in paths:
            store.load(cfg.resolve(p), profile)
    if cfg.rerank_enabled:
        spec = cfg.intra_encoder
        profile = EncoderProfile(spec.encoder_id, spec.dim, spec.role)
        for p in spec.paths:
            store.load(cfg.resolve(p), profile)
    queries = read_query_manifest(cfg.resolve(cfg.queries))
    if not queries:
        raise DataIntegrityError(f"query manifest {cfg.queries!r} is empty")
    return LoadedRun(
        cfg=cfg,
        kb=kb,
        corpus=corpus,
        store=store,
        queries=queries,
        fingerprint=config_fingerprint(cfg),
    )


@dataclass
class QueryOutcome:
    ranking: RetrievalRanking
    context: list[tuple[str, str]]
    prediction: Prediction | None


def build_context(
    candidates,
    k: int,
    kb: KnowledgeBase,
    corpus_by_id: dict[str, Chunk],
    context_type: str,
) -> list[tuple[str, str]]:
    """Candidate context per the configured type: full summaries (default),
    raw chunk texts, or bare names."""
    if context_type == "summaries":
        return select_context(candidates, k, kb)
    seen = set()
    out = []
    for cand in list(candidates)[:k]:
        if cand.species_id in seen:
            continue
        seen.add(cand.species_id)
        if context_type == "chunks":
            out.append((cand.species_id, corpus_by_id[cand.chunk_id].text))
        else:
            out.append((cand.species_id, ""))
    return out


def evaluate_query(
    row: QueryRow,
    run: LoadedRun,
    retr_cfg: RetrievalConfig,
    rr_cfg: RerankConfig | None,
    provider,
    corpus_by_id: dict[str, Chunk],
    scoped_species: frozenset[str],
) -> QueryOutcome:
    query = QueryInput.from_store(
        run.store,
        row.query_id,
        retr_cfg.encoder_ids,
        rr_cfg.intra_encoder_id if rr_cfg else None,
        ground_truth_species=row.ground_truth_species,
        dataset_name=row.dataset_name,
    )
    candidates = retrieve(query, run.corpus, run.store, retr_cfg)
    if rr_cfg is not None:
        candidates = rerank(candidates, query, run.kb, run.store, rr_cfg)
    ranking = RetrievalRanking(
        query_id=row.query_id,
        ground_truth_species=row.ground_truth_species,
        candidates=tuple(candidates),
        dataset_name=row.dataset_name,
        truth_in_scope=row.ground_truth_species in scoped_species,
    )
    k = rr_cfg.k if rr_cfg else run.cfg.k
    context = build_context(candidates, k, run.kb, corpus_by_id, run.cfg.context_type)
    prediction = None
    if provider is not None:
        prediction = classify(
            query_id=row.query_id,
            image_ref=row.query_id,
            summaries=context,
            provider=provider,
            kb=run.kb,
        )
    return QueryOutcome(ranking=ranking, context=context, prediction=prediction)


@dataclass
class BenchmarkResult:
    report: MetricsReport
    rows: list[dict]
    outcomes: list[QueryOutcome]


def run_benchmark(
    cfg: RunConfig,
    workers: int = 1,
    ks: Sequence[int] = DEFAULT_KS,
) -> BenchmarkResult:
    run = load_run(cfg)
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
    scoped_species = frozenset(
        c.species_id for c in scoped_chunks(run.corpus, retr_cfg.scope)
    )
    ordered_rows = sorted(run.queries, key=lambda r: r.query_id)

    def work(row: QueryRow) -> QueryOutcome:
        return evaluate_query(row, run, retr_cfg, rr_cfg, provider, corpus_by_id, scoped_species)

    if workers <= 1:
        outcomes = [work(row) for row in ordered_rows]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, ordered_rows))

    rankings = [o.ranking for o in outcomes]
    predictions = None
    if provider is not None:
        predictions = {o.prediction.query_id: o.prediction for o in outcomes}
    report = aggregate_metrics(rankings, predictions, run.kb, ks, run.fingerprint)
    rows = [_log_row(o, ks) for o in outcomes]
    return BenchmarkResult(report=report, rows=rows, outcomes=outcomes)


def _log_row(outcome: QueryOutcome, ks: Sequence[int]) -> dict:
    ranking = outcome.ranking
    row = {
        "query_id": ranking.query_id,
        "dataset_name": ranking.dataset_name,
        "ground_truth_species": ranking.ground_truth_species,
        "truth_in_scope": ranking.truth_in_scope,
        "candidates": [
            {
                "chunk_id": c.chunk_id,
                "species_id": c.species_id,
                "cross_score": c.cross_score,
                "intra_score": c.intra_score,
                "score": c.score,
            }
            for c in ranking.candidates
        ],
        "context_species": [sid for sid, _ in outcome.context],
        "reciprocal_rank": {str(k): mrr_at_k(ranking, k) for k in ks},
    }
    if outcome.prediction is not None:
        row["raw_text"] = outcome.prediction.raw_text
        row["predicted_species"] = outcome.prediction.resolved_species
        row["resolution"] = outcome.prediction.resolution
    return row


def write_report(result: BenchmarkResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "per_query": out / "per_query.ndjson",
        "summary": out / "summary.txt",
        "report": out / "report.json",
    }
    with open(paths["per_query"], "w", encoding="utf-8") as fh:
        for row in result.rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.report.summary_lines()) + "\n")
    with open(paths["report"], "w", encoding="utf-8") as fh:
        json.dump(result.report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# --- ablation grid -----------------------------------------------------------

AXIS_NAMES = ("encoders", "reranker", "k", "m", "context")


def parse_axis(spec: str, base: RunConfig) -> tuple[str, list]:
    """Parse an axis spec like "reranker", "k=5,10,15", or
    "encoders=enc-a|enc-a,enc-b". Bare names get their default sweep."""
    name, _, raw = spec.partition("=")
    name = name.strip()
    if name not in AXIS_NAMES:
        raise ConfigError(f"unknown ablation axis {name!r}; expected one of {AXIS_NAMES}")
    if name == "encoders":
        if raw:
            subsets = [tuple(s.split(",")) for s in raw.split("|") if s]
        else:
            ids = base.encoder_ids()
            subsets = [tuple(ids[: i + 1]) for i in range(len(ids))]
        known = set(base.encoder_ids())
        for subset in subsets:
            unknown = set(subset) - known
            if unknown:
                raise ConfigError(f"ablation encoder subset names unknown encoders: {sorted(unknown)}")
        return name, subsets
    if name == "reranker":
        values = [v.strip() for v in raw.split(",") if v.strip()] if raw else ["off", "on"]
        for v in values:
            if v not in ("on", "off"):
                raise ConfigError(f"reranker axis values must be on/off, got {v!r}")
        return name, values
    if name in ("k", "m"):
        if not raw:
            defaults = {"k": [5, 10, 15], "m": [10, 30]}
            return name, defaults[name]
        return name, [int(v) for v in raw.split(",") if v.strip()]
    # context
    values = [v.strip() for v in raw.split(",") if v.strip()] if raw else list(CONTEXT_TYPES)
    for v in values:
        if v not in CONTEXT_TYPES:
            raise ConfigError(f"context axis values must be one of {CONTEXT_TYPES}, got {v!r}")
    return name, values


def apply_cell(base: RunConfig, settings: dict) -> RunConfig:
    cfg = base
    if "encoders" in settings:
        subset = settings["encoders"]
        keep = [spec for spec in base.encoders if spec.encoder_id in subset]
        cfg = replace(cfg, encoders=tuple(keep))
    if "reranker" in settings:
        cfg = replace(cfg, rerank_enabled=settings["reranker"] == "on")
    if "k" in settings:
        cfg = replace(cfg, k=int(settings["k"]))
    if "m" in settings:
        cfg = replace(cfg, m=int(settings["m"]))
    if "context" in settings:
        cfg = replace(cfg, context_type=settings["context"])
    return cfg


def cell_label(settings: dict) -> str:
    parts = []
    for name in AXIS_NAMES:
        if name not in settings:
            continue
        value = settings[name]
        if name == "encoders":
            value = "+".join(value)
        parts.append(f"{name}={value}")
    return " ".join(parts)


@dataclass
class AblationCell:
    label: str
    settings: dict
    report: MetricsReport


@dataclass
class AblationResult:
    cells: list[AblationCell]

    def table(self) -> str:
        has_accuracy = any(c.report.aggregate.top1_accuracy is not None for c in self.cells)
        ks = sorted(self.cells[0].report.aggregate.mrr) if self.cells else []
        header = ["cell"] + [f"mrr@{k}" for k in ks]
        if has_accuracy:
            header.append("top1")
        rows = [header]
        for cell in self.cells:
            row = [cell.label] + [f"{cell.report.aggregate.mrr[k]:.4f}" for k in ks]
            if has_accuracy:
                acc = cell.report.aggregate.top1_accuracy
                row.append("-" if acc is None else f"{acc:.4f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(val.ljust(widths[i]) for i, val in enumerate(row)).rstrip() for row in rows]
        return "\n".join(lines)


def run_ablation(
    base: RunConfig,
    axis_specs: Sequence[str],
    workers: int = 1,
    ks: Sequence[int] = DEFAULT_KS,
) -> AblationResult:
    """One benchmark run per grid cell over the same query set."""
    if not axis_specs:
        raise ConfigError("ablation grid is empty; pass at least one --axis")
    axes = [parse_axis(spec, base) for spec in axis_specs]
    names = [name for name, _ in axes]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate ablation axes: {names}")
    cells = []
    for combo in product(*[values for _, values in axes]):
        settings = dict(zip(names, combo))
        cfg = apply_cell(base, settings)
        result = run_benchmark(cfg, workers=workers, ks=ks)
        cells.append(AblationCell(label=cell_label(settings), settings=settings, report=result.report))
    return AblationResult(cells=cells)


def write_ablation(result: AblationResult, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cells": out / "cells.ndjson", "table": out / "table.txt"}
    with open(paths["cells"], "w", encoding="utf-8") as fh:
        for cell in result.cells:
            obj = {
                "label": cell.label,
                "settings": {
                    k: (list(v) if isinstance(v, tuple) else v) for k, v in cell.settings.items()
                },
                "report": cell.report.to_dict(),
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
    with open(paths["table"], "w", encoding="utf-8") as fh:
        fh.write(result.table() + "\n")
    return paths
