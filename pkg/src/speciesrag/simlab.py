"""Synthetic ground-truth-known instances for desk-scale verification.

Every species gets a latent direction on the unit sphere; chunk, anchor,
query, and name embeddings are independently noised copies of it
(additive Gaussian, then re-normalized), so similarity decays smoothly
with the configured sigmas and every ranking claim can be checked against
an exhaustive oracle without any neural model.

The generated files use the standard KB/embedding/manifest formats, so
the whole engine runs unchanged on synthetic data. Summaries carry a
unique implanted keyword per species for the keyword-oracle provider.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embeddings import CROSS_MODAL, INTRA_MODAL, EmbeddingStore, EncoderProfile, write_embeddings
from .errors import ConfigError
from .knowledge import (
    Chunk,
    ChunkConfig,
    KnowledgeBase,
    SpeciesRecord,
    chunk_corpus,
    names_only_corpus,
    write_kb,
)
from .providers import keyword_for

DEFAULT_CROSS_ENCODERS = (("enc-a", 0.8), ("enc-b", 0.8), ("enc-c", 0.8))
DEFAULT_INTRA_ENCODER = "enc-vis"

# Word counts that land exactly N chunks under the default 60/15 window.
_WORDS_FOR_CHUNKS = {1: 40, 2: 80, 3: 120}
GENUS_GROUP = 5


@dataclass(frozen=True)
class SimConfig:
    n_species: int = 200
    chunks_per_species: int = 2
    anchors_per_species: int = 3
    latent_dim: int = 64
    cross_encoders: tuple[tuple[str, float], ...] = DEFAULT_CROSS_ENCODERS
    intra_encoder_id: str = DEFAULT_INTRA_ENCODER
    query_sigma: float = 0.8
    anchor_sigma: float = 0.4
    n_queries: int = 500
    seed: int = 42
    # When set, query ground truths are drawn from the first N species only
    # (used for bounded-vs-open vocabulary comparisons).
    query_species_pool: int | None = None

    def __post_init__(self):
        if self.n_species < 2:
            raise ConfigError("need at least 2 species")
        if not (1 <= self.chunks_per_species <= 3):
            raise ConfigError("chunks_per_species must be in 1..3")
        if not (0 <= self.anchors_per_species <= 3):
            raise ConfigError("anchors_per_species must be in 0..3")
        if self.latent_dim < 2:
            raise ConfigError("latent_dim must be >= 2")
        if not self.cross_encoders:
            raise ConfigError("need at least one cross-modal encoder")
        for _, sigma in self.cross_encoders:
            if sigma < 0:
                raise ConfigError("text sigma must be >= 0")
        if self.query_sigma < 0 or self.anchor_sigma < 0:
            raise ConfigError("sigmas must be >= 0")
        if self.n_queries < 1:
            raise ConfigError("need at least one query")
        if self.query_species_pool is not None and not (
            1 <= self.query_species_pool <= self.n_species
        ):
            raise ConfigError("query_species_pool must be in 1..n_species")

    def to_dict(self) -> dict:
        return {
            "n_species": self.n_species,
            "chunks_per_species": self.chunks_per_species,
            "anchors_per_species": self.anchors_per_species,
            "latent_dim": self.latent_dim,
            "cross_encoders": [list(e) for e in self.cross_encoders],
            "intra_encoder_id": self.intra_encoder_id,
            "query_sigma": self.query_sigma,
            "anchor_sigma": self.anchor_sigma,
            "n_queries": self.n_queries,
            "seed": self.seed,
            "query_species_pool": self.query_species_pool,
        }


@dataclass(frozen=True)
class QueryRow:
    query_id: str
    ground_truth_species: str
    dataset_name: str = "synthetic"


@dataclass
class SyntheticInstance:
    config: SimConfig
    kb: KnowledgeBase
    corpus: list[Chunk]
    store: EmbeddingStore
    names_store: EmbeddingStore
    queries: list[QueryRow]

    @property
    def truth(self) -> dict[str, str]:
        return {q.query_id: q.ground_truth_species for q in self.queries}

    def cross_profiles(self) -> list[EncoderProfile]:
        return [
            EncoderProfile(enc, self.config.latent_dim, CROSS_MODAL)
            for enc, _ in self.config.cross_encoders
        ]

    def intra_profile(self) -> EncoderProfile:
        return EncoderProfile(self.config.intra_encoder_id, self.config.latent_dim, INTRA_MODAL)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _noisy(rng: np.random.Generator, latent: np.ndarray, sigma: float) -> np.ndarray:
    # The normal draw happens unconditionally so the RNG stream does not
    # depend on sigma (common random numbers across sigma sweeps).
    noise = rng.standard_normal(latent.shape[0])
    return _unit(latent + sigma * noise)


def _summary_text(species_id: str, n_words: int) -> str:
    words = [keyword_for(species_id)]
    words.extend(f"plume{i:03d}" for i in range(n_words - 1))
    return " ".join(words)


def generate_instance(cfg: SimConfig) -> SyntheticInstance:
    """Deterministically generate a KB, embedding stores, and a query set."""
    rng = np.random.default_rng(cfg.seed)
    width = max(3, len(str(cfg.n_species - 1)))
    species_ids = [f"sp{i:0{width}d}" for i in range(cfg.n_species)]
    n_words = _WORDS_FOR_CHUNKS[cfg.chunks_per_species]

    records = []
    for idx, sid in enumerate(species_ids):
        records.append(
            SpeciesRecord(
                species_id=sid,
                common_name=f"Species {sid}",
                scientific_name=f"Simulata {sid}",
                genus=f"genus-{idx // GENUS_GROUP:03d}",
                refined_summary=_summary_text(sid, n_words),
                anchor_ids=tuple(f"{sid}@a{j}" for j in range(cfg.anchors_per_species)),
            )
        )
    kb = KnowledgeBase(records)
    corpus = chunk_corpus(kb, ChunkConfig())
    assert len(corpus) == cfg.n_species * cfg.chunks_per_species

    cross_profiles = [EncoderProfile(e, cfg.latent_dim, CROSS_MODAL) for e, _ in cfg.cross_encoders]
    intra_profile = EncoderProfile(cfg.intra_encoder_id, cfg.latent_dim, INTRA_MODAL)
    store = EmbeddingStore(cross_profiles + [intra_profile])
    names_store = EmbeddingStore(cross_profiles)
    name_corpus = names_only_corpus(kb)

    latents_by_id: dict[str, np.ndarray] = {}
    for idx, sid in enumerate(species_ids):
        latent = _unit(rng.standard_normal(cfg.latent_dim))
        latents_by_id[sid] = latent
        for enc, sigma in cfg.cross_encoders:
            for ordinal in range(cfg.chunks_per_species):
                store.segment(enc).add(f"{sid}#{ordinal}", _noisy(rng, latent, sigma))
        for j in range(cfg.anchors_per_species):
            store.segment(cfg.intra_encoder_id).add(f"{sid}@a{j}", _noisy(rng, latent, cfg.anchor_sigma))
        for enc, sigma in cfg.cross_encoders:
            names_store.segment(enc).add(name_corpus[idx].chunk_id, _noisy(rng, latent, sigma))

    pool = cfg.query_species_pool or cfg.n_species
    assignments = rng.integers(0, pool, size=cfg.n_queries)

    q_width = max(4, len(str(cfg.n_queries - 1)))
    queries = []
    for i in range(cfg.n_queries):
        qid = f"q{i:0{q_width}d}"
        sid = species_ids[int(assignments[i])]
        latent = latents_by_id[sid]
        for enc, _ in cfg.cross_encoders:
            vec = _noisy(rng, latent, cfg.query_sigma)
            store.segment(enc).add(qid, vec)
            names_store.segment(enc).add(qid, vec)
        store.segment(cfg.intra_encoder_id).add(qid, _noisy(rng, latent, cfg.query_sigma))
        queries.append(QueryRow(query_id=qid, ground_truth_species=sid))

    return SyntheticInstance(
        config=cfg,
        kb=kb,
        corpus=corpus,
        store=store,
        names_store=names_store,
        queries=queries,
    )


def write_query_manifest(queries: list[QueryRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            obj = {
                "query_id": q.query_id,
                "ground_truth_species": q.ground_truth_species,
                "dataset_name": q.dataset_name,
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_query_manifest(path: str | Path) -> list[QueryRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            rows.append(
                QueryRow(
                    query_id=obj["query_id"],
                    ground_truth_species=obj.get("ground_truth_species"),
                    dataset_name=obj.get("dataset_name", "default"),
                )
            )
    return rows


def write_instance(instance: SyntheticInstance, out_dir: str | Path) -> dict:
    """Write the instance in the standard on-disk formats.

    Returns a ready-to-run config dict referencing the emitted files
    (also written as run_config.json).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = instance.config

    write_kb(instance.kb, out / "kb.ndjson")
    write_query_manifest(instance.queries, out / "queries.ndjson")

    chunk_ids = {c.chunk_id for c in instance.corpus}
    query_ids = {q.query_id for q in instance.queries}
    encoders = []
    for enc, _ in cfg.cross_encoders:
        seg = instance.store.segment(enc)
        _write_subset(seg, chunk_ids, out / f"chunks_{enc}.vreb")
        _write_subset(seg, query_ids, out / f"queries_{enc}.vreb")
        names_seg = instance.names_store.segment(enc)
        name_ids = set(names_seg.vectors) - query_ids
        _write_subset(names_seg, name_ids, out / f"names_{enc}.vreb")
        encoders.append(
            {
                "encoder_id": enc,
                "dim": cfg.latent_dim,
                "role": CROSS_MODAL,
                "paths": [f"chunks_{enc}.vreb", f"queries_{enc}.vreb"],
                "names_paths": [f"names_{enc}.vreb", f"queries_{enc}.vreb"],
            }
        )

    intra_seg = instance.store.segment(cfg.intra_encoder_id)
    anchor_ids = set(intra_seg.vectors) - query_ids
    _write_subset(intra_seg, anchor_ids, out / f"anchors_{cfg.intra_encoder_id}.vreb")
    _write_subset(intra_seg, query_ids, out / f"queries_{cfg.intra_encoder_id}.vreb")

    run_config = {
        "kb": "kb.ndjson",
        "queries": "queries.ndjson",
        "encoders": encoders,
        "intra_encoder": {
            "encoder_id": cfg.intra_encoder_id,
            "dim": cfg.latent_dim,
            "role": INTRA_MODAL,
            "paths": [
                f"anchors_{cfg.intra_encoder_id}.vreb",
                f"queries_{cfg.intra_encoder_id}.vreb",
            ],
        },
        "chunking": {"max_chunk_words": 60, "overlap_words": 15},
        "retrieval": {"m": 30, "scope": "open"},
        "rerank": {
            "enabled": True,
            "k": 10,
            "anchor_aggregation": "mean",
            "missing_anchor_score": 0.0,
        },
        "provider": None,
        "context_type": "summaries",
        "names_only": False,
        "seed": cfg.seed,
    }
    with open(out / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(run_config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "sim_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return run_config


def _write_subset(segment, item_ids: set[str], path: Path) -> None:
    from .embeddings import StoreSegment

    sub = StoreSegment(segment.encoder_id, segment.dim)
    # Write in sorted id order so emitted files are byte-stable.
    for item_id in sorted(item_ids):
        sub.vectors[item_id] = segment.vectors[item_id]
    write_embeddings(sub, path)


def sweep_query_sigma(base: SimConfig, sigmas: list[float]) -> list[SyntheticInstance]:
    """Same seed, same draws, different query noise (common random numbers)."""
    return [generate_instance(replace(base, query_sigma=s)) for s in sigmas]
