"""First-stage retrieval: per-encoder cross-modal scores, ensemble fusion,
and top-m candidate selection.

Fusion is the unweighted arithmetic mean of per-encoder similarities,
accumulated in a canonical (sorted-by-encoder) order so that shuffling the
configured encoder list cannot perturb the result bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .embeddings import EmbeddingStore, cosine
from .errors import ConfigError, DataIntegrityError, MissingEmbeddingError
from .knowledge import Chunk

OPEN_SCOPE = None


@dataclass(frozen=True)
class RetrievalConfig:
    encoder_ids: tuple[str, ...]
    m: int = 30
    # None means open vocabulary; a bounded scope is a species_id set.
    scope: frozenset[str] | None = OPEN_SCOPE

    def __post_init__(self):
        if not self.encoder_ids:
            raise ConfigError("retrieval needs at least one encoder")
        if len(set(self.encoder_ids)) != len(self.encoder_ids):
            raise ConfigError(f"duplicate encoder ids: {self.encoder_ids}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if self.scope is not None and not self.scope:
            raise ConfigError("bounded scope must name at least one species")


@dataclass(frozen=True)
class ScoredCandidate:
    chunk_id: str
    species_id: str
    cross_score: float
    intra_score: float = 0.0
    score: float = 0.0

    def with_intra(self, intra: float) -> "ScoredCandidate":
        return replace(self, intra_score=intra, score=self.cross_score + intra)


@dataclass(frozen=True)
class QueryInput:
    """Per-query embeddings pulled from the store up front.

    cross_vectors holds one image vector per configured cross-modal
    encoder; intra_vector is the re-ranker's view of the same image.
    """

    query_id: str
    cross_vectors: Mapping[str, np.ndarray]
    intra_vector: np.ndarray | None = None
    ground_truth_species: str | None = None
    dataset_name: str = "default"

    @classmethod
    def from_store(
        cls,
        store: EmbeddingStore,
        query_id: str,
        encoder_ids: Sequence[str],
        intra_encoder_id: str | None = None,
        ground_truth_species: str | None = None,
        dataset_name: str = "default",
    ) -> "QueryInput":
        cross = {enc: store.get(enc, query_id) for enc in encoder_ids}
        intra = store.get(intra_encoder_id, query_id) if intra_encoder_id else None
        return cls(
            query_id=query_id,
            cross_vectors=cross,
            intra_vector=intra,
            ground_truth_species=ground_truth_species,
            dataset_name=dataset_name,
        )


def scoped_chunks(corpus: Sequence[Chunk], scope: frozenset[str] | None) -> list[Chunk]:
    if scope is None:
        return list(corpus)
    return [c for c in corpus if c.species_id in scope]


def score_chunk(query: QueryInput, chunk_id: str, encoder_id: str, store: EmbeddingStore) -> float:
    """Cross-modal similarity of one query/chunk pair under one encoder."""
    q_vec = query.cross_vectors.get(encoder_id)
    if q_vec is None:
        raise MissingEmbeddingError(encoder_id, query.query_id)
    return cosine(q_vec, store.get(encoder_id, chunk_id))


def ensemble_scores(
    query: QueryInput,
    corpus: Sequence[Chunk],
    store: EmbeddingStore,
    cfg: RetrievalConfig,
) -> dict[str, float]:
    """Mean cross-modal score per chunk over the configured encoder ensemble.

    A missing embedding for any configured encoder is an error: silently
    dropping an encoder would change the score scale per chunk.
    """
    chunks = scoped_chunks(corpus, cfg.scope)
    if not chunks:
        raise DataIntegrityError("no chunks in scope for retrieval")
    chunk_ids = [c.chunk_id for c in chunks]
    total = np.zeros(len(chunks), dtype=np.float64)
    for encoder_id in sorted(cfg.encoder_ids):
        q_vec = query.cross_vectors.get(encoder_id)
        if q_vec is None:
            raise MissingEmbeddingError(encoder_id, query.query_id)
        matrix = store.matrix(encoder_id, chunk_ids)
        total += matrix @ q_vec
    fused = total / len(cfg.encoder_ids)
    return dict(zip(chunk_ids, fused.tolist()))


def top_m(
    scores: Mapping[str, float],
    m: int,
    species_of: Mapping[str, str],
) -> list[ScoredCandidate]:
    """Best m chunks, descending by fused score, ties by ascending chunk_id."""
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if not scores:
        raise DataIntegrityError("empty score map")
    ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        ScoredCandidate(
            chunk_id=chunk_id,
            species_id=species_of[chunk_id],
            cross_score=score,
            intra_score=0.0,
            score=score,
        )
        for chunk_id, score in ordered[:m]
    ]


def retrieve(
    query: QueryInput,
    corpus: Sequence[Chunk],
    store: EmbeddingStore,
    cfg: RetrievalConfig,
) -> list[ScoredCandidate]:
    """Full first stage: ensemble scoring then top-m selection."""
    scores = ensemble_scores(query, corpus, store, cfg)
    species_of = {c.chunk_id: c.species_id for c in corpus}
    return top_m(scores, cfg.m, species_of)
