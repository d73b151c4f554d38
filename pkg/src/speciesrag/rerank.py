"""Second-stage visual re-ranking against per-species anchor embeddings.

Each candidate species gets one intra-modal score: the aggregate
similarity between the query image and up to three anchor images of that
species. The final score is the plain sum of the cross-modal and
intra-modal scores, so a constant intra score across species preserves
the retrieval order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .embeddings import EmbeddingStore, cosine
from .errors import ConfigError, DataIntegrityError
from .knowledge import KnowledgeBase
from .retrieval import QueryInput, ScoredCandidate

MEAN = "mean"
MAX = "max"


@dataclass(frozen=True)
class RerankConfig:
    intra_encoder_id: str
    k: int = 10
    anchor_aggregation: str = MEAN
    missing_anchor_score: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.anchor_aggregation not in (MEAN, MAX):
            raise ConfigError(f"unknown anchor aggregation {self.anchor_aggregation!r}")


def intra_score(
    query: QueryInput,
    species_id: str,
    kb: KnowledgeBase,
    store: EmbeddingStore,
    cfg: RerankConfig,
) -> float:
    """Aggregate anchor similarity for one species; a species without
    anchors scores the configured neutral default."""
    if query.intra_vector is None:
        raise DataIntegrityError(
            f"query {query.query_id!r} has no intra-modal vector for re-ranking"
        )
    anchors = kb.get(species_id).anchor_ids
    if not anchors:
        return cfg.missing_anchor_score
    # An anchor listed in the KB but absent from the store is a data
    # integrity failure, surfaced by the store lookup.
    sims = [cosine(query.intra_vector, store.get(cfg.intra_encoder_id, a)) for a in anchors]
    if cfg.anchor_aggregation == MAX:
        return max(sims)
    return math.fsum(sims) / len(sims)


def rerank(
    candidates: Sequence[ScoredCandidate],
    query: QueryInput,
    kb: KnowledgeBase,
    store: EmbeddingStore,
    cfg: RerankConfig,
) -> list[ScoredCandidate]:
    """Attach intra-modal scores and re-sort by the combined score.

    The intra score is computed once per distinct candidate species, not
    per chunk.
    """
    if not candidates:
        raise DataIntegrityError("re-rank called with no candidates")
    species_scores: dict[str, float] = {}
    for cand in candidates:
        if cand.species_id not in species_scores:
            species_scores[cand.species_id] = intra_score(query, cand.species_id, kb, store, cfg)
    rescored = [c.with_intra(species_scores[c.species_id]) for c in candidates]
    rescored.sort(key=lambda c: (-c.score, c.chunk_id))
    return rescored


def select_context(
    reranked: Sequence[ScoredCandidate],
    k: int,
    kb: KnowledgeBase,
) -> list[tuple[str, str]]:
    """Map the top-k chunks to full species summaries, deduplicated in
    first-occurrence order."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    seen = set()
    out: list[tuple[str, str]] = []
    for cand in list(reranked)[:k]:
        if cand.species_id in seen:
            continue
        seen.add(cand.species_id)
        record = kb.get(cand.species_id)
        if not record.retrievable:
            raise DataIntegrityError(
                f"species {cand.species_id!r} reached context selection without a refined summary"
            )
        out.append((cand.species_id, record.refined_summary))
    return out
