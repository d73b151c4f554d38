"""Independent brute-force verifier for the ranking pipeline.

Everything here is recomputed with plain Python loops over raw vector
data: no numpy linear algebra, no calls into the retrieval, re-ranking,
or metrics modules. Golden reference values are pinned from this module,
never from the engine, so engine bugs cannot certify themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .simlab import SyntheticInstance


def oracle_cosine(u: Sequence[float], v: Sequence[float]) -> float:
    return math.fsum(a * b for a, b in zip(u, v, strict=True))


@dataclass
class OracleQueryResult:
    query_id: str
    ground_truth_species: str
    cross_scores: dict[str, float]
    top_m: list[tuple[str, float]]
    reranked: list[tuple[str, float, float, float]]  # chunk, cross, intra, total
    context_species: list[str]
    reciprocal_rank: dict[int, float]
    truth_in_context: bool


@dataclass
class OracleRun:
    queries: list[OracleQueryResult]
    mrr: dict[int, float] = field(default_factory=dict)
    recall_at_k: float = 0.0


def oracle_pipeline(
    instance: SyntheticInstance,
    encoder_ids: Sequence[str] | None = None,
    m: int = 30,
    k: int = 10,
    rerank_enabled: bool = True,
    scope: frozenset[str] | None = None,
    ks: Sequence[int] = (1, 5, 10, 30),
    anchor_aggregation: str = "mean",
    missing_anchor_score: float = 0.0,
    use_names_corpus: bool = False,
) -> OracleRun:
    """Exhaustively recompute scores, rankings, contexts, and metrics."""
    cfg = instance.config
    encoder_ids = list(encoder_ids or [e for e, _ in cfg.cross_encoders])
    store = instance.names_store if use_names_corpus else instance.store

    # Raw vector data as plain Python lists. Name-corpus chunks are the
    # non-query items of the names store; regular chunks come from the
    # instance corpus. Synthetic chunk ids are always species_id#ordinal.
    if use_names_corpus:
        chunk_ids = sorted(
            item_id for item_id in store.segments[encoder_ids[0]].vectors if "#" in item_id
        )
        chunk_species = {cid: cid.rsplit("#", 1)[0] for cid in chunk_ids}
    else:
        chunk_ids = [c.chunk_id for c in instance.corpus]
        chunk_species = {c.chunk_id: c.species_id for c in instance.corpus}
    chunk_vectors = {
        enc: {cid: store.segments[enc].vectors[cid].tolist() for cid in chunk_ids}
        for enc in encoder_ids
    }

    anchors: dict[str, list[list[float]]] = {}
    intra_segment = instance.store.segments[cfg.intra_encoder_id]
    for record in instance.kb:
        anchors[record.species_id] = [
            intra_segment.vectors[a].tolist() for a in record.anchor_ids
        ]

    in_scope = [cid for cid in chunk_ids if scope is None or chunk_species[cid] in scope]

    results = []
    for row in instance.queries:
        qid = row.query_id
        q_cross = {enc: store.segments[enc].vectors[qid].tolist() for enc in encoder_ids}
        q_intra = intra_segment.vectors[qid].tolist()

        cross_scores: dict[str, float] = {}
        for cid in in_scope:
            per_encoder = [
                oracle_cosine(q_cross[enc], chunk_vectors[enc][cid]) for enc in encoder_ids
            ]
            cross_scores[cid] = math.fsum(per_encoder) / len(per_encoder)

        ordered = sorted(cross_scores.items(), key=lambda kv: (-kv[1], kv[0]))
        top = ordered[: min(m, len(ordered))]

        intra_by_species: dict[str, float] = {}
        reranked = []
        if rerank_enabled:
            for cid, _ in top:
                sid = chunk_species[cid]
                if sid not in intra_by_species:
                    anchor_vecs = anchors[sid]
                    if not anchor_vecs:
                        intra_by_species[sid] = missing_anchor_score
                    else:
                        sims = [oracle_cosine(q_intra, a) for a in anchor_vecs]
                        if anchor_aggregation == "max":
                            intra_by_species[sid] = max(sims)
                        else:
                            intra_by_species[sid] = math.fsum(sims) / len(sims)
            combined = [
                (cid, sc, intra_by_species[chunk_species[cid]], sc + intra_by_species[chunk_species[cid]])
                for cid, sc in top
            ]
            reranked = sorted(combined, key=lambda r: (-r[3], r[0]))
            final_chunks = [cid for cid, _, _, _ in reranked]
        else:
            final_chunks = [cid for cid, _ in top]

        context_species = []
        for cid in final_chunks[: min(k, len(final_chunks))]:
            sid = chunk_species[cid]
            if sid not in context_species:
                context_species.append(sid)

        rr = {}
        for K in ks:
            value = 0.0
            for position, cid in enumerate(final_chunks[:K], start=1):
                if chunk_species[cid] == row.ground_truth_species:
                    value = 1.0 / position
                    break
            rr[K] = value

        results.append(
            OracleQueryResult(
                query_id=qid,
                ground_truth_species=row.ground_truth_species,
                cross_scores=cross_scores,
                top_m=top,
                reranked=reranked,
                context_species=context_species,
                reciprocal_rank=rr,
                truth_in_context=row.ground_truth_species in context_species,
            )
        )

    results.sort(key=lambda r: r.query_id)
    run = OracleRun(queries=results)
    n = len(results)
    for K in ks:
        run.mrr[K] = math.fsum(r.reciprocal_rank[K] for r in results) / n
    run.recall_at_k = sum(1 for r in results if r.truth_in_context) / n
    return run


def oracle_metrics_for_subsets(
    instance: SyntheticInstance,
    subsets: Sequence[Sequence[str]],
    m: int = 30,
    k: int = 10,
    rerank_enabled: bool = False,
    ks: Sequence[int] = (1, 5, 10, 30),
) -> dict[str, dict[int, float]]:
    """MRR per encoder subset; subset key is the ids joined with '+'."""
    out = {}
    for subset in subsets:
        run = oracle_pipeline(
            instance, encoder_ids=subset, m=m, k=k, rerank_enabled=rerank_enabled, ks=ks
        )
        out["+".join(subset)] = run.mrr
    return out
