"""Ranking and classification metrics.

MRR is computed over chunks: the rank of the first chunk belonging to the
correct species, truncated to 0 beyond K. Unresolved predictions score 0
for both species and genus accuracy; ground-truth species without genus
data drop out of the genus denominator (the exclusion count is reported).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import DataIntegrityError
from .knowledge import KnowledgeBase
from .lmm import Prediction, UNRESOLVED
from .retrieval import ScoredCandidate

DEFAULT_KS = (1, 5, 10, 30)


@dataclass(frozen=True)
class RetrievalRanking:
    """A query's final candidate ordering, ready for scoring."""

    query_id: str
    ground_truth_species: str | None
    candidates: tuple[ScoredCandidate, ...]
    dataset_name: str = "default"
    # True species has no chunk in the scored scope (possible under a
    # bounded vocabulary); counted as MRR 0 and flagged in the log.
    truth_in_scope: bool = True


def mrr_at_k(ranking: RetrievalRanking, k: int) -> float:
    """1/rank of the first correct-species chunk within the top k, else 0."""
    if k < 1:
        raise DataIntegrityError(f"K must be >= 1, got {k}")
    if ranking.ground_truth_species is None:
        raise DataIntegrityError(
            f"query {ranking.query_id!r} has no ground truth; ranking is not scorable"
        )
    for position, cand in enumerate(ranking.candidates[:k], start=1):
        if cand.species_id == ranking.ground_truth_species:
            return 1.0 / position
    return 0.0


@dataclass
class MetricsBlock:
    query_count: int = 0
    mrr: dict[int, float] = field(default_factory=dict)
    top1_accuracy: float | None = None
    genus_accuracy: float | None = None
    genus_excluded: int = 0
    unresolved_rate: float | None = None

    def to_dict(self) -> dict:
        out: dict = {"query_count": self.query_count}
        for k in sorted(self.mrr):
            out[f"mrr@{k}"] = self.mrr[k]
        if self.top1_accuracy is not None:
            out["top1_accuracy"] = self.top1_accuracy
        if self.genus_accuracy is not None:
            out["genus_accuracy"] = self.genus_accuracy
            out["genus_excluded"] = self.genus_excluded
        if self.unresolved_rate is not None:
            out["unresolved_rate"] = self.unresolved_rate
        return out


@dataclass
class MetricsReport:
    aggregate: MetricsBlock
    per_dataset: dict[str, MetricsBlock] = field(default_factory=dict)
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "config_fingerprint": self.config_fingerprint,
            "aggregate": self.aggregate.to_dict(),
            "per_dataset": {name: block.to_dict() for name, block in sorted(self.per_dataset.items())},
        }

    def summary_lines(self) -> list[str]:
        """Flat key=value rendering, stable across runs."""
        lines = [f"config_fingerprint={self.config_fingerprint}"]
        for key, value in self.aggregate.to_dict().items():
            lines.append(f"{key}={_fmt(value)}")
        for name, block in sorted(self.per_dataset.items()):
            for key, value in block.to_dict().items():
                lines.append(f"{name}.{key}={_fmt(value)}")
        return lines


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _block_for(
    rankings: Sequence[RetrievalRanking],
    predictions: Mapping[str, Prediction] | None,
    kb: KnowledgeBase,
    ks: Sequence[int],
) -> MetricsBlock:
    n = len(rankings)
    block = MetricsBlock(query_count=n)
    ordered = sorted(rankings, key=lambda r: r.query_id)
    for k in ks:
        block.mrr[k] = math.fsum(mrr_at_k(r, k) for r in ordered) / n

    if predictions is None:
        return block

    correct = 0
    unresolved = 0
    genus_correct = 0
    genus_total = 0
    for ranking in ordered:
        pred = predictions[ranking.query_id]
        truth = ranking.ground_truth_species
        if pred.resolution == UNRESOLVED:
            unresolved += 1
        if pred.resolved_species == truth:
            correct += 1
        truth_genus = kb.get(truth).genus if truth in kb else None
        if truth_genus is None:
            continue
        genus_total += 1
        if pred.resolved_species is not None:
            predicted = kb.get(pred.resolved_species)
            if predicted.genus == truth_genus:
                genus_correct += 1
    block.top1_accuracy = correct / n
    block.unresolved_rate = unresolved / n
    block.genus_excluded = n - genus_total
    block.genus_accuracy = (genus_correct / genus_total) if genus_total else 0.0
    return block


def aggregate_metrics(
    rankings: Sequence[RetrievalRanking],
    predictions: Mapping[str, Prediction] | None,
    kb: KnowledgeBase,
    ks: Sequence[int] = DEFAULT_KS,
    config_fingerprint: str = "",
) -> MetricsReport:
    """Roll per-query rankings (and optional predictions) into a report.

    Retrieval-only runs pass predictions=None and skip the accuracy rows.
    """
    if not rankings:
        raise DataIntegrityError("no rankings to aggregate")
    ids = [r.query_id for r in rankings]
    if len(set(ids)) != len(ids):
        raise DataIntegrityError("duplicate query_ids in rankings")
    if predictions is not None:
        missing = [qid for qid in ids if qid not in predictions]
        extra = sorted(set(predictions) - set(ids))
        if missing or extra:
            raise DataIntegrityError(
                f"rankings/predictions query_id mismatch: missing={missing[:5]} extra={extra[:5]}"
            )

    report = MetricsReport(aggregate=_block_for(rankings, predictions, kb, ks))
    report.config_fingerprint = config_fingerprint
    by_dataset: dict[str, list[RetrievalRanking]] = {}
    for ranking in rankings:
        by_dataset.setdefault(ranking.dataset_name, []).append(ranking)
    if len(by_dataset) > 1:
        for name, group in by_dataset.items():
            report.per_dataset[name] = _block_for(group, predictions, kb, ks)
    return report
