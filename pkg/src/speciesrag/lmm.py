"""LMM prompt assembly and free-text answer resolution.

The prompt constrains the model to answer with a bare species name; the
resolver then only needs exact matching after a light normalization, which
keeps scoring auditable. Matching precedence: candidate common names,
candidate scientific names, then any common name in the knowledge base
(models sometimes answer with a correct species outside the candidates).
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

from .errors import DataIntegrityError
from .knowledge import KnowledgeBase
from .providers import (
    CANDIDATE_BLOCK_END,
    CANDIDATE_BLOCK_START,
    GenerationProvider,
    call_with_retry,
)

EXACT = "exact"
SCIENTIFIC = "scientific"
UNRESOLVED = "unresolved"

DEFAULT_PROMPT_TEMPLATE = (
    "Identify the species shown in the image. "
    "Pick exactly one species name from the candidates below.\n"
    "\n"
    f"{CANDIDATE_BLOCK_START}\n"
    "{candidate_block}\n"
    "\n"
    f"{CANDIDATE_BLOCK_END}"
)

DIRECT_PROMPT_TEMPLATE = (
    "Identify the species shown in the image. "
    f"{CANDIDATE_BLOCK_END}"
)


@dataclass(frozen=True)
class CandidateSummary:
    species_id: str
    common_name: str
    text: str


@dataclass(frozen=True)
class PromptBundle:
    query_id: str
    image_ref: str
    candidate_summaries: tuple[CandidateSummary, ...]
    rendered_prompt: str


@dataclass(frozen=True)
class Prediction:
    query_id: str
    raw_text: str
    resolved_species: str | None
    resolution: str

    def __post_init__(self):
        if (self.resolved_species is None) != (self.resolution == UNRESOLVED):
            raise DataIntegrityError(
                f"prediction for {self.query_id!r}: resolved_species must be present "
                f"iff resolution is not {UNRESOLVED!r}"
            )


def normalize_name(text: str) -> str:
    """Lowercase, trim, strip surrounding punctuation, collapse whitespace."""
    stripped = text.strip().strip(string.punctuation + "‘’“”")
    return " ".join(stripped.split()).lower()


def assemble_prompt(
    query_id: str,
    image_ref: str,
    summaries: Sequence[CandidateSummary],
    template: str = DEFAULT_PROMPT_TEMPLATE,
) -> PromptBundle:
    """Render the candidate prompt; byte-identical for identical input."""
    if not summaries:
        raise DataIntegrityError(f"query {query_id!r}: no candidate summaries to assemble")
    names = [c.common_name for c in summaries]
    if len(set(names)) != len(names):
        raise DataIntegrityError(
            f"query {query_id!r}: duplicate common names in candidate block: {names}"
        )
    block = "\n".join(
        f"{c.common_name}: {c.text}" if c.text else c.common_name for c in summaries
    )
    rendered = template.format(candidate_block=block)
    return PromptBundle(
        query_id=query_id,
        image_ref=image_ref,
        candidate_summaries=tuple(summaries),
        rendered_prompt=rendered,
    )


def resolve_prediction(
    query_id: str,
    raw_text: str,
    candidate_species: Sequence[str],
    kb: KnowledgeBase,
) -> Prediction:
    """Deterministically map free text onto a canonical species, or mark it
    unresolved (which evaluation counts as incorrect)."""
    if not raw_text:
        raise DataIntegrityError(f"query {query_id!r}: empty raw_text cannot be resolved")
    answer = normalize_name(raw_text)

    for species_id in candidate_species:
        if normalize_name(kb.get(species_id).common_name) == answer:
            return Prediction(query_id, raw_text, species_id, EXACT)
    for species_id in candidate_species:
        sci = kb.get(species_id).scientific_name
        if sci and normalize_name(sci) == answer:
            return Prediction(query_id, raw_text, species_id, SCIENTIFIC)
    for record in kb:
        if normalize_name(record.common_name) == answer:
            return Prediction(query_id, raw_text, record.species_id, EXACT)
    return Prediction(query_id, raw_text, None, UNRESOLVED)


def classify(
    query_id: str,
    image_ref: str,
    summaries: Sequence[tuple[str, str]],
    provider: GenerationProvider,
    kb: KnowledgeBase,
    template: str = DEFAULT_PROMPT_TEMPLATE,
    max_tokens: int = 64,
    max_attempts: int = 3,
) -> Prediction:
    """Prompt assembly -> provider call -> answer resolution for one query."""
    candidates = tuple(
        CandidateSummary(species_id, kb.get(species_id).common_name, text)
        for species_id, text in summaries
    )
    bundle = assemble_prompt(query_id, image_ref, candidates, template)
    raw = call_with_retry(
        provider,
        {"prompt": bundle.rendered_prompt, "image_ref": image_ref, "max_tokens": max_tokens},
        max_attempts=max_attempts,
    )
    return resolve_prediction(query_id, raw, [c.species_id for c in candidates], kb)


def classify_direct(
    query_id: str,
    image_ref: str,
    provider: GenerationProvider,
    kb: KnowledgeBase,
    max_tokens: int = 64,
    max_attempts: int = 3,
) -> Prediction:
    """Baseline mode: ask for the species with no retrieved context."""
    raw = call_with_retry(
        provider,
        {"prompt": DIRECT_PROMPT_TEMPLATE, "image_ref": image_ref, "max_tokens": max_tokens},
        max_attempts=max_attempts,
    )
    return resolve_prediction(query_id, raw, [], kb)
