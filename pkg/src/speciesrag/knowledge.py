"""Species knowledge base: record ingestion, summary refinement, and chunking.

The knowledge base is immutable after ingestion and safe for concurrent
readers. Records without a usable description are kept but flagged out of
the retrieval corpora.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import ConfigError, DataIntegrityError, DuplicateIdError
from .providers import GenerationProvider, call_with_retry

MAX_ANCHORS = 3

RECORD_FIELDS = (
    "species_id",
    "common_name",
    "scientific_name",
    "genus",
    "raw_article",
    "summary",
    "refined_summary",
    "anchor_ids",
)


def word_split(text: str) -> list[str]:
    """Words are maximal runs of non-whitespace; punctuation stays attached."""
    return text.split()


def word_count(text: str) -> int:
    return len(word_split(text))


@dataclass(frozen=True)
class SpeciesRecord:
    species_id: str
    common_name: str
    scientific_name: str | None = None
    genus: str | None = None
    raw_article: str | None = None
    summary: str | None = None
    refined_summary: str | None = None
    anchor_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.species_id:
            raise DataIntegrityError("record with empty species_id")
        if not self.common_name:
            raise DataIntegrityError(f"record {self.species_id!r} has no common_name")
        if len(self.anchor_ids) > MAX_ANCHORS:
            raise DataIntegrityError(
                f"record {self.species_id!r} lists {len(self.anchor_ids)} anchors; max is {MAX_ANCHORS}"
            )

    @property
    def retrievable(self) -> bool:
        return bool(self.refined_summary and self.refined_summary.strip())

    def to_json(self) -> str:
        obj = {
            "species_id": self.species_id,
            "common_name": self.common_name,
            "scientific_name": self.scientific_name,
            "genus": self.genus,
            "raw_article": self.raw_article,
            "summary": self.summary,
            "refined_summary": self.refined_summary,
            "anchor_ids": list(self.anchor_ids),
        }
        return json.dumps(obj, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_obj(cls, obj: dict) -> "SpeciesRecord":
        unknown = set(obj) - set(RECORD_FIELDS)
        if unknown:
            raise DataIntegrityError(f"unknown record fields: {sorted(unknown)}")
        return cls(
            species_id=obj.get("species_id", ""),
            common_name=obj.get("common_name", ""),
            scientific_name=obj.get("scientific_name") or None,
            genus=obj.get("genus") or None,
            raw_article=obj.get("raw_article") or None,
            summary=obj.get("summary") or None,
            refined_summary=obj.get("refined_summary") or None,
            anchor_ids=tuple(obj.get("anchor_ids") or ()),
        )


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    species_id: str
    ordinal: int
    text: str
    word_count: int


@dataclass(frozen=True)
class ChunkConfig:
    max_chunk_words: int = 60
    overlap_words: int = 15

    def __post_init__(self):
        if self.max_chunk_words < 1:
            raise ConfigError(f"max_chunk_words must be >= 1, got {self.max_chunk_words}")
        if not (0 <= self.overlap_words < self.max_chunk_words):
            raise ConfigError(
                f"overlap_words must satisfy 0 <= overlap < max_chunk_words, "
                f"got overlap={self.overlap_words}, max={self.max_chunk_words}"
            )


class KnowledgeBase:
    """Immutable, id-keyed collection of species records."""

    def __init__(self, records: Iterable[SpeciesRecord]):
        self._records: dict[str, SpeciesRecord] = {}
        for rec in records:
            if rec.species_id in self._records:
                prev = self._records[rec.species_id]
                raise DuplicateIdError(
                    f"duplicate species_id {rec.species_id!r}: "
                    f"{prev.common_name!r} vs {rec.common_name!r}"
                )
            self._records[rec.species_id] = rec
        if not self._records:
            raise DataIntegrityError("knowledge base is empty")

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[SpeciesRecord]:
        return iter(self._records.values())

    def __contains__(self, species_id: str) -> bool:
        return species_id in self._records

    def get(self, species_id: str) -> SpeciesRecord:
        try:
            return self._records[species_id]
        except KeyError:
            raise DataIntegrityError(f"unknown species_id {species_id!r}") from None

    def species_ids(self) -> list[str]:
        return list(self._records)

    @property
    def flagged_ids(self) -> list[str]:
        """Species retained in the KB but excluded from retrieval corpora."""
        return [r.species_id for r in self if not r.retrievable]

    def retrievable_records(self) -> list[SpeciesRecord]:
        return [r for r in self if r.retrievable]

    def with_record(self, record: SpeciesRecord) -> "KnowledgeBase":
        records = dict(self._records)
        records[record.species_id] = record
        kb = object.__new__(KnowledgeBase)
        kb._records = records
        return kb


def ingest_records(source: Iterable[SpeciesRecord | dict]) -> KnowledgeBase:
    """Build a KnowledgeBase from a record stream; duplicates are a hard error."""
    records = []
    for item in source:
        records.append(item if isinstance(item, SpeciesRecord) else SpeciesRecord.from_obj(item))
    return KnowledgeBase(records)


def read_kb(path: str | Path) -> KnowledgeBase:
    """Read a line-delimited KB file (one JSON record per line, UTF-8)."""
    def gen():
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataIntegrityError(f"{path}:{lineno}: bad record JSON: {exc}") from exc
                yield SpeciesRecord.from_obj(obj)

    return ingest_records(gen())


def write_kb(kb: KnowledgeBase, path_or_fh: str | Path | IO[str]) -> None:
    if hasattr(path_or_fh, "write"):
        for rec in kb:
            path_or_fh.write(rec.to_json() + "\n")
        return
    with open(path_or_fh, "w", encoding="utf-8") as fh:
        for rec in kb:
            fh.write(rec.to_json() + "\n")


def chunk_words(words: list[str], cfg: ChunkConfig) -> list[list[str]]:
    """Deterministic sliding word windows.

    Step is max - overlap; the window that reaches the final word is the
    last chunk, so a text of <= max words yields exactly one chunk.
    """
    if not words:
        return []
    step = cfg.max_chunk_words - cfg.overlap_words
    out = []
    start = 0
    while True:
        end = min(start + cfg.max_chunk_words, len(words))
        out.append(words[start:end])
        if end == len(words):
            return out
        start += step


def chunk_record(record: SpeciesRecord, cfg: ChunkConfig) -> list[Chunk]:
    words = word_split(record.refined_summary or "")
    chunks = []
    for ordinal, window in enumerate(chunk_words(words, cfg)):
        text = " ".join(window)
        chunks.append(
            Chunk(
                chunk_id=f"{record.species_id}#{ordinal}",
                species_id=record.species_id,
                ordinal=ordinal,
                text=text,
                word_count=len(window),
            )
        )
    return chunks


def chunk_corpus(kb: KnowledgeBase, cfg: ChunkConfig | None = None) -> list[Chunk]:
    """Chunk every retrievable record; flagged records are skipped."""
    cfg = cfg or ChunkConfig()
    out: list[Chunk] = []
    for record in kb.retrievable_records():
        out.extend(chunk_record(record, cfg))
    return out


def names_only_corpus(kb: KnowledgeBase) -> list[Chunk]:
    """One chunk per species whose text is the species name.

    The scientific name is appended in parentheses when present. Used for
    the name-retrieval evaluation variant; flagged records still take part
    since a name needs no description.
    """
    out = []
    for record in kb:
        text = record.common_name
        if record.scientific_name:
            text = f"{record.common_name} ({record.scientific_name})"
        out.append(
            Chunk(
                chunk_id=f"{record.species_id}#0",
                species_id=record.species_id,
                ordinal=0,
                text=text,
                word_count=word_count(text),
            )
        )
    return out


# Two-stage refinement prompt templates. Stage 1 distills an article into a
# compact identification paragraph; stage 2 strips everything that is not a
# visual attribute.
DEFAULT_SUMMARIZE_TEMPLATE = (
    'Summarize the following information about the bird species "{species_name}" into a '
    "concise paragraph. Focus on the key physical characteristics that distinguish this "
    "species from other similar bird species. Highlight features like size, beak shape, "
    "plumage color patterns, wing shape, and any other unique traits. The summary should "
    "be useful for someone trying to identify the bird species from a photograph.\n\n"
    "{article}"
)

DEFAULT_REFINE_TEMPLATE = (
    "Given the following summary of a bird species, extract and refine only the visual "
    "attributes that describe its appearance. Focus on characteristics such as color "
    "patterns, beak shape, eye color, wing shape, tail length, size, markings, and other "
    "distinguishing physical features. Ensure the output is concise, well-structured, and "
    "contains only relevant physical descriptions.\n\n"
    "{summary}"
)


def _placeholders(template: str) -> set[str]:
    import string

    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


@dataclass(frozen=True)
class RefinementPromptSet:
    summarize_template: str = DEFAULT_SUMMARIZE_TEMPLATE
    refine_template: str = DEFAULT_REFINE_TEMPLATE

    def __post_init__(self):
        if _placeholders(self.summarize_template) != {"species_name", "article"}:
            raise ConfigError("summarize_template must use exactly {species_name} and {article}")
        if _placeholders(self.refine_template) != {"summary"}:
            raise ConfigError("refine_template must use exactly {summary}")


@dataclass
class RefinementTelemetry:
    """Word counts at each stage, aggregated race-free across workers."""

    rows: list[tuple[str, int, int, int]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, species_id: str, raw_words: int, summary_words: int, refined_words: int) -> None:
        with self._lock:
            self.rows.append((species_id, raw_words, summary_words, refined_words))

    def _mean(self, index: int) -> float:
        if not self.rows:
            return 0.0
        return sum(row[index] for row in self.rows) / len(self.rows)

    def means(self) -> tuple[float, float, float]:
        with self._lock:
            return (self._mean(1), self._mean(2), self._mean(3))

    def format_table(self) -> str:
        lines = [f"{'species':<24}{'raw':>8}{'summary':>10}{'refined':>10}"]
        with self._lock:
            rows = sorted(self.rows)
        for species_id, raw, summ, refined in rows:
            lines.append(f"{species_id:<24}{raw:>8}{summ:>10}{refined:>10}")
        raw_m, summ_m, ref_m = self.means()
        lines.append(f"{'mean':<24}{raw_m:>8.1f}{summ_m:>10.1f}{ref_m:>10.1f}")
        return "\n".join(lines)


def refine_summary(
    record: SpeciesRecord,
    provider: GenerationProvider,
    prompts: RefinementPromptSet | None = None,
    telemetry: RefinementTelemetry | None = None,
    max_tokens: int = 512,
    force: bool = False,
    max_attempts: int = 3,
) -> SpeciesRecord:
    """Run the two-stage refinement for one record.

    Idempotent by default: populated fields are never overwritten unless
    force is set (provider calls are expensive). Telemetry records the
    word counts of every stage actually present after the call.
    """
    prompts = prompts or RefinementPromptSet()

    summary = record.summary
    if force or not summary:
        if not record.raw_article:
            raise DataIntegrityError(f"record {record.species_id!r} has no raw_article to summarize")
        prompt = prompts.summarize_template.format(
            species_name=record.common_name, article=record.raw_article
        )
        summary = call_with_retry(
            provider, {"prompt": prompt, "max_tokens": max_tokens}, max_attempts=max_attempts
        )

    refined = record.refined_summary
    ran_stage2 = force or not refined
    if ran_stage2:
        prompt = prompts.refine_template.format(summary=summary)
        refined = call_with_retry(
            provider, {"prompt": prompt, "max_tokens": max_tokens}, max_attempts=max_attempts
        )

    updated = replace(record, summary=summary, refined_summary=refined)
    if telemetry is not None and (updated.summary != record.summary or ran_stage2):
        telemetry.add(
            updated.species_id,
            word_count(updated.raw_article or ""),
            word_count(updated.summary or ""),
            word_count(updated.refined_summary or ""),
        )
    return updated
