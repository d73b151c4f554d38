"""Embedding storage: validation, normalization, and the on-disk formats.

Vectors are L2-normalized on load so that ensemble averages over encoders
with different native scales are well-posed and every similarity lands in
[-1, 1]. Canonical in-memory values are float64 but always exactly
representable in float32, which keeps the binary format round-trip
bitwise lossless.

Binary format (all integers little-endian):
    magic "VREB" (4 bytes)
    format version u16 = 1
    encoder_id: u16 length + UTF-8 bytes
    dim: u32
    count: u64
    count records of [item_id: u16 length + UTF-8 bytes][dim x f32]

A line-delimited text alternative {"item_id": ..., "vector": [...]} is
accepted by load with identical validation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DataIntegrityError,
    DimMismatchError,
    DuplicateIdError,
    EmbeddingFormatError,
    MissingEmbeddingError,
    NonFiniteVectorError,
)

MAGIC = b"VREB"
FORMAT_VERSION = 1

# A unit float64 vector snapped to the float32 grid keeps its norm within
# ~2^-24 of 1; anything inside this band is treated as already normalized
# so normalization is a bitwise fixed point.
_UNIT_SKIP_TOL = 2e-7

CROSS_MODAL = "cross_modal"
INTRA_MODAL = "intra_modal"


@dataclass(frozen=True)
class EncoderProfile:
    encoder_id: str
    dim: int
    role: str = CROSS_MODAL

    def __post_init__(self):
        if not self.encoder_id:
            raise DataIntegrityError("encoder_id must be non-empty")
        if self.dim < 1:
            raise DataIntegrityError(f"encoder {self.encoder_id!r}: dim must be >= 1")
        if self.role not in (CROSS_MODAL, INTRA_MODAL):
            raise DataIntegrityError(f"encoder {self.encoder_id!r}: unknown role {self.role!r}")


def _snap(v: np.ndarray) -> np.ndarray:
    return v.astype(np.float32).astype(np.float64)


def normalize(v: np.ndarray, item_id: str = "<vector>") -> np.ndarray:
    """L2-normalize onto the float32 grid; bitwise idempotent."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteVectorError(f"non-finite component in {item_id!r}")
    u = _snap(v)
    n = float(np.linalg.norm(u))
    if abs(n - 1.0) <= _UNIT_SKIP_TOL:
        return u
    if n == 0.0:
        raise DataIntegrityError(f"zero vector for {item_id!r} cannot be normalized")
    return _snap(u / n)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of unit vectors; symmetric, bounded by 1 + 1e-6."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimMismatchError(f"cosine dim mismatch: {u.shape} vs {v.shape}")
    return float(u @ v)


@dataclass
class StoreSegment:
    """Validated, normalized vectors for one encoder."""

    encoder_id: str
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, item_id: str, vector: np.ndarray) -> None:
        if item_id in self.vectors:
            raise DuplicateIdError(
                f"duplicate item_id {item_id!r} for encoder {self.encoder_id!r}"
            )
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimMismatchError(
                f"{item_id!r}: expected dim {self.dim}, got {vector.shape[0] if vector.ndim == 1 else vector.shape}"
            )
        self.vectors[item_id] = normalize(vector, item_id)

    def __len__(self) -> int:
        return len(self.vectors)

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.vectors.items())


class EmbeddingStore:
    """Per-encoder item->vector maps; write-once then immutable by convention."""

    def __init__(self, profiles: Iterable[EncoderProfile] = ()):
        self.profiles: dict[str, EncoderProfile] = {}
        self.segments: dict[str, StoreSegment] = {}
        for profile in profiles:
            self.register(profile)

    def register(self, profile: EncoderProfile) -> None:
        if profile.encoder_id in self.profiles:
            if self.profiles[profile.encoder_id] != profile:
                raise DataIntegrityError(
                    f"conflicting profiles for encoder {profile.encoder_id!r}"
                )
            return
        self.profiles[profile.encoder_id] = profile
        self.segments[profile.encoder_id] = StoreSegment(profile.encoder_id, profile.dim)

    def profile(self, encoder_id: str) -> EncoderProfile:
        try:
            return self.profiles[encoder_id]
        except KeyError:
            raise DataIntegrityError(f"unknown encoder {encoder_id!r}") from None

    def segment(self, encoder_id: str) -> StoreSegment:
        self.profile(encoder_id)
        return self.segments[encoder_id]

    def get(self, encoder_id: str, item_id: str) -> np.ndarray:
        seg = self.segment(encoder_id)
        vec = seg.vectors.get(item_id)
        if vec is None:
            raise MissingEmbeddingError(encoder_id, item_id)
        return vec

    def has(self, encoder_id: str, item_id: str) -> bool:
        return item_id in self.segment(encoder_id).vectors

    def matrix(self, encoder_id: str, item_ids: list[str]) -> np.ndarray:
        """Stack vectors in item order; missing ids are a hard error."""
        seg = self.segment(encoder_id)
        rows = []
        for item_id in item_ids:
            vec = seg.vectors.get(item_id)
            if vec is None:
                raise MissingEmbeddingError(encoder_id, item_id)
            rows.append(vec)
        if not rows:
            return np.empty((0, seg.dim), dtype=np.float64)
        return np.stack(rows)

    def load(self, path: str | Path, profile: EncoderProfile) -> int:
        """Load a file into the encoder's segment; returns items loaded.

        Duplicate item_ids across files for the same encoder are an error,
        not last-writer-wins.
        """
        self.register(profile)
        segment = self.segments[profile.encoder_id]
        count = 0
        for item_id, vector in _read_rows(path, profile):
            segment.add(item_id, vector)
            count += 1
        return count


def _read_rows(path: str | Path, profile: EncoderProfile) -> Iterator[tuple[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise EmbeddingFormatError(f"embedding file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if path.suffix in (".ndjson", ".jsonl", ".json"):
        yield from _read_text(path, profile)
    elif head == MAGIC or path.suffix == ".vreb":
        yield from _read_binary(path, profile)
    else:
        yield from _read_text(path, profile)


def _read_exact(fh, n: int, what: str, path: Path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise EmbeddingFormatError(f"{path}: truncated file while reading {what}")
    return data


def _read_binary(path: Path, profile: EncoderProfile) -> Iterator[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic", path)
        if magic != MAGIC:
            raise EmbeddingFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version", path))
        if version != FORMAT_VERSION:
            raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
        (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "encoder_id length", path))
        encoder_id = _read_exact(fh, id_len, "encoder_id", path).decode("utf-8")
        if encoder_id != profile.encoder_id:
            raise EmbeddingFormatError(
                f"{path}: file is for encoder {encoder_id!r}, expected {profile.encoder_id!r}"
            )
        (dim,) = struct.unpack("<I", _read_exact(fh, 4, "dim", path))
        if dim != profile.dim:
            raise DimMismatchError(
                f"{path}: file dim {dim} does not match profile dim {profile.dim}"
            )
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "count", path))
        for i in range(count):
            (item_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i} id length", path))
            item_id = _read_exact(fh, item_len, f"record {i} id", path).decode("utf-8")
            raw = _read_exact(fh, 4 * dim, f"record {i} ({item_id!r}) vector", path)
            vector = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            yield item_id, vector
        trailing = fh.read(1)
        if trailing:
            raise EmbeddingFormatError(f"{path}: trailing bytes after {count} records")


def _read_text(path: Path, profile: EncoderProfile) -> Iterator[tuple[str, np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: bad JSON: {exc}") from exc
            if "item_id" not in obj or "vector" not in obj:
                raise EmbeddingFormatError(f"{path}:{lineno}: need item_id and vector fields")
            item_id = str(obj["item_id"])
            vector = np.asarray(obj["vector"], dtype=np.float64)
            if vector.ndim != 1 or vector.shape[0] != profile.dim:
                raise DimMismatchError(
                    f"{item_id!r}: expected dim {profile.dim}, got {vector.shape}"
                )
            yield item_id, vector


def write_embeddings(segment: StoreSegment, path: str | Path) -> None:
    """Write a segment in the binary format; read-back is bit-exact."""
    path = Path(path)
    encoder_bytes = segment.encoder_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<H", len(encoder_bytes)))
        fh.write(encoder_bytes)
        fh.write(struct.pack("<I", segment.dim))
        fh.write(struct.pack("<Q", len(segment.vectors)))
        for item_id, vector in segment.items():
            id_bytes = item_id.encode("utf-8")
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(vector.astype("<f4").tobytes())


def write_embeddings_text(segment: StoreSegment, path: str | Path) -> None:
    """Line-delimited text alternative with the same content."""
    with open(path, "w", encoding="utf-8") as fh:
        for item_id, vector in segment.items():
            obj = {"item_id": item_id, "vector": [float(x) for x in vector]}
            fh.write(json.dumps(obj) + "\n")


def file_size_for(encoder_id: str, count: int, dim: int, id_len: int) -> int:
    """Expected binary file size for uniform-length item ids."""
    header = 4 + 2 + 2 + len(encoder_id.encode("utf-8")) + 4 + 8
    return header + count * (2 + id_len + 4 * dim)
