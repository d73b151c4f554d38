"""Exception hierarchy shared across the package.

DataIntegrityError subclasses abort runs (CLI exit code 2); ProviderError
maps to exit code 3. Anything else is a usage/config problem (exit 1).
"""

from __future__ import annotations


class DataIntegrityError(Exception):
    """Corrupt, inconsistent, or missing data; never silently recovered."""


class DuplicateIdError(DataIntegrityError):
    pass


class MissingEmbeddingError(DataIntegrityError):
    def __init__(self, encoder_id: str, item_id: str):
        super().__init__(f"no embedding for item {item_id!r} under encoder {encoder_id!r}")
        self.encoder_id = encoder_id
        self.item_id = item_id


class DimMismatchError(DataIntegrityError):
    pass


class EmbeddingFormatError(DataIntegrityError):
    """Malformed embedding file: bad magic, truncation, bad counts."""


class NonFiniteVectorError(DataIntegrityError):
    pass


class ProviderError(Exception):
    """Text/LMM provider failed after the configured retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (attempts={attempts})")
        self.attempts = attempts


class ConfigError(Exception):
    """Invalid configuration or arguments (usage error)."""
