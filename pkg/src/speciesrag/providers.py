"""Text/LMM generation provider contract and built-in stubs.

Wire contract (field names are fixed regardless of transport):
    request:  {"prompt": str, "max_tokens": int} plus optional "image_ref"
    response: {"text": str}

Stubs cover testing and CI: echo (first N words of the prompt), fixed
(constant text), and keyword-oracle (answers with the candidate whose
listed description contains the query's implanted keyword).
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Protocol

from .errors import ConfigError, ProviderError

PROVIDER_ENDPOINT_ENV = "SPECIESRAG_PROVIDER_ENDPOINT"

# Sentinels used by the prompt renderer; the keyword-oracle stub parses the
# candidate block between them.
CANDIDATE_BLOCK_START = "Candidates:"
CANDIDATE_BLOCK_END = "Answer with the species name only."


class GenerationProvider(Protocol):
    def generate(self, request: Mapping) -> dict: ...


def call_with_retry(provider: GenerationProvider, request: Mapping, max_attempts: int = 3) -> str:
    """Call a provider, retrying transient failures; returns response text.

    An empty response is an error (never silently accepted as content).
    """
    last_exc: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        try:
            response = provider.generate(request)
        except ProviderError:
            raise
        except Exception as exc:
            last_exc = exc
            continue
        text = response.get("text")
        if not isinstance(text, str):
            raise ProviderError(f"provider response missing 'text': {response!r}", attempts=attempt)
        if not text.strip():
            raise ProviderError("provider returned empty text", attempts=attempt)
        return text
    raise ProviderError(f"provider failed: {last_exc}", attempts=max_attempts)


class EchoProvider:
    """Returns the first n_words words of the prompt."""

    def __init__(self, n_words: int = 50):
        self.n_words = n_words

    def generate(self, request: Mapping) -> dict:
        words = str(request["prompt"]).split()
        return {"text": " ".join(words[: self.n_words])}


class FixedProvider:
    def __init__(self, text: str):
        self.text = text

    def generate(self, request: Mapping) -> dict:
        return {"text": self.text}


class FlakyProvider:
    """Fails the first n calls, then delegates; exercises the retry path."""

    def __init__(self, inner: GenerationProvider, failures: int):
        self.inner = inner
        self.remaining = failures
        self.calls = 0

    def generate(self, request: Mapping) -> dict:
        self.calls += 1
        if self.remaining > 0:
            self.remaining -= 1
            raise RuntimeError("simulated transient failure")
        return self.inner.generate(request)


def parse_candidate_block(prompt: str) -> list[tuple[str, str]]:
    """Extract (name, text) pairs from a rendered candidate block."""
    lines = prompt.splitlines()
    try:
        start = lines.index(CANDIDATE_BLOCK_START) + 1
    except ValueError:
        return []
    out = []
    for line in lines[start:]:
        if not line.strip() or line.strip() == CANDIDATE_BLOCK_END:
            break
        name, sep, text = line.partition(": ")
        if sep:
            out.append((name, text))
        else:
            out.append((line, ""))
    return out


class KeywordOracleProvider:
    """Answers with the candidate whose listed text contains the query's keyword.

    truth maps query id (passed as the opaque image_ref) to the keyword to
    look for. Queries whose keyword survives into the candidate block are
    answered with that candidate's name; everything else gets an
    unresolvable sentinel, so end-to-end accuracy equals candidate-set
    recall of the true species.
    """

    MISS = "no confident identification"

    def __init__(self, truth: Mapping[str, str]):
        self.truth = dict(truth)

    @classmethod
    def from_manifest(cls, path: str | Path) -> "KeywordOracleProvider":
        truth = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                truth[obj["query_id"]] = keyword_for(obj["ground_truth_species"])
        return cls(truth)

    def generate(self, request: Mapping) -> dict:
        query_id = request.get("image_ref")
        keyword = self.truth.get(str(query_id))
        if keyword is None:
            return {"text": self.MISS}
        for name, text in parse_candidate_block(str(request["prompt"])):
            if keyword in text:
                return {"text": name}
        return {"text": self.MISS}


def keyword_for(species_id: str) -> str:
    """Unique marker implanted into synthetic summaries for oracle stubs."""
    return f"KEY_{species_id}"


class HttpProvider:
    """POSTs the request JSON to an endpoint returning {"text": ...}."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, request: Mapping) -> dict:
        import requests

        try:
            resp = requests.post(self.endpoint, json=dict(request), timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except Exception as exc:
            raise RuntimeError(f"provider endpoint {self.endpoint}: {exc}") from exc


def build_provider(spec: str, truth: Mapping[str, str] | None = None) -> GenerationProvider:
    """Construct a provider from a CLI spec string.

    Forms: "stub:echo[:N]", "stub:fixed:<text>", "stub:keyword-oracle[:manifest.ndjson]",
    "http:<url>". The endpoint env var overrides the http URL.
    """
    parts = spec.split(":", 2)
    if parts[0] == "stub":
        if len(parts) < 2:
            raise ConfigError(f"stub provider needs a mode: {spec!r}")
        mode = parts[1]
        arg = parts[2] if len(parts) > 2 else None
        if mode == "echo":
            return EchoProvider(int(arg) if arg else 50)
        if mode == "fixed":
            return FixedProvider(arg or "unknown")
        if mode == "keyword-oracle":
            if arg:
                return KeywordOracleProvider.from_manifest(arg)
            if truth is None:
                raise ConfigError("keyword-oracle stub needs a query manifest")
            return KeywordOracleProvider({q: keyword_for(s) for q, s in truth.items()})
        raise ConfigError(f"unknown stub mode {mode!r}")
    if parts[0] == "http":
        endpoint = os.environ.get(PROVIDER_ENDPOINT_ENV) or spec.partition(":")[2]
        if not endpoint:
            raise ConfigError("http provider needs an endpoint")
        return HttpProvider(endpoint)
    raise ConfigError(f"unknown provider spec {spec!r}")
