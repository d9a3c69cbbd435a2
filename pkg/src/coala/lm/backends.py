"""Generative backends: anything that can sample a completion for a prompt.

The kernel treats the language model as a stochastic production system
``X ~> X Y``: given a prompt it samples a continuation, and some backends can
also report ``log P(Y | X)`` for a given continuation. Token-level modelling
is the backend's business and is not reproduced here.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import random
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence, runtime_checkable

from coala.errors import BackendUnavailable, CapabilityError, NoCompletion, UnknownContinuation

logger = logging.getLogger(__name__)

BACKEND_URL_ENV = "COALA_BACKEND_URL"


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 256
    stop: tuple[str, ...] = ()
    # Distinguishes repeated draws for the same prompt (sample-n proposals).
    draw: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        object.__setattr__(self, "stop", tuple(self.stop))


@dataclass(frozen=True)
class Capabilities:
    can_score: bool = False


@runtime_checkable
class GenerativeBackend(Protocol):
    capabilities: Capabilities

    def sample(self, request: CompletionRequest) -> str: ...

    def score(self, prompt: str, continuation: str) -> float: ...


def apply_stop(text: str, stop: Sequence[str]) -> str:
    cut = len(text)
    for s in stop:
        if s:
            i = text.find(s)
            if i >= 0:
                cut = min(cut, i)
    return text[:cut]


def sample(backend: GenerativeBackend, request: CompletionRequest) -> str:
    return backend.sample(request)


def score(backend: GenerativeBackend, prompt: str, continuation: str) -> float:
    if not backend.capabilities.can_score:
        raise CapabilityError(f"{type(backend).__name__} cannot score continuations")
    return backend.score(prompt, continuation)


@dataclass(frozen=True)
class ScriptEntry:
    match: str
    completions: tuple[tuple[str, float], ...]
    prefix: bool = False

    def __post_init__(self):
        if not self.completions:
            raise ValueError(f"entry {self.match!r} has no completions")
        for text, weight in self.completions:
            if not weight > 0:
                raise ValueError(f"entry {self.match!r}: weight for {text!r} must be positive")


def _derived_seed(seed: int, prompt: str, draw: int) -> int:
    h = hashlib.sha256(f"{seed}\x00{draw}\x00{prompt}".encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


class ScriptedBackend:
    """Table-driven stand-in for a language model.

    Lookup tries an exact match first, then the longest matching prefix
    entry. At temperature 0 the heaviest completion wins (ties go to table
    order); above 0 completions are drawn in proportion to weight from a
    generator seeded by (seed, draw, prompt), so results do not depend on the
    order in which calls are made.
    """

    capabilities = Capabilities(can_score=True)

    def __init__(self, entries: Sequence[ScriptEntry] = (), seed: int = 0, fallback: str | None = None):
        self.entries = tuple(entries)
        self.seed = seed
        self.fallback = fallback
        self._exact: dict[str, ScriptEntry] = {}
        for e in self.entries:
            if not e.prefix:
                self._exact.setdefault(e.match, e)
        # Stable sort keeps table order among equal-length prefixes.
        self._prefixes = sorted((e for e in self.entries if e.prefix), key=lambda e: -len(e.match))

    @classmethod
    def from_mapping(cls, table: Mapping[str, Sequence[tuple[str, float]]], **kw) -> "ScriptedBackend":
        return cls([ScriptEntry(k, tuple((t, float(w)) for t, w in v)) for k, v in table.items()], **kw)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any], seed: int = 0) -> "ScriptedBackend":
        entries = []
        for i, e in enumerate(doc.get("entries", [])):
            try:
                comps = tuple((str(t), float(w)) for t, w in e["completions"])
                entries.append(ScriptEntry(e["match"], comps, bool(e.get("prefix", False))))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"entries[{i}]: {exc}") from None
        return cls(entries, seed=seed, fallback=doc.get("fallback"))

    @classmethod
    def load(cls, path: str | Path, seed: int = 0) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), seed=seed)

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            "entries": [
                {"match": e.match, "prefix": e.prefix, "completions": [list(c) for c in e.completions]}
                for e in self.entries
            ]
        }
        if self.fallback is not None:
            doc["fallback"] = self.fallback
        return doc

    def lookup(self, prompt: str) -> ScriptEntry | None:
        entry = self._exact.get(prompt)
        if entry is not None:
            return entry
        for e in self._prefixes:
            if prompt.startswith(e.match):
                return e
        return None

    def sample(self, request: CompletionRequest) -> str:
        entry = self.lookup(request.prompt)
        if entry is None:
            if self.fallback is None:
                raise NoCompletion(f"no scripted completion for prompt {request.prompt[:80]!r}")
            return apply_stop(self.fallback, request.stop)
        texts = [t for t, _ in entry.completions]
        weights = [w for _, w in entry.completions]
        if request.temperature == 0:
            best = max(range(len(weights)), key=lambda i: (weights[i], -i))
            text = texts[best]
        else:
            rng = random.Random(_derived_seed(self.seed, request.prompt, request.draw))
            text = rng.choices(texts, weights=weights, k=1)[0]
        return apply_stop(text, request.stop)

    def score(self, prompt: str, continuation: str) -> float:
        entry = self.lookup(prompt)
        if entry is None:
            raise UnknownContinuation(f"no scripted entry for prompt {prompt[:80]!r}")
        total = math.fsum(w for _, w in entry.completions)
        for text, weight in entry.completions:
            if text == continuation:
                return math.log(weight / total)
        raise UnknownContinuation(f"{continuation!r} is not a scripted continuation")


@dataclass
class RemoteBackend:
    """HTTP backend speaking ``POST /v1/complete``.

    No retries: a failed call raises BackendUnavailable and the decision
    cycle decides what to do about it.
    """

    url: str
    timeout: float = 60.0
    capabilities: Capabilities = field(default_factory=Capabilities)
    last_logprob: float | None = field(default=None, init=False)

    def __post_init__(self):
        self.url = os.environ.get(BACKEND_URL_ENV, self.url).rstrip("/")

    def complete(self, request: CompletionRequest) -> tuple[str, float | None]:
        body = json.dumps(
            {
                "prompt": request.prompt,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "stop": list(request.stop),
            }
        ).encode("utf-8")
        req = urllib.request.Request(
            self.url + "/v1/complete", data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                status = resp.status
                payload = resp.read()
        except urllib.error.HTTPError as exc:
            raise BackendUnavailable(f"{self.url}: HTTP {exc.code}") from exc
        except (urllib.error.URLError, OSError) as exc:
            raise BackendUnavailable(f"{self.url}: {exc}") from exc
        if status != 200:
            raise BackendUnavailable(f"{self.url}: HTTP {status}")
        try:
            doc = json.loads(payload)
            completion = doc["completion"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendUnavailable(f"{self.url}: malformed response") from exc
        if not isinstance(completion, str):
            raise BackendUnavailable(f"{self.url}: completion is not a string")
        logprob = doc.get("logprob")
        return apply_stop(completion, request.stop), (None if logprob is None else float(logprob))

    def sample(self, request: CompletionRequest) -> str:
        text, self.last_logprob = self.complete(request)
        return text

    def score(self, prompt: str, continuation: str) -> float:
        raise CapabilityError("the remote protocol only reports the log-probability of its own samples")


def backend_from_config(block: Mapping[str, Any], base_dir: Path | None = None, seed: int = 0) -> GenerativeBackend:
    """Build a backend from an agent-config ``backend`` block."""
    kind = block.get("type", "scripted")
    if kind == "scripted":
        if "table" in block:
            path = Path(block["table"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return ScriptedBackend.load(path, seed=block.get("seed", seed))
        return ScriptedBackend.from_dict(block.get("inline", {}), seed=block.get("seed", seed))
    if kind == "remote":
        return RemoteBackend(block.get("url", ""), timeout=float(block.get("timeout", 60.0)))
    raise ValueError(f"unknown backend type {kind!r}")
