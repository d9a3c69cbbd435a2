"""Reading long-term memory back into working memory.

Scorers: rule-based recency, sparse BM25, dense cosine relevance over
embeddings, and a composite of recency, importance and relevance in the
style of Generative Agents. Every scorer produces one float per record;
``retrieve`` ranks by (score desc, id asc) and marks the winners as accessed.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from coala.errors import DimensionMismatch, EmptyQuery, NegativeElapsed, ParseError, ZeroVector
from coala.lm.backends import CompletionRequest, GenerativeBackend
from coala.lm.prompts import render
from coala.memory import AgentMemory

SCORERS = ("recency", "bm25", "dense", "composite")
IMPORTANCE_TEMPLATE = (
    "On the scale of 1 to 10, where 1 is purely mundane and 10 is extremely poignant, "
    "rate the likely poignancy of the following memory.\nMemory: {content}\nRating:"
)
_LEADING_INT = re.compile(r"^\s*(\d+)")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class HashedBagOfWords:
    """Deterministic offline embedder: term counts hashed into `dim` buckets."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "big") % self.dim

    def __call__(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim)
        for tok in tokenize(text):
            v[self.bucket(tok)] += 1.0
        return v


DEFAULT_EMBEDDER = HashedBagOfWords()


def recency_score(now: int, last_access: int, decay: float) -> float:
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must lie in (0, 1]")
    elapsed = now - last_access
    if elapsed < 0:
        raise NegativeElapsed(f"now={now} precedes last_access={last_access}")
    return decay**elapsed


def relevance_score(query_vector: Sequence[float], record_vector: Sequence[float]) -> float:
    q = np.asarray(query_vector, dtype=float)
    r = np.asarray(record_vector, dtype=float)
    if q.shape != r.shape:
        raise DimensionMismatch(f"{q.shape} vs {r.shape}")
    nq, nr = float(np.linalg.norm(q)), float(np.linalg.norm(r))
    if nq == 0.0 or nr == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(q, r) / (nq * nr), -1.0, 1.0))


def parse_rating(text: str) -> float:
    m = _LEADING_INT.match(text)
    if m is None or not 1 <= int(m.group(1)) <= 10:
        raise ParseError("expected a leading integer rating in 1..10", text)
    return int(m.group(1)) / 10


def importance_score(backend: GenerativeBackend, content: str, template: str = IMPORTANCE_TEMPLATE) -> float:
    completion = backend.sample(CompletionRequest(render(template, {"content": content}), temperature=0.0))
    return parse_rating(completion)


@dataclass(frozen=True)
class CorpusStats:
    n_docs: int
    avgdl: float
    df: Mapping[str, int]

    @classmethod
    def from_documents(cls, docs: Sequence[Sequence[str]]) -> "CorpusStats":
        df: Counter[str] = Counter()
        for d in docs:
            df.update(set(d))
        total = sum(len(d) for d in docs)
        return cls(len(docs), total / len(docs) if docs else 0.0, dict(df))

    def idf(self, term: str) -> float:
        # the +1 inside the log keeps idf (and scores) non-negative
        n = self.df.get(term, 0)
        return math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0)


def bm25_score(
    stats: CorpusStats,
    query_terms: Sequence[str],
    document: Sequence[str],
    k1: float = 1.5,
    b: float = 0.75,
) -> float:
    terms = list(dict.fromkeys(query_terms))
    if not terms:
        raise EmptyQuery("BM25 needs at least one query term")
    if not document or stats.avgdl == 0:
        return 0.0
    tf = Counter(document)
    norm = k1 * (1.0 - b + b * len(document) / stats.avgdl)
    total = 0.0
    for t in terms:
        f = tf.get(t, 0)
        if f:
            total += stats.idf(t) * f * (k1 + 1.0) / (f + norm)
    return total


def _minmax(values: Sequence[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def composite_scores(components: Sequence[tuple[float, float, float]], weights: Sequence[float]) -> list[float]:
    """Weighted mean of min-max normalized (recency, importance, relevance).

    Normalization runs across the candidate set; a component on which every
    candidate agrees normalizes to 1.0.
    """
    if len(weights) != 3 or any(w < 0 for w in weights) or not any(weights):
        raise ValueError("weights must be three non-negative numbers, not all zero")
    if not components:
        return []
    cols = [_minmax([c[i] for c in components]) for i in range(3)]
    total = math.fsum(weights)
    return [math.fsum(weights[i] * cols[i][j] for i in range(3)) / total for j in range(len(components))]


@dataclass(frozen=True)
class ScorerConfig:
    scorer: str = "composite"
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    decay: float = 0.995
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ValueError(f"scorer must be one of {SCORERS}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScorerConfig":
        allowed = {"scorer", "weights", "decay", "k1", "b"}
        extra = set(doc) - allowed
        if extra:
            raise ValueError(f"unknown scorer keys: {sorted(extra)}")
        return cls(**doc)


@dataclass(frozen=True)
class Query:
    text: str
    k: int = 5
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    kinds: tuple[str, ...] | None = None
    since: int | None = None
    until: int | None = None
    now: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass(frozen=True)
class ScoredRecord:
    id: int
    score: float
    components: Mapping[str, float] | None = None


def _time_of(rec) -> int:
    return getattr(rec, "timestamp", getattr(rec, "created", rec.last_access))


def candidates(records: Sequence, query: Query) -> list:
    """Records eligible for a query: not redacted, passing kind and time filters."""
    out = []
    for r in records:
        if r.redacted or not r.content.strip():
            continue
        if query.kinds is not None and getattr(r, "kind", None) not in query.kinds:
            continue
        t = _time_of(r)
        if query.since is not None and t < query.since:
            continue
        if query.until is not None and t > query.until:
            continue
        out.append(r)
    return out


def _vector(rec, embedder: Callable[[str], np.ndarray]) -> np.ndarray:
    emb = getattr(rec, "embedding", None)
    return np.asarray(emb, dtype=float) if emb is not None else embedder(rec.content)


def score_records(
    records: Sequence,
    query: Query,
    *,
    backend: GenerativeBackend | None = None,
    embedder: Callable[[str], np.ndarray] = DEFAULT_EMBEDDER,
) -> list[ScoredRecord]:
    """One ScoredRecord per input record, in input order (no ranking)."""
    if not records:
        return []
    cfg = query.scorer
    now = query.now if query.now is not None else max(r.last_access for r in records)
    if cfg.scorer == "recency":
        return [ScoredRecord(r.id, recency_score(now, r.last_access, cfg.decay)) for r in records]
    if cfg.scorer == "bm25":
        docs = [tokenize(r.content) for r in records]
        stats = CorpusStats.from_documents(docs)
        q = tokenize(query.text)
        return [ScoredRecord(r.id, bm25_score(stats, q, d, cfg.k1, cfg.b)) for r, d in zip(records, docs)]
    qv = embedder(query.text)
    if not qv.any():
        raise EmptyQuery("dense retrieval needs a non-empty query")
    rel = [relevance_score(qv, _vector(r, embedder)) for r in records]
    if cfg.scorer == "dense":
        return [ScoredRecord(r.id, s) for r, s in zip(records, rel)]
    rec = [recency_score(now, r.last_access, cfg.decay) for r in records]
    imp = [_importance(r, backend) for r in records]
    comp = composite_scores(list(zip(rec, imp, rel)), cfg.weights)
    return [
        ScoredRecord(r.id, c, {"recency": a, "importance": i, "relevance": s})
        for r, c, a, i, s in zip(records, comp, rec, imp, rel)
    ]


def _importance(rec, backend: GenerativeBackend | None) -> float:
    value = getattr(rec, "importance", None)
    if value is not None:
        return value
    if backend is None or not hasattr(rec, "importance"):
        return 0.0
    rec.importance = importance_score(backend, rec.content)
    return rec.importance


def rank(scored: Sequence[ScoredRecord], k: int) -> list[ScoredRecord]:
    return heapq.nsmallest(k, scored, key=lambda s: (-s.score, s.id))


def retrieve(
    memory: AgentMemory,
    query: Query,
    store: str = "episode",
    *,
    backend: GenerativeBackend | None = None,
    embedder: Callable[[str], np.ndarray] = DEFAULT_EMBEDDER,
) -> list[ScoredRecord]:
    """Top-k records of one store; returned records get last_access = query time."""
    pool = candidates(memory.records(store), query)
    if not pool:
        return []
    scored = score_records(pool, query, backend=backend, embedder=embedder)
    top = rank(scored, query.k)
    now = query.now if query.now is not None else max(r.last_access for r in pool)
    for s in top:
        memory.touch(store, s.id, now)
    return top
