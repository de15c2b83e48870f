"""Top-K function retrieval by dot product of text embeddings.

The default embedder is a hashed bag of words: lowercase, split on
non-alphanumerics, count tokens into ``dim`` buckets, L2-normalize. Any other
deterministic fixed-dimension embedder can be swapped in, including
:class:`RemoteEmbedder`, which talks to an HTTP service and falls back to the
hashed embedder when the call fails.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import urllib.request
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .function_base import FunctionBase, FunctionSpec

log = logging.getLogger(__name__)

DEFAULT_DIM = 256
DEFAULT_K = 5

_TOKEN = re.compile(r"[a-z0-9]+")


class Embedder(Protocol):
    dim: int

    def __call__(self, text: str) -> np.ndarray: ...


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _bucket(token: str, dim: int) -> int:
    # stable across processes, unlike hash()
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashingEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        self.dim = dim
        self._cache: dict[str, int] = {}

    def __call__(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in tokenize(text):
            b = self._cache.get(tok)
            if b is None:
                b = self._cache[tok] = _bucket(tok, self.dim)
            vec[b] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


def embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    return HashingEmbedder(dim)(text)


class RemoteEmbedder:
    """Embedding service client.

    Request: ``POST <url>`` with JSON ``{"text": str, "dim": int}``.
    Response: JSON ``{"embedding": [float, ...]}`` of length ``dim``.
    Any transport error, malformed body, wrong length or non-finite component
    falls back to the hashed embedder with a logged warning.
    """

    def __init__(self, url: str, dim: int = DEFAULT_DIM, timeout: float = 5.0):
        self.url = url
        self.dim = dim
        self.timeout = timeout
        self._fallback = HashingEmbedder(dim)

    def __call__(self, text: str) -> np.ndarray:
        body = json.dumps({"text": text, "dim": self.dim}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
            vec = np.asarray(payload["embedding"], dtype=float)
            if vec.shape != (self.dim,) or not np.all(np.isfinite(vec)):
                raise ValueError(f"bad embedding shape {vec.shape} or non-finite values")
            return vec
        except Exception as exc:  # noqa: BLE001 - any failure means fallback
            log.warning("remote embedder at %s failed (%s); using hashed embedder", self.url, exc)
            return self._fallback(text)


@dataclass(frozen=True)
class RetrievalQuery:
    instructions: str
    state_summary: str = ""
    stage_hint: float | None = None

    def __post_init__(self) -> None:
        if not self.instructions.strip():
            raise ValueError("query instructions must be non-empty")

    def text(self) -> str:
        parts = [f"instructions: {self.instructions}"]
        if self.state_summary:
            parts.append(f"state: {self.state_summary}")
        if self.stage_hint is not None:
            parts.append(f"stage: {format_stage(self.stage_hint)}")
        return "\n".join(parts)


def format_stage(tag: float) -> str:
    return str(int(tag)) if float(tag).is_integer() else str(tag)


@dataclass(frozen=True)
class RankedCandidates:
    """Retrieved (name, score) pairs, best first.

    ``injected`` lists names appended by emergency handling after retrieval;
    the non-increasing score order holds for the retrieved prefix only.
    """

    items: tuple[tuple[str, float], ...]
    injected: tuple[str, ...] = ()

    def names(self) -> list[str]:
        return [n for n, _ in self.items]

    def __contains__(self, name: object) -> bool:
        return any(n == name for n, _ in self.items)

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> dict:
        return {"items": [[n, s] for n, s in self.items], "injected": list(self.injected)}


class DimensionMismatchError(ValueError):
    pass


def score_vectors(doc: np.ndarray, query: np.ndarray) -> float:
    if doc.shape != query.shape:
        raise DimensionMismatchError(f"embedding dimensions differ: {doc.shape} vs {query.shape}")
    return float(np.dot(doc, query))


def score(f: FunctionSpec, q: RetrievalQuery, embedder: Embedder | None = None) -> float:
    embedder = embedder or HashingEmbedder()
    return score_vectors(embedder(f.document()), embedder(q.text()))


def rank(scored: list[tuple[str, float]], k: int) -> tuple[tuple[str, float], ...]:
    """Highest score first, ties by name."""
    return tuple(sorted(scored, key=lambda item: (-item[1], item[0]))[:k])


class Retriever:
    """Caches document embeddings of one FunctionBase."""

    def __init__(self, base: FunctionBase, embedder: Embedder | None = None, k: int = DEFAULT_K):
        if len(base) == 0:
            raise ValueError("cannot retrieve from an empty function base")
        if k < 1:
            raise ValueError("K must be >= 1")
        self.base = base
        self.embedder = embedder or HashingEmbedder()
        self.k = k
        self._docs = {spec.name: self.embedder(spec.document()) for spec in base}

    @property
    def small_base(self) -> bool:
        # few enough functions that the whole base is the candidate list
        return len(self.base) <= self.k

    def score(self, spec: FunctionSpec, q: RetrievalQuery) -> float:
        if spec.name in self.base and self.base[spec.name] == spec:
            doc = self._docs[spec.name]
        else:
            doc = self.embedder(spec.document())
        return score_vectors(doc, self.embedder(q.text()))

    def top_k(self, q: RetrievalQuery, k: int | None = None) -> RankedCandidates:
        k = self.k if k is None else k
        if k < 1:
            raise ValueError("K must be >= 1")
        qv = self.embedder(q.text())
        scored = [(name, score_vectors(doc, qv)) for name, doc in self._docs.items()]
        return RankedCandidates(rank(scored, k))


def top_k(base: FunctionBase, q: RetrievalQuery, k: int = DEFAULT_K, embedder: Embedder | None = None) -> RankedCandidates:
    return Retriever(base, embedder, k).top_k(q)


def exp_scores(candidates: RankedCandidates) -> list[float]:
    """Unnormalized retrieval prior exp(score) for each candidate."""
    return [math.exp(s) for _, s in candidates.items]
