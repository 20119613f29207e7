"""Embedding providers and the cosine kernel used by topic and speaker scores."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import httpx
import numpy as np

from .errors import DimensionMismatch, EmptyUnit, ProviderUnavailable

log = logging.getLogger(__name__)

_UNIT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Unit-length embedding. ``values`` is a read-only float64 array."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-d vector")
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > _UNIT_TOL:
            raise ValueError(f"embedding is not unit length (norm={norm:.8f})")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __neg__(self) -> EmbeddingVector:
        return EmbeddingVector(-self.values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    __hash__ = None  # type: ignore[assignment]

    @classmethod
    def normalized(cls, raw: Sequence[float]) -> EmbeddingVector:
        arr = np.asarray(raw, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(arr / norm)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"{a.dim} != {b.dim}")
    # Sum of elementwise products is order-independent in a, b, so the
    # result is exactly symmetric (np.dot may reorder via BLAS).
    c = float(np.sum(a.values * b.values))
    # Rounding leaves v.v a few ulps under 1; identical and antipodal
    # vectors must score exactly +/-1.
    if abs(c) > 1.0 - 1e-9:
        if np.array_equal(a.values, b.values):
            return 1.0
        if np.array_equal(a.values, -b.values):
            return -1.0
    return min(1.0, max(-1.0, c))


def similarity_scaled(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity on a 0-100 scale, negatives clamped to 0."""
    return 100.0 * max(0.0, cosine(a, b))


class EmbeddingProvider:
    """Base class for embedding sources.

    Subclasses implement ``_compute(units)``; this class supplies input
    validation and a thread-safe cache keyed by ``(config_key, unit)``.
    """

    name: str = "provider"
    dim: int

    def __init__(self) -> None:
        self._cache: dict[tuple[str, str], EmbeddingVector] = {}
        self._lock = threading.Lock()

    @property
    def config_key(self) -> str:
        return self.name

    def _compute(self, units: list[str]) -> list[EmbeddingVector]:
        raise NotImplementedError

    def embed(self, unit: str) -> EmbeddingVector:
        return self.embed_many([unit])[0]

    def embed_many(self, units: Iterable[str]) -> list[EmbeddingVector]:
        units = list(units)
        for u in units:
            if not u or not u.strip():
                raise EmptyUnit("cannot embed an empty unit")
        key = self.config_key
        with self._lock:
            missing = [u for u in dict.fromkeys(units) if (key, u) not in self._cache]
        if missing:
            vectors = self._compute(missing)
            for vec in vectors:
                if vec.dim != self.dim:
                    raise DimensionMismatch(f"provider returned dim {vec.dim}, expected {self.dim}")
            with self._lock:
                for u, vec in zip(missing, vectors):
                    self._cache.setdefault((key, u), vec)
        with self._lock:
            return [self._cache[(key, u)] for u in units]

    def cache_size(self) -> int:
        with self._lock:
            return len(self._cache)


class HashEmbeddingProvider(EmbeddingProvider):
    """Deterministic offline provider.

    The unit's UTF-8 bytes (plus a seed) are hashed to seed a Gaussian draw,
    which is normalized. Identical strings map to identical vectors; distinct
    strings are close to orthogonal in high dimension.
    """

    name = "hash"

    def __init__(self, dim: int = 128, seed: int = 0) -> None:
        if dim <= 0:
            raise ValueError("dim must be positive")
        super().__init__()
        self.dim = dim
        self.seed = seed

    @property
    def config_key(self) -> str:
        return f"hash:{self.dim}:{self.seed}"

    def _vector(self, unit: str) -> EmbeddingVector:
        digest = hashlib.sha256(f"{self.seed}\x00{unit}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
        return EmbeddingVector.normalized(rng.standard_normal(self.dim))

    def _compute(self, units: list[str]) -> list[EmbeddingVector]:
        return [self._vector(u) for u in units]


class RemoteEmbeddingProvider(EmbeddingProvider):
    """Client for an OpenAI-style ``/embeddings`` endpoint.

    Request: ``{"model": ..., "input": [...]}``; response:
    ``{"data": [{"index": i, "embedding": [...]}, ...]}``. Vectors are
    renormalized on receipt. The bearer token comes from ``api_key`` or the
    ``CTRLSUM_EMBED_API_KEY`` environment variable.
    """

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        *,
        api_key: str | None = None,
        attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 120.0,
        batch_size: int = 256,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        super().__init__()
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.attempts = attempts
        self.backoff = backoff
        self.batch_size = batch_size
        key = api_key if api_key is not None else os.environ.get("CTRLSUM_EMBED_API_KEY")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @property
    def config_key(self) -> str:
        return f"remote:{self.endpoint}:{self.model}:{self.dim}"

    def _post(self, batch: list[str]) -> dict:
        payload = {"model": self.model, "input": batch}
        last: Exception | None = None
        for attempt in range(self.attempts):
            try:
                resp = self._client.post(self.endpoint, json=payload)
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except json.JSONDecodeError as exc:
                        raise ProviderUnavailable(f"non-JSON embeddings response: {exc}") from exc
                if resp.status_code != 429 and resp.status_code < 500:
                    raise ProviderUnavailable(f"embeddings endpoint returned HTTP {resp.status_code}")
                last = RuntimeError(f"HTTP {resp.status_code}")
            if attempt + 1 < self.attempts:
                delay = self.backoff * (2**attempt)
                log.warning("embeddings request failed (%s); retrying in %.1fs", last, delay)
                time.sleep(delay)
        raise ProviderUnavailable(f"embeddings endpoint unreachable after {self.attempts} attempts: {last}")

    def _compute(self, units: list[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        for start in range(0, len(units), self.batch_size):
            batch = units[start : start + self.batch_size]
            body = self._post(batch)
            try:
                rows = sorted(body["data"], key=lambda r: r["index"])
                vectors = [EmbeddingVector.normalized(r["embedding"]) for r in rows]
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderUnavailable(f"malformed embeddings response: {exc}") from exc
            if len(vectors) != len(batch):
                raise ProviderUnavailable(f"expected {len(batch)} embeddings, got {len(vectors)}")
            out.extend(vectors)
        return out

    def close(self) -> None:
        self._client.close()
