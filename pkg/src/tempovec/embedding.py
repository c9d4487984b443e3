"""Embedders: a deterministic feature-hashing default and a JSON-over-HTTP client."""

from __future__ import annotations

import hashlib
import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Sequence

import numpy as np

from .chunking import normalize

DEFAULT_DIMENSION = 384


class EmbeddingError(Exception):
    """Embedding failed. `retryable` is set for transport-level failures."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class Provider(str, Enum):
    DETERMINISTIC = "deterministic"
    REMOTE = "remote"


@dataclass(frozen=True)
class EmbedderConfig:
    dimension: int = DEFAULT_DIMENSION
    provider: Provider = Provider.DETERMINISTIC
    remote_endpoint: str | None = None
    remote_timeout: float = 10.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if Provider(self.provider) is Provider.REMOTE and not self.remote_endpoint:
            raise ValueError("remote provider requires remote_endpoint")


class Embedder:
    """Base contract. Subclasses implement `_embed_many`; `ops` counts texts embedded."""

    dimension: int

    def __init__(self, dimension: int):
        self.dimension = dimension
        self.ops = 0
        self._ops_lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            return []
        for t in texts:
            if not t:
                raise ValueError("cannot embed empty text")
        vectors = self._embed_many(list(texts))
        with self._ops_lock:
            self.ops += len(texts)
        return vectors

    def _embed_many(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError


@lru_cache(maxsize=1 << 16)
def _token_feature(token: str, dimension: int) -> tuple[int, float]:
    raw = token.encode("utf-8")
    bucket = int.from_bytes(hashlib.blake2b(raw, digest_size=8, person=b"tv-bucket").digest(), "little")
    sign_bit = hashlib.blake2b(raw, digest_size=1, person=b"tv-sign").digest()[0] & 1
    return bucket % dimension, (1.0 if sign_bit else -1.0)


def feature_hash(text: str, dimension: int = DEFAULT_DIMENSION) -> np.ndarray:
    """Signed token-count vector of the normalized text, L2-normalized.

    No tokens at all gives the first basis vector.
    """
    acc = np.zeros(dimension, dtype=np.float64)
    for token in normalize(text).split():
        bucket, sign = _token_feature(token, dimension)
        acc[bucket] += sign
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:
        acc[:] = 0.0
        acc[0] = 1.0
        norm = 1.0
    return (acc / norm).astype(np.float32)


class HashingEmbedder(Embedder):
    def _embed_many(self, texts: list[str]) -> list[np.ndarray]:
        return [feature_hash(t, self.dimension) for t in texts]


class RemoteEmbedder(Embedder):
    """Client for ``POST {endpoint}/embed`` with ``{"texts": [...]}``.

    The server answers ``{"vectors": [[float, ...], ...]}``. Returned vectors
    are re-normalized so downstream dot products are cosines.
    """

    def __init__(self, endpoint: str, dimension: int, timeout: float = 10.0, max_in_flight: int = 4):
        super().__init__(dimension)
        self.url = endpoint.rstrip("/") + "/embed"
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _embed_many(self, texts: list[str]) -> list[np.ndarray]:
        body = json.dumps({"texts": texts}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=body, headers={"Content-Type": "application/json"}, method="POST"
        )
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                raise EmbeddingError(f"{self.url}: HTTP {exc.code}", retryable=exc.code >= 500) from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                raise EmbeddingError(f"{self.url}: {exc}", retryable=True) from exc
            except json.JSONDecodeError as exc:
                raise EmbeddingError(f"{self.url}: malformed response: {exc}") from exc

        vectors = payload.get("vectors") if isinstance(payload, dict) else None
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise EmbeddingError(f"{self.url}: expected {len(texts)} vectors in response")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.shape != (self.dimension,):
                raise EmbeddingError(
                    f"{self.url}: dimension mismatch (got {arr.shape}, want {self.dimension})"
                )
            norm = float(np.linalg.norm(arr))
            if not np.isfinite(arr).all() or norm == 0.0:
                raise EmbeddingError(f"{self.url}: non-finite or zero vector in response")
            out.append((arr / norm).astype(np.float32))
        return out


def make_embedder(config: EmbedderConfig) -> Embedder:
    if Provider(config.provider) is Provider.REMOTE:
        assert config.remote_endpoint is not None
        return RemoteEmbedder(
            config.remote_endpoint, config.dimension, config.remote_timeout, config.max_in_flight
        )
    return HashingEmbedder(config.dimension)


def check_vector(vec: np.ndarray, dimension: int) -> np.ndarray:
    """Validate a vector for storage: right shape, finite, unit norm."""
    arr = np.asarray(vec, dtype=np.float32)
    if arr.shape != (dimension,):
        raise ValueError(f"embedding dimension mismatch: got {arr.shape}, expected ({dimension},)")
    if not np.isfinite(arr).all():
        raise ValueError("embedding contains NaN or Inf")
    return arr
