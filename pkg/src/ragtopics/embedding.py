"""Embedding backends and the vector math used downstream.

Vectors are plain 1-D float64 numpy arrays; a batch is a 2-D array with one
row per input text.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import httpx
import numpy as np

from .errors import BackendUnavailable, DimensionMismatch, EmptyText, ZeroVector

logger = logging.getLogger(__name__)

BACKENDS = ("deterministic_test", "remote_http", "sentence_transformers")

REFERENCE_MODEL = "sentence-transformers/all-MiniLM-L6-v2"
REFERENCE_DIM = 384


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "deterministic_test"
    model_name: str = "hash-trigram-v1"
    dim: int = 256
    normalize: bool = True
    batch_size: int = 64
    seed: int = 0
    base_url: str | None = None
    api_key_env: str = "EMBEDDING_API_KEY"
    parallelism: int = 1
    max_attempts: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown embedding backend {self.backend!r}; expected one of {BACKENDS}")
        if self.dim < 1 or self.batch_size < 1 or self.parallelism < 1:
            raise ValueError("dim, batch_size and parallelism must be positive")
        if self.backend == "deterministic_test" and self.dim < 8:
            raise ValueError("deterministic backend needs dim >= 8")

    def identity(self) -> dict:
        """The fields that define the embedding space; recorded in artifacts."""
        return {"backend": self.backend, "model_name": self.model_name, "dim": self.dim, "normalize": self.normalize}

    def to_dict(self) -> dict:
        return asdict(self)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return v / norm


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of the angle between ``a`` and ``b``, clipped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    # elementwise products commute, so dot(a, b) == dot(b, a) bit for bit
    value = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, value))


def _ngrams(text: str, n: int = 3) -> list[str]:
    text = text.lower()
    if len(text) < n:
        return [text]
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def _bucket(gram: str, dim: int, key: bytes) -> tuple[int, float]:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
    h = int.from_bytes(digest, "little")
    return (h >> 1) % dim, (1.0 if h & 1 else -1.0)


def deterministic_embed(text: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Seeded hashed character-trigram embedding, L2-normalized.

    Each trigram of the lowercased text lands in one of ``dim`` buckets with a
    hash-derived sign. Texts sharing trigrams share buckets, so overlap in
    surface form shows up as cosine similarity.
    """
    if dim < 8:
        raise ValueError("dim must be >= 8")
    if not text:
        raise EmptyText("cannot embed empty text")
    key = seed.to_bytes(8, "little", signed=True)
    v = np.zeros(dim, dtype=np.float64)
    for gram in _ngrams(text):
        idx, sign = _bucket(gram, dim, key)
        v[idx] += sign
    if not v.any():
        # signed counts cancelled exactly; fall back to a whole-text bucket
        idx, sign = _bucket("\x00" + text.lower(), dim, key)
        v[idx] = sign
    return v / np.linalg.norm(v)


class RemoteEmbeddingClient:
    """Client for an embeddings endpoint speaking ``{model, input} -> {data: [{index, embedding}]}``."""

    def __init__(self, config: EmbedderConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not config.base_url:
            raise ValueError("remote_http backend requires base_url")
        self.config = config
        self.sleep = sleep
        headers = {}
        api_key = os.environ.get(config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, texts: list[str]) -> list[list[float]]:
        cfg = self.config
        last_exc: Exception | None = None
        for attempt in range(cfg.max_attempts):
            try:
                resp = self._client.post(cfg.base_url, json={"model": cfg.model_name, "input": texts})
                resp.raise_for_status()
                data = resp.json()["data"]
                rows = sorted(data, key=lambda item: item["index"])
                if len(rows) != len(texts):
                    raise BackendUnavailable(f"expected {len(texts)} embeddings, got {len(rows)}")
                return [row["embedding"] for row in rows]
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last_exc = exc
                logger.warning("embedding request failed (attempt %d/%d): %s", attempt + 1, cfg.max_attempts, exc)
                if attempt + 1 < cfg.max_attempts:
                    self.sleep(cfg.backoff_base * 2**attempt)
        raise BackendUnavailable(f"embedding endpoint failed after {cfg.max_attempts} attempts: {last_exc}")

    def embed(self, texts: list[str]) -> np.ndarray:
        cfg = self.config
        batches = [texts[i : i + cfg.batch_size] for i in range(0, len(texts), cfg.batch_size)]
        if cfg.parallelism > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
                results = list(pool.map(self._post, batches))  # map keeps input order
        else:
            results = [self._post(b) for b in batches]
        rows = [row for batch in results for row in batch]
        return np.asarray(rows, dtype=np.float64)


_st_models: dict[str, object] = {}


def _sentence_transformer(model_name: str):
    if model_name not in _st_models:
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendUnavailable("sentence-transformers is not installed") from exc
        try:
            _st_models[model_name] = SentenceTransformer(model_name)
        except Exception as exc:  # download/IO failures surface in many shapes
            raise BackendUnavailable(f"cannot load sentence-transformers model {model_name!r}: {exc}") from exc
    return _st_models[model_name]


def embed_batch(texts: Sequence[str], config: EmbedderConfig, *,
                client: RemoteEmbeddingClient | None = None) -> np.ndarray:
    """Embed ``texts`` in order; returns an array of shape ``(len(texts), config.dim)``."""
    texts = list(texts)
    for i, t in enumerate(texts):
        if not t:
            raise EmptyText(f"text at position {i} is empty")
    if not texts:
        return np.zeros((0, config.dim), dtype=np.float64)

    if config.backend == "deterministic_test":
        out = np.stack([deterministic_embed(t, config.dim, config.seed) for t in texts])
    elif config.backend == "remote_http":
        owned = client is None
        client = client or RemoteEmbeddingClient(config)
        try:
            out = client.embed(texts)
        finally:
            if owned:
                client.close()
    else:
        model = _sentence_transformer(config.model_name)
        out = np.asarray(model.encode(texts, batch_size=config.batch_size, convert_to_numpy=True), dtype=np.float64)

    if out.ndim != 2 or out.shape[1] != config.dim:
        raise DimensionMismatch(f"backend returned width {out.shape[-1]}, config says {config.dim}")
    if not np.isfinite(out).all():
        raise BackendUnavailable("backend returned non-finite components")
    if config.normalize:
        norms = np.linalg.norm(out, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ZeroVector("backend returned an all-zero embedding")
        out = out / norms
    return out


def reference_embedder(**overrides) -> EmbedderConfig:
    """Config for the 384-dim sentence-embedding model used for topic evaluation.

    Uses the remote backend when ``RAGTOPICS_EMBED_URL`` is set, otherwise a
    local sentence-transformers model.
    """
    url = os.environ.get("RAGTOPICS_EMBED_URL")
    fields = dict(
        backend="remote_http" if url else "sentence_transformers",
        model_name=os.environ.get("RAGTOPICS_EMBED_MODEL", REFERENCE_MODEL),
        dim=REFERENCE_DIM,
        base_url=url,
    )
    fields.update(overrides)
    return EmbedderConfig(**fields)


def backend_available(config: EmbedderConfig) -> bool:
    try:
        embed_batch(["probe"], config)
    except (BackendUnavailable, DimensionMismatch, ValueError):
        return False
    return True
