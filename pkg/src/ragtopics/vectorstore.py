"""Exact linear-scan vector store with a checksummed binary index file.

Index file layout (all integers little-endian)::

    b"RTVS"                 magic
    uint32                  header length in bytes
    header                  UTF-8 JSON: format_version, dim, count, model_name,
                            normalize, checksum, chunk_ids
    count * dim float32     vectors, one row per record, insertion order

``checksum`` is the SHA-256 of the vector bytes followed by the JSON-encoded
chunk id list.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorruptIndex, DimensionMismatch, DuplicateChunkId, EmbedderMismatch, ZeroVector

MAGIC = b"RTVS"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float
    insertion_index: int


class VectorStore:
    """Immutable collection of unit-norm float32 vectors keyed by chunk id."""

    def __init__(self, chunk_ids: Sequence[str], matrix: np.ndarray, model_name: str = "", normalize: bool = True):
        self._ids = tuple(chunk_ids)
        self._matrix = matrix
        self._matrix.setflags(write=False)
        # float32 rounding leaves rows ~1e-8 off unit norm; score against the
        # renormalized float64 rows so results are exact cosines of what is stored
        rows = matrix.astype(np.float64)
        if len(rows):
            rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        rows.setflags(write=False)
        self._unit = rows
        self.model_name = model_name
        self.normalize = normalize
        self._pos = {cid: i for i, cid in enumerate(self._ids)}

    @classmethod
    def build(cls, records: Iterable[tuple[str, Sequence[float]]], model_name: str = "",
              dim: int | None = None) -> "VectorStore":
        ids: list[str] = []
        rows: list[np.ndarray] = []
        seen: set[str] = set()
        for chunk_id, vector in records:
            if chunk_id in seen:
                raise DuplicateChunkId(chunk_id)
            seen.add(chunk_id)
            v = np.asarray(vector, dtype=np.float64)
            if v.ndim != 1:
                raise DimensionMismatch(f"{chunk_id}: vector must be 1-D")
            if rows and v.shape != rows[0].shape:
                raise DimensionMismatch(f"{chunk_id}: dim {v.shape[0]} != {rows[0].shape[0]}")
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ZeroVector(chunk_id)
            ids.append(chunk_id)
            rows.append(v / norm)
        if rows:
            if dim is not None and rows[0].shape[0] != dim:
                raise DimensionMismatch(f"store dim {dim} != vector dim {rows[0].shape[0]}")
            matrix = np.stack(rows).astype("<f4")
        else:
            matrix = np.zeros((0, dim or 0), dtype="<f4")
        return cls(ids, matrix, model_name)

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def chunk_ids(self) -> tuple[str, ...]:
        return self._ids

    def vector(self, chunk_id: str) -> np.ndarray:
        return self._unit[self._pos[chunk_id]].copy()

    def vectors(self) -> np.ndarray:
        return self._unit.copy()

    def _scores(self, query: Sequence[float]) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or (len(self) and q.shape[0] != self.dim):
            raise DimensionMismatch(f"query dim {q.shape} != store dim {self.dim}")
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ZeroVector("query vector is all-zero")
        if not len(self):
            return np.zeros(0)
        scores = self._unit @ (q / norm)
        return np.clip(scores, -1.0, 1.0)

    def _ranked(self, scores: np.ndarray) -> np.ndarray:
        # primary key: score descending; ties: insertion order
        return np.lexsort((np.arange(len(scores)), -scores))

    def search(self, query: Sequence[float], k: int) -> list[SearchHit]:
        if k < 1:
            raise ValueError("k must be positive")
        scores = self._scores(query)
        order = self._ranked(scores)[:k]
        return [SearchHit(self._ids[i], float(scores[i]), int(i)) for i in order]

    def search_threshold(self, query: Sequence[float], floor: float, cap: int) -> list[SearchHit]:
        if not -1.0 <= floor <= 1.0:
            raise ValueError("floor must lie in [-1, 1]")
        if cap < 1:
            raise ValueError("cap must be positive")
        scores = self._scores(query)
        hits = []
        for i in self._ranked(scores):
            if scores[i] < floor or len(hits) == cap:
                break
            hits.append(SearchHit(self._ids[i], float(scores[i]), int(i)))
        return hits

    def _checksum(self) -> str:
        h = hashlib.sha256(self._matrix.astype("<f4").tobytes())
        h.update(json.dumps(list(self._ids)).encode("utf-8"))
        return h.hexdigest()

    def persist(self, path: str | Path) -> None:
        header = {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "count": len(self),
            "model_name": self.model_name,
            "normalize": self.normalize,
            "checksum": self._checksum(),
            "chunk_ids": list(self._ids),
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(self._matrix.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path, expected_model_name: str | None = None) -> "VectorStore":
        raw = Path(path).read_bytes()
        if len(raw) < 8 or raw[:4] != MAGIC:
            raise CorruptIndex(f"{path}: bad magic or truncated header")
        (hlen,) = struct.unpack("<I", raw[4:8])
        try:
            header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
            dim, count = int(header["dim"]), int(header["count"])
            ids = header["chunk_ids"]
        except (ValueError, KeyError, UnicodeDecodeError) as exc:
            raise CorruptIndex(f"{path}: unreadable header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise CorruptIndex(f"{path}: unsupported format_version {header.get('format_version')}")
        body = raw[8 + hlen :]
        if len(body) != dim * count * 4 or len(ids) != count:
            raise CorruptIndex(f"{path}: expected {count}x{dim} float32 rows, found {len(body)} bytes")
        matrix = np.frombuffer(body, dtype="<f4").reshape(count, dim).copy()
        store = cls(ids, matrix, header.get("model_name", ""), bool(header.get("normalize", True)))
        if store._checksum() != header.get("checksum"):
            raise CorruptIndex(f"{path}: checksum mismatch")
        if expected_model_name is not None and store.model_name != expected_model_name:
            raise EmbedderMismatch(
                f"{path}: index built with {store.model_name!r}, run configured for {expected_model_name!r}"
            )
        return store
