"""CSV ingestion and character-span chunking."""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCorpus, MalformedRow, MissingColumn


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    source_row: int
    meta: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    span: tuple[int, int]
    ordinal: int


@dataclass(frozen=True)
class ChunkPolicy:
    max_chars: int = 512
    overlap_chars: int = 64
    prefer_sentence_boundaries: bool = True

    def __post_init__(self):
        if not (self.max_chars > self.overlap_chars >= 0):
            raise ValueError(
                f"chunk policy needs max_chars > overlap_chars >= 0, got {self.max_chars}/{self.overlap_chars}"
            )


@dataclass
class Corpus:
    """Result of an ingestion: documents plus what was dropped on the way."""

    documents: list[Document]
    duplicate_count: int = 0
    malformed_count: int = 0
    empty_count: int = 0

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)


def ingest_csv(
    path: str | Path,
    text_column: str = "text",
    dedup: bool = False,
    skip_malformed: bool = False,
) -> Corpus:
    """Read one Document per data row of a UTF-8 CSV with a header row.

    Rows whose text is empty after trimming are dropped. Rows with quoting or
    field-count errors raise MalformedRow unless ``skip_malformed`` is set, in
    which case they are counted and skipped.
    """
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    duplicates = malformed = empty = 0

    with path.open("r", encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyCorpus(f"{path}: no header row") from None
        except csv.Error as exc:
            raise MalformedRow(f"{path}: unreadable header: {exc}") from exc
        if text_column not in header:
            raise MissingColumn(f"{path}: column {text_column!r} not in header {header}")
        text_idx = header.index(text_column)

        row_index = -1
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                row_index += 1
                if not skip_malformed:
                    raise MalformedRow(f"{path}: data row {row_index}: {exc}") from exc
                malformed += 1
                continue
            row_index += 1
            if not row:
                # blank line between records
                continue
            if len(row) != len(header):
                if not skip_malformed:
                    raise MalformedRow(
                        f"{path}: data row {row_index}: expected {len(header)} fields, got {len(row)}"
                    )
                malformed += 1
                continue
            text = row[text_idx]
            if not text.strip():
                empty += 1
                continue
            if dedup:
                if text in seen:
                    duplicates += 1
                    continue
                seen.add(text)
            meta = {name: value for name, value in zip(header, row) if name != text_column}
            documents.append(Document(f"doc-{row_index:06d}", text, row_index, meta))

    if not documents:
        raise EmptyCorpus(f"{path}: no usable rows")
    return Corpus(documents, duplicates, malformed, empty)


_SENTENCE_END = re.compile(r"[.!?]+[\"')\]]*(?=\s)")


def _sentence_ends(text: str) -> list[int]:
    return [m.end() for m in _SENTENCE_END.finditer(text)]


def chunk(doc: Document, policy: ChunkPolicy = ChunkPolicy()) -> list[Chunk]:
    """Split a document into overlapping windows of at most ``policy.max_chars``.

    Without sentence boundaries the window slides by ``max_chars - overlap_chars``.
    With them, a window is cut at the last sentence end that still leaves room
    for the overlap; if there is none it falls back to the hard cut.
    """
    text = doc.text
    n = len(text)
    ends = _sentence_ends(text) if policy.prefer_sentence_boundaries else []
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + policy.max_chars, n)
        if end < n and ends:
            candidates = [e for e in ends if start + policy.overlap_chars < e <= end]
            if candidates:
                end = candidates[-1]
        ordinal = len(chunks)
        chunks.append(Chunk(f"{doc.doc_id}#{ordinal}", doc.doc_id, text[start:end], (start, end), ordinal))
        if end >= n:
            return chunks
        start = end - policy.overlap_chars


def chunk_all(docs: Iterable[Document], policy: ChunkPolicy = ChunkPolicy()) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in docs:
        out.extend(chunk(doc, policy))
    return out


def reconstruct(chunks: Sequence[Chunk]) -> str:
    """Concatenate one document's chunks, dropping each declared overlap."""
    parts: list[str] = []
    covered = 0
    for c in chunks:
        start, _ = c.span
        parts.append(c.text[covered - start:] if covered > start else c.text)
        covered = c.span[1]
    return "".join(parts)


def manifest(docs: Sequence[Document], chunks: Sequence[Chunk]) -> list[dict]:
    counts: dict[str, int] = {}
    for c in chunks:
        counts[c.doc_id] = counts.get(c.doc_id, 0) + 1
    return [
        {
            "doc_id": d.doc_id,
            "source_row": d.source_row,
            "char_length": len(d.text),
            "chunk_count": counts.get(d.doc_id, 0),
        }
        for d in docs
    ]


def write_manifest(path: str | Path, docs: Sequence[Document], chunks: Sequence[Chunk]) -> None:
    Path(path).write_text(json.dumps(manifest(docs, chunks), indent=2) + "\n", encoding="utf-8")


def write_chunks(path: str | Path, chunks: Sequence[Chunk]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for c in chunks:
            record = {"chunk_id": c.chunk_id, "doc_id": c.doc_id, "span": list(c.span), "ordinal": c.ordinal, "text": c.text}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_chunks(path: str | Path) -> list[Chunk]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(Chunk(r["chunk_id"], r["doc_id"], r["text"], tuple(r["span"]), r["ordinal"]))
    return out
