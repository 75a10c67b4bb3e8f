"""Stage functions shared by the CLI: each reads config, writes into a run directory."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, lda
from .config import RunConfig
from .corpus import Chunk
from .embedding import EmbedderConfig, embed_batch
from .llm import client_factory
from .topicmodel import RoundContext, RoundOutcome, RoundResult, run_rounds
from .vectorstore import VectorStore

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
CHUNKS = "chunks.jsonl"
INDEX = "index.bin"
CONFIG = "config.json"


def new_run_dir(config: RunConfig) -> tuple[str, Path]:
    """``<artifact_dir>/<config-hash-prefix>-<counter>``; the counter never reuses a directory."""
    root = Path(config.artifact_dir)
    root.mkdir(parents=True, exist_ok=True)
    prefix = config.hash()[:12]
    counter = 1 + sum(1 for p in root.glob(f"{prefix}-*") if p.is_dir())
    while (root / f"{prefix}-{counter:04d}").exists():
        counter += 1
    run_id = f"{prefix}-{counter:04d}"
    run_dir = root / run_id
    run_dir.mkdir()
    config.dump(run_dir / CONFIG)
    return run_id, run_dir


@dataclass
class IngestOutput:
    documents: list
    chunks: list[Chunk]
    duplicate_count: int
    malformed_count: int


def ingest(config: RunConfig, run_dir: Path) -> IngestOutput:
    cc = config.corpus
    if not cc.csv_path:
        raise ValueError("corpus.csv_path is not set")
    result = corpus_mod.ingest_csv(cc.csv_path, cc.text_column, cc.dedup, cc.skip_malformed)
    chunks = corpus_mod.chunk_all(result.documents, config.chunking)
    corpus_mod.write_manifest(run_dir / MANIFEST, result.documents, chunks)
    corpus_mod.write_chunks(run_dir / CHUNKS, chunks)
    return IngestOutput(result.documents, chunks, result.duplicate_count, result.malformed_count)


def build_index(chunks: list[Chunk], embedder: EmbedderConfig) -> VectorStore:
    vecs = embed_batch([c.text for c in chunks], embedder)
    return VectorStore.build(((c.chunk_id, v) for c, v in zip(chunks, vecs)), model_name=embedder.model_name,
                             dim=embedder.dim)


def index(config: RunConfig, run_dir: Path) -> tuple[IngestOutput, VectorStore]:
    ing = ingest(config, run_dir)
    store = build_index(ing.chunks, config.index_embedder)
    store.persist(run_dir / INDEX)
    return ing, store


def run(config: RunConfig, run_dir: Path, script: list | None = None) -> list[RoundOutcome]:
    ing, store = index(config, run_dir)
    ctx = RoundContext(
        store=store,
        embedder=config.index_embedder,
        texts={c.chunk_id: c.text for c in ing.chunks},
        topic_params=config.topics.params(),
        limits=config.agent.limits(),
        completion=config.llm.params,
        retriever_k=config.agent.retriever_k,
        snapshot_extra={
            "corpus": {"csv_path": Path(config.corpus.csv_path).name, "text_column": config.corpus.text_column,
                       "dedup": config.corpus.dedup, "documents": len(ing.documents), "chunks": len(ing.chunks)},
            "chunking": asdict(config.chunking),
            "llm_backend": config.llm.backend,
            "seed": config.seed,
        },
    )
    make_llm = client_factory(config.llm, script)
    outcomes = run_rounds(config.topics.rounds, ctx, make_llm, run_dir, config.topics.concurrency)
    summary = [{"round": o.round_number, "ok": o.ok, "error": o.error,
                "topics": o.result.labels if o.result else None} for o in outcomes]
    write_json(run_dir / "reports" / "rounds.json", summary)
    return outcomes


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def load_rounds_dir(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Round label lists from a directory of RoundResult files or ``{name, labels}`` files.

    A run directory (with a ``rounds/`` subdirectory) is accepted too.
    """
    path = Path(path)
    if (path / "rounds").is_dir():
        path = path / "rounds"
    files = sorted(p for p in path.iterdir() if p.suffix in (".json", ".yaml", ".yml"))
    names, lists = [], []
    for p in files:
        if p.suffix == ".json":
            data = json.loads(p.read_text(encoding="utf-8"))
        else:
            import yaml

            data = yaml.safe_load(p.read_text(encoding="utf-8"))
        if "topics" in data:
            rr = RoundResult.load(p)
            names.append(f"R{rr.round_number}")
            lists.append(rr.labels)
        elif "labels" in data:
            names.append(str(data.get("name") or data.get("method_name") or p.stem))
            lists.append([str(x) for x in data["labels"]])
    if not lists:
        raise ValueError(f"{path}: no round files found")
    return names, lists


def eval_store_for(config: RunConfig, run_dir: Path) -> tuple[VectorStore, dict[str, str]]:
    ing = ingest(config, run_dir)
    store = build_index(ing.chunks, config.eval_embedder)
    return store, {c.chunk_id: c.text for c in ing.chunks}


def lda_baseline(config: RunConfig, run_dir: Path):
    cc = config.corpus
    if not cc.csv_path:
        raise ValueError("corpus.csv_path is not set")
    docs = corpus_mod.ingest_csv(cc.csv_path, cc.text_column, cc.dedup, cc.skip_malformed).documents
    lc = config.lda
    tokenized = lda.preprocess([d.text for d in docs], use_stemmer=lc.stemmer, min_doc_freq=lc.min_doc_freq)
    model = lda.fit_gibbs(tokenized, lc.k, lc.alpha, lc.beta, lc.iterations, config.seed)
    model.dump(run_dir / "lda_model.json")
    topics = lda.topic_labels(model, lc.label_words)
    write_json(run_dir / "lda_topics.json", {"method_name": "lda_baseline", "labels": [t.label for t in topics],
                                              "top_words": [lda.top_words(model, k, 10) for k in range(model.K)]})
    return model, topics


def validity_reports(config: RunConfig, run_dir: Path, fixtures: dict[str, list[str]]):
    store, texts = eval_store_for(config, run_dir)
    return evaluation.compare_methods(fixtures, store, config.eval_embedder, config.eval, texts)
