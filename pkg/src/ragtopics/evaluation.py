"""Topic quality metrics.

* validity: reverse-retrieve corpus chunks for each topic label and average
  their cosine similarity, weighting each topic by how many chunks cleared
  the similarity floor.
* reliability: for an anchor round and another round, the mean over anchor
  topics of the best cosine match among the other round's topics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np
import yaml

from .embedding import EmbedderConfig, embed_batch
from .errors import AllTopicsEmpty, DimensionMismatch
from .topicmodel import RoundResult, Topic
from .vectorstore import VectorStore

DEFAULT_FLOOR = 0.30
DEFAULT_CAP = 100

SE_NOTE = (
    "stderr is the weighted standard error of per-topic mean similarities "
    "(weights = retrieved counts, Kish effective sample size)"
)
UNIT_NOTE = "similarities are computed against retrieved chunk vectors"


@dataclass(frozen=True)
class RetrievalParams:
    floor: float = DEFAULT_FLOOR
    cap: int = DEFAULT_CAP


@dataclass
class TopicRelevance:
    label: str
    retrieved_count: int
    mean_similarity: float
    zero_retrieval: bool = False


@dataclass
class ValidityReport:
    method_name: str
    per_topic: list[TopicRelevance]
    weighted_score: float
    stderr: float
    eval_embedder: dict
    retrieval_params: dict
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReliabilityReport:
    rounds: list[str]
    anchor: str
    scores_vs_anchor: list[float]
    stderr_vs_anchor: list[float]
    pairs: list[str]
    eval_embedder: dict
    full_matrix: list[list[float]] | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def score(self, other: str) -> float:
        return self.scores_vs_anchor[self.pairs.index(f"{self.anchor}->{other}")]


Embedder = EmbedderConfig | Callable[[list[str]], np.ndarray]


def _embed(texts: list[str], embedder: Embedder) -> np.ndarray:
    if isinstance(embedder, EmbedderConfig):
        return embed_batch(texts, embedder)
    return np.asarray(embedder(list(texts)), dtype=np.float64)


def _identity(embedder: Embedder) -> dict:
    if isinstance(embedder, EmbedderConfig):
        return embedder.identity()
    return {"backend": "callable", "model_name": _model_name(embedder)}


def _model_name(embedder: Embedder) -> str:
    return getattr(embedder, "model_name", None) or getattr(embedder, "__name__", "callable")


def _dim(embedder: Embedder) -> int | None:
    return embedder.dim if isinstance(embedder, EmbedderConfig) else getattr(embedder, "dim", None)


def _labels(topics: Sequence[Topic | str]) -> list[str]:
    return [t.label if isinstance(t, Topic) else str(t) for t in topics]


def embed_topics(topics: Sequence[Topic | str], eval_embedder: Embedder) -> np.ndarray:
    """Unit-norm embeddings of the bare topic labels, one row per topic.

    ``eval_embedder`` is an EmbedderConfig or any callable mapping a list of
    strings to an array of row vectors.
    """
    labels = _labels(topics)
    if any(not label.strip() for label in labels):
        raise ValueError("topic labels must be non-empty")
    vecs = _embed(labels, eval_embedder)
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def eval_store(store: VectorStore, eval_embedder: Embedder,
               texts: Mapping[str, str] | None = None) -> tuple[VectorStore, bool]:
    """Return a store living in the eval embedder's space, re-embedding if needed."""
    name = _model_name(eval_embedder)
    if store.model_name == name and _dim(eval_embedder) in (None, store.dim):
        return store, False
    if texts is None:
        raise DimensionMismatch(
            f"index embedder {store.model_name!r}/{store.dim} differs from eval embedder "
            f"{name!r} and no chunk texts were given to re-embed"
        )
    ids = list(store.chunk_ids)
    vecs = _embed([texts[c] for c in ids], eval_embedder)
    return VectorStore.build(zip(ids, vecs), model_name=name), True


def weighted_mean_and_se(values: Sequence[float], weights: Sequence[float]) -> tuple[float, float]:
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(values, dtype=np.float64)
    total = w.sum()
    mean = float((w * x).sum() / total)
    p = w / total
    n_eff = 1.0 / float((p**2).sum())
    if n_eff <= 1.0:
        return mean, 0.0
    var = float((p * (x - mean) ** 2).sum()) * n_eff / (n_eff - 1.0)
    return mean, math.sqrt(var / n_eff)


def validity(
    topics: Sequence[Topic | str],
    store: VectorStore,
    eval_embedder: Embedder,
    params: RetrievalParams = RetrievalParams(),
    texts: Mapping[str, str] | None = None,
    method_name: str = "topics",
) -> ValidityReport:
    labels = _labels(topics)
    store, reembedded = eval_store(store, eval_embedder, texts)
    topic_vecs = embed_topics(labels, eval_embedder)

    per_topic: list[TopicRelevance] = []
    for label, tvec in zip(labels, topic_vecs):
        hits = store.search_threshold(tvec, params.floor, params.cap)
        if not hits:
            per_topic.append(TopicRelevance(label, 0, 0.0, zero_retrieval=True))
            continue
        sims = [h.score for h in hits]
        per_topic.append(TopicRelevance(label, len(hits), math.fsum(sims) / len(sims)))

    scored = [t for t in per_topic if t.retrieved_count > 0]
    if not scored:
        raise AllTopicsEmpty(f"no topic retrieved any chunk at floor {params.floor}")
    score, se = weighted_mean_and_se([t.mean_similarity for t in scored], [t.retrieved_count for t in scored])
    notes = [UNIT_NOTE, SE_NOTE]
    if reembedded:
        notes.append("corpus re-embedded with the eval embedder (index used a different model)")
    empty = [t.label for t in per_topic if t.zero_retrieval]
    if empty:
        notes.append(f"zero-retrieval topics (weight 0): {empty}")
    return ValidityReport(method_name, per_topic, score, se, _identity(eval_embedder), asdict(params), notes)


def _max_sim_stats(anchor_vecs: np.ndarray, other_vecs: np.ndarray) -> tuple[float, float]:
    # pairwise dots one at a time: a gemm may round differently depending on row position
    maxima = np.array([max(float(np.dot(a, b)) for b in other_vecs) for a in anchor_vecs])
    maxima = np.clip(maxima, -1.0, 1.0)
    # fsum keeps the mean independent of topic order
    mean = math.fsum(maxima.tolist()) / len(maxima)
    se = float(np.std(maxima, ddof=1) / math.sqrt(len(maxima))) if len(maxima) > 1 else 0.0
    return mean, se


def reliability(
    rounds: Sequence[RoundResult | Sequence[str]],
    eval_embedder: Embedder,
    anchor: int = 0,
    round_names: Sequence[str] | None = None,
    full_matrix: bool = False,
) -> ReliabilityReport:
    """Anchor-to-round best-match similarity for every other round.

    Scores are directional: ``anchor->other`` averages over the anchor's topics.
    """
    if len(rounds) < 2:
        raise ValueError("reliability needs at least two rounds")
    label_lists = [r.labels if isinstance(r, RoundResult) else list(r) for r in rounds]
    if any(not labels for labels in label_lists):
        raise ValueError("every round needs at least one topic")
    if round_names is None:
        round_names = [
            f"R{r.round_number}" if isinstance(r, RoundResult) else f"R{i + 1}" for i, r in enumerate(rounds)
        ]
    names = list(round_names)

    # embed each distinct label once so identical labels get identical vectors
    unique = sorted({label for labels in label_lists for label in labels})
    table = dict(zip(unique, embed_topics(unique, eval_embedder)))
    vecs = [np.stack([table[label] for label in labels]) for labels in label_lists]

    scores, ses, pairs = [], [], []
    for j in range(len(rounds)):
        if j == anchor:
            continue
        mean, se = _max_sim_stats(vecs[anchor], vecs[j])
        scores.append(mean)
        ses.append(se)
        pairs.append(f"{names[anchor]}->{names[j]}")
    matrix = None
    if full_matrix:
        matrix = [[_max_sim_stats(vecs[i], vecs[j])[0] for j in range(len(rounds))] for i in range(len(rounds))]
    return ReliabilityReport(names, names[anchor], scores, ses, pairs, _identity(eval_embedder), matrix)


def compare_methods(
    fixtures: Mapping[str, Sequence[str]],
    store: VectorStore,
    eval_embedder: Embedder,
    params: RetrievalParams = RetrievalParams(),
    texts: Mapping[str, str] | None = None,
) -> list[ValidityReport]:
    """One validity report per named topic list, best score first."""
    if not fixtures:
        raise ValueError("no topic lists to compare")
    store, _ = eval_store(store, eval_embedder, texts)
    reports = [validity(labels, store, eval_embedder, params, method_name=name) for name, labels in fixtures.items()]
    return sorted(reports, key=lambda r: -r.weighted_score)


# --- fixtures and output ------------------------------------------------------


def load_fixtures(path=None) -> dict[str, list[str]]:
    """Named topic lists from a YAML file of ``{method_name, labels}`` records.

    Without ``path`` the bundled published topic lists are returned.
    """
    if path is None:
        raw = resources.files("ragtopics.data").joinpath("published_topics.yaml").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    records = yaml.safe_load(raw)
    return {r["method_name"]: [str(x) for x in r["labels"]] for r in records}


AGENTIC_ROUNDS = [f"agentic_rag_round_{i}" for i in range(1, 6)]
LLM_PROMPTING = "llm_prompting"
LDA_PUBLISHED = "lda_published"


def validity_csv(reports: Sequence[ValidityReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "score", "stderr"])
    for r in reports:
        w.writerow([r.method_name, repr(r.weighted_score), repr(r.stderr)])
    return buf.getvalue()


def reliability_csv(report: ReliabilityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pair", "score", "stderr"])
    for pair, score, se in zip(report.pairs, report.scores_vs_anchor, report.stderr_vs_anchor):
        w.writerow([pair, repr(score), repr(se)])
    return buf.getvalue()


def format_validity_table(reports: Sequence[ValidityReport]) -> str:
    width = max(len("method"), *(len(r.method_name) for r in reports))
    lines = [f"{'method':<{width}}  score   +/-SE   topics(with hits)"]
    for r in reports:
        hit = sum(1 for t in r.per_topic if t.retrieved_count)
        lines.append(f"{r.method_name:<{width}}  {r.weighted_score:5.2f}   {r.stderr:5.2f}   {len(r.per_topic)}({hit})")
    return "\n".join(lines)


def format_reliability_table(report: ReliabilityReport) -> str:
    lines = ["pair        score   +/-SE"]
    for pair, score, se in zip(report.pairs, report.scores_vs_anchor, report.stderr_vs_anchor):
        lines.append(f"{pair:<10}  {score:5.2f}   {se:5.2f}")
    return "\n".join(lines)
