"""LDA baseline: tweet preprocessing and a collapsed Gibbs sampler.

The sampler draws each token's topic from

    P(z = k | rest)  proportional to  (n_dk + alpha) * (n_kw + beta) / (n_k + V * beta)

visiting tokens in corpus order (document by document) once per sweep. All
randomness comes from one ``numpy.random.Generator`` stream: the initial
assignments, then one block of uniforms per sweep, so a given seed always
yields the same model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .errors import EmptyVocabulary
from .topicmodel import Topic

STOPLIST_ID = "en-v1"
STEMMER_ID = "suffix-v1"

# (suffix, replacement), first match wins; applied only when the remaining
# stem keeps at least 3 characters and one vowel.
SUFFIX_RULES: tuple[tuple[str, str], ...] = (
    ("ational", "ate"),
    ("ization", "ize"),
    ("fulness", "ful"),
    ("iveness", "ive"),
    ("ousness", "ous"),
    ("ments", ""),
    ("ment", ""),
    ("ingly", ""),
    ("edly", ""),
    ("ness", ""),
    ("ings", ""),
    ("ing", ""),
    ("ies", "y"),
    ("ied", "y"),
    ("ers", ""),
    ("er", ""),
    ("ed", ""),
    ("ly", ""),
    ("sses", "ss"),
    ("xes", "x"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("s", ""),
)
_NO_PLURAL = ("ss", "us", "is")
_UNDOUBLE_SUFFIXES = {"ing", "ings", "ed", "er", "ers", "edly", "ingly"}

_URL = re.compile(r"https?://\S+|www\.\S+")
_MENTION = re.compile(r"@\w+")
_NON_WORD = re.compile(r"[^a-z0-9#\s]+")


def load_stoplist() -> frozenset[str]:
    raw = resources.files("ragtopics.data").joinpath("stopwords_en.txt").read_text(encoding="utf-8")
    words = set()
    for line in raw.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
            words.add(line.replace("'", ""))
    return frozenset(words)


def _has_vowel(s: str) -> bool:
    return any(c in "aeiouy" for c in s)


def stem(word: str) -> str:
    """Strip one suffix per SUFFIX_RULES; ``fishing``/``fished``/``fisher`` -> ``fish``."""
    for suffix, repl in SUFFIX_RULES:
        if not word.endswith(suffix):
            continue
        if suffix == "s" and word.endswith(_NO_PLURAL):
            return word
        base = word[: len(word) - len(suffix)]
        if len(base) < 3 or not _has_vowel(base):
            continue
        out = base + repl
        if suffix in _UNDOUBLE_SUFFIXES and len(out) >= 4 and out[-1] == out[-2] and out[-1] not in "lsz":
            out = out[:-1]
        return out
    return word


@dataclass
class TokenizedCorpus:
    vocab: list[str]
    docs: list[list[int]]
    stoplist_id: str = STOPLIST_ID
    stemmer_id: str | None = STEMMER_ID

    @property
    def n_tokens(self) -> int:
        return sum(len(d) for d in self.docs)


def tokenize(text: str, stoplist: Iterable[str], use_stemmer: bool = True, min_token_len: int = 2) -> list[str]:
    text = _URL.sub(" ", text.lower())
    text = _MENTION.sub(" ", text)
    text = _NON_WORD.sub(" ", text.replace("'", ""))
    stop = stoplist if isinstance(stoplist, (set, frozenset)) else set(stoplist)
    out = []
    for tok in text.split():
        tok = tok.strip("#")
        if len(tok) < min_token_len or tok in stop or tok.isdigit():
            continue
        if use_stemmer:
            tok = stem(tok)
        out.append(tok)
    return out


def preprocess(
    texts: Sequence[str],
    stoplist: Iterable[str] | None = None,
    use_stemmer: bool = True,
    min_token_len: int = 2,
    min_doc_freq: int = 2,
) -> TokenizedCorpus:
    """Lowercase, strip URLs/mentions/punctuation, drop stopwords and rare words."""
    if not texts:
        raise ValueError("texts must be non-empty")
    stop = frozenset(stoplist) if stoplist is not None else load_stoplist()
    tokenized = [tokenize(t, stop, use_stemmer, min_token_len) for t in texts]
    df: dict[str, int] = {}
    for toks in tokenized:
        for tok in set(toks):
            df[tok] = df.get(tok, 0) + 1
    vocab = sorted(w for w, n in df.items() if n >= min_doc_freq)
    if not vocab:
        raise EmptyVocabulary("preprocessing removed every token")
    index = {w: i for i, w in enumerate(vocab)}
    docs = [[index[t] for t in toks if t in index] for toks in tokenized]
    stoplist_id = STOPLIST_ID if stoplist is None else "custom"
    return TokenizedCorpus(vocab, docs, stoplist_id, STEMMER_ID if use_stemmer else None)


@dataclass
class LdaModel:
    K: int
    alpha: float
    beta: float
    vocab: list[str]
    topic_word_counts: np.ndarray
    doc_topic_counts: np.ndarray
    topic_totals: np.ndarray
    assignments: list[np.ndarray]
    seed: int
    iterations: int
    meta: dict = field(default_factory=dict)

    def check_counts(self, docs: Sequence[Sequence[int]]) -> None:
        """Recount from ``assignments`` and compare with the cached tables."""
        tw = np.zeros_like(self.topic_word_counts)
        dt = np.zeros_like(self.doc_topic_counts)
        for d, (words, z) in enumerate(zip(docs, self.assignments)):
            for w, k in zip(words, z):
                tw[k, w] += 1
                dt[d, k] += 1
        assert (tw == self.topic_word_counts).all(), "topic-word counts drifted"
        assert (dt == self.doc_topic_counts).all(), "doc-topic counts drifted"
        assert (self.topic_word_counts.sum(axis=1) == self.topic_totals).all(), "topic totals drifted"
        assert (self.doc_topic_counts.sum(axis=1) == np.array([len(d) for d in docs])).all()
        assert (self.topic_word_counts >= 0).all() and (self.doc_topic_counts >= 0).all()

    def topic_word_distribution(self) -> np.ndarray:
        V = len(self.vocab)
        return (self.topic_word_counts + self.beta) / (self.topic_totals[:, None] + V * self.beta)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "alpha": self.alpha,
            "beta": self.beta,
            "seed": self.seed,
            "iterations": self.iterations,
            "vocab": self.vocab,
            "topic_word_counts": self.topic_word_counts.tolist(),
            "doc_topic_counts": self.doc_topic_counts.tolist(),
            "topic_totals": self.topic_totals.tolist(),
            **self.meta,
        }

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")


@numba.njit(cache=True)
def _sweep(words, doc_of, z, nkw, ndk, nk, alpha, beta, uniforms):
    K = nk.shape[0]
    V = nkw.shape[1]
    vbeta = V * beta
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = doc_of[i]
        k = z[i]
        nkw[k, w] -= 1
        ndk[d, k] -= 1
        nk[k] -= 1
        total = 0.0
        for j in range(K):
            total += (ndk[d, j] + alpha) * (nkw[j, w] + beta) / (nk[j] + vbeta)
            p[j] = total
        u = uniforms[i] * total
        k = K - 1
        for j in range(K):
            if u < p[j]:
                k = j
                break
        z[i] = k
        nkw[k, w] += 1
        ndk[d, k] += 1
        nk[k] += 1


def fit_gibbs(
    corpus: TokenizedCorpus,
    K: int,
    alpha: float | None = None,
    beta: float = 0.01,
    iterations: int = 500,
    seed: int = 0,
    on_sweep: Callable[[int, LdaModel], None] | None = None,
) -> LdaModel:
    """Collapsed Gibbs sampling; ``alpha`` defaults to 50/K.

    ``on_sweep(sweep, model)`` is called after every sweep with a model
    sharing the live count tables.
    """
    if K < 1 or iterations < 1:
        raise ValueError("K and iterations must be >= 1")
    if corpus.n_tokens == 0 or not corpus.vocab:
        raise EmptyVocabulary("corpus has no tokens")
    alpha = 50.0 / K if alpha is None else alpha
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")

    V, D = len(corpus.vocab), len(corpus.docs)
    words = np.fromiter((w for doc in corpus.docs for w in doc), dtype=np.int64)
    doc_of = np.repeat(np.arange(D, dtype=np.int64), [len(doc) for doc in corpus.docs])
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=words.shape[0]).astype(np.int64)

    nkw = np.zeros((K, V), dtype=np.int64)
    ndk = np.zeros((D, K), dtype=np.int64)
    np.add.at(nkw, (z, words), 1)
    np.add.at(ndk, (doc_of, z), 1)
    nk = nkw.sum(axis=1)

    bounds = np.cumsum([0] + [len(doc) for doc in corpus.docs])

    def snapshot(done: int) -> LdaModel:
        assignments = [z[bounds[d] : bounds[d + 1]] for d in range(D)]
        return LdaModel(K, alpha, beta, list(corpus.vocab), nkw, ndk, nk, assignments, seed, done,
                        {"stoplist_id": corpus.stoplist_id, "stemmer_id": corpus.stemmer_id})

    for sweep in range(iterations):
        _sweep(words, doc_of, z, nkw, ndk, nk, alpha, beta, rng.random(words.shape[0]))
        if on_sweep is not None:
            on_sweep(sweep, snapshot(sweep + 1))
    model = snapshot(iterations)
    model.assignments = [a.copy() for a in model.assignments]
    return model


def top_words(model: LdaModel, k: int, n: int = 10) -> list[str]:
    """Highest-probability words of topic ``k`` (0-based); ties alphabetical."""
    if not 0 <= k < model.K:
        raise ValueError(f"topic id {k} out of range 0..{model.K - 1}")
    counts = model.topic_word_counts[k]
    # n_kw + beta is monotone in n_kw, so integer counts give an exact ordering
    order = sorted(range(len(model.vocab)), key=lambda w: (-int(counts[w]), model.vocab[w]))
    return [model.vocab[w] for w in order[:n]]


def topic_labels(model: LdaModel, n: int = 2) -> list[Topic]:
    labels = []
    for k in range(model.K):
        label = " ".join(top_words(model, k, n))
        labels.append(Topic(k + 1, label, len(label.split()), False))
    return labels
