import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragtopics import evaluation as ev
from ragtopics.embedding import cosine_similarity, embed_batch
from ragtopics.errors import AllTopicsEmpty, DimensionMismatch
from ragtopics.evaluation import RetrievalParams, compare_methods, reliability, validity
from ragtopics.vectorstore import VectorStore

from conftest import SYNTHETIC_TWEETS


class Lookup:
    """Embedder stand-in returning hand-chosen vectors per label."""

    def __init__(self, table, model_name="toy"):
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.model_name = model_name

    def __call__(self, texts):
        return np.stack([self.table[t] for t in texts])


# --- validity ---------------------------------------------------------------


@pytest.fixture
def hand_store():
    rows = [(f"a{i}", [0.5, 0, math.sqrt(0.75), 0]) for i in range(2)]
    rows += [(f"b{i}", [0, 0.8, 0, 0.6]) for i in range(6)]
    rows.append(("far", [-1, -1, 0, 0]))
    return VectorStore.build(rows, model_name="toy")


def test_validity_hand_example(hand_store):
    emb = Lookup({"A": [1, 0, 0, 0], "B": [0, 1, 0, 0]})
    report = validity(["A", "B"], hand_store, emb, RetrievalParams(0.3, 100))
    assert [t.retrieved_count for t in report.per_topic] == [2, 6]
    assert report.per_topic[0].mean_similarity == pytest.approx(0.5, abs=1e-6)
    assert report.per_topic[1].mean_similarity == pytest.approx(0.8, abs=1e-6)
    assert report.weighted_score == pytest.approx((0.5 * 2 + 0.8 * 6) / 8, abs=1e-6)
    assert report.stderr > 0
    assert report.retrieval_params == {"floor": 0.3, "cap": 100}


def test_validity_cap_limits_weight(hand_store):
    emb = Lookup({"A": [1, 0, 0, 0], "B": [0, 1, 0, 0]})
    report = validity(["A", "B"], hand_store, emb, RetrievalParams(0.3, 2))
    assert [t.retrieved_count for t in report.per_topic] == [2, 2]
    assert report.weighted_score == pytest.approx(0.65, abs=1e-6)


def test_zero_retrieval_topic_has_no_weight(hand_store):
    emb = Lookup({"A": [1, 0, 0, 0], "B": [0, 1, 0, 0], "Z": [0, 0, -1, -1]})
    base = validity(["A", "B"], hand_store, emb)
    with_empty = validity(["A", "Z", "B"], hand_store, emb)
    assert with_empty.per_topic[1].zero_retrieval
    assert with_empty.weighted_score == base.weighted_score
    assert any("zero-retrieval" in n for n in with_empty.notes)
    with pytest.raises(AllTopicsEmpty):
        validity(["Z"], hand_store, emb)


def test_validity_refuses_foreign_index_without_texts(hand_store, det_embedder):
    with pytest.raises(DimensionMismatch):
        validity(["vaccine"], hand_store, det_embedder)


def brute_force_validity(labels, doc_texts, embedder, floor, cap):
    """All-pairs oracle: score every (topic, doc) pair with the scalar cosine.

    Documents go through the same float32 rounding the index applies.
    """
    docs = embed_batch(doc_texts, embedder)
    docs = (docs / np.linalg.norm(docs, axis=1, keepdims=True)).astype(np.float32).astype(np.float64)
    topics = embed_batch(labels, embedder)
    num = den = 0.0
    for t in topics:
        sims = sorted((cosine_similarity(d, t) for d in docs), reverse=True)
        kept = [s for s in sims if s >= floor][:cap]
        if kept:
            num += sum(kept)
            den += len(kept)
    return num / den


@pytest.mark.parametrize("n_docs,floor,cap", [(5, 0.05, 100), (20, 0.1, 3), (20, 0.05, 100), (50, 0.15, 7)])
def test_validity_matches_all_pairs_oracle(det_embedder, n_docs, floor, cap):
    texts = [SYNTHETIC_TWEETS[i % 20] + f" note {i}" for i in range(n_docs)]
    ids = [f"c{i}" for i in range(n_docs)]
    store = VectorStore.build(zip(ids, embed_batch(texts, det_embedder)), model_name=det_embedder.model_name)
    labels = ["Vaccine Safety", "Side Effects", "Trust Issues", "Natural Immunity", "Vaccine Mandates"]
    report = validity(labels, store, det_embedder, RetrievalParams(floor, cap))
    assert report.weighted_score == pytest.approx(brute_force_validity(labels, texts, det_embedder, floor, cap),
                                                  abs=1e-6)


def test_validity_reembeds_with_eval_embedder(det_embedder):
    from dataclasses import replace

    texts = {f"c{i}": t for i, t in enumerate(SYNTHETIC_TWEETS)}
    index_emb = replace(det_embedder, model_name="other-index", dim=64)
    store = VectorStore.build(zip(texts, embed_batch(list(texts.values()), index_emb)), model_name="other-index")
    direct = VectorStore.build(zip(texts, embed_batch(list(texts.values()), det_embedder)),
                               model_name=det_embedder.model_name)
    params = RetrievalParams(0.05, 100)
    a = validity(["Vaccine Safety"], store, det_embedder, params, texts=texts)
    b = validity(["Vaccine Safety"], direct, det_embedder, params)
    assert a.weighted_score == b.weighted_score
    assert any("re-embedded" in n for n in a.notes)


def test_weighted_mean_and_se():
    mean, se = ev.weighted_mean_and_se([0.5, 0.8], [2, 6])
    assert mean == pytest.approx(0.725)
    assert ev.weighted_mean_and_se([0.4], [3]) == (pytest.approx(0.4), 0.0)
    _, se_equal = ev.weighted_mean_and_se([0.2, 0.4, 0.6], [1, 1, 1])
    assert se_equal == pytest.approx(np.std([0.2, 0.4, 0.6], ddof=1) / math.sqrt(3))


# --- reliability ------------------------------------------------------------


def test_reliability_identical_and_orthogonal():
    emb = Lookup({"x": [1, 0, 0, 0], "y": [0, 1, 0, 0], "p": [0, 0, 1, 0], "q": [0, 0, 0, 1]})
    rep = reliability([["x", "y"], ["y", "x"], ["p", "q"]], emb)
    assert rep.pairs == ["R1->R2", "R1->R3"]
    assert rep.scores_vs_anchor[0] == 1.0
    assert rep.scores_vs_anchor[1] == 0.0
    assert rep.score("R3") == 0.0


def test_reliability_toy_and_asymmetry():
    emb = Lookup({"e1": [1, 0], "e2": [0, 1], "diag": [1, 1]})
    rep = reliability([["e1", "e2"], ["diag"]], emb)
    assert rep.scores_vs_anchor[0] == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    forward = reliability([["e1"], ["e1", "e2"]], emb).scores_vs_anchor[0]
    backward = reliability([["e1", "e2"], ["e1"]], emb).scores_vs_anchor[0]
    assert forward == pytest.approx(1.0) and backward == pytest.approx(0.5)


def test_reliability_anchor_choice_and_matrix():
    emb = Lookup({"e1": [1, 0], "e2": [0, 1], "diag": [1, 1]})
    rep = reliability([["e1"], ["e1", "e2"], ["diag"]], emb, anchor=1, full_matrix=True)
    assert rep.anchor == "R2" and rep.pairs == ["R2->R1", "R2->R3"]
    assert rep.full_matrix[1][0] == pytest.approx(0.5)
    assert all(rep.full_matrix[i][i] == pytest.approx(1.0) for i in range(3))


def test_reliability_needs_two_rounds():
    emb = Lookup({"a": [1, 0]})
    with pytest.raises(ValueError):
        reliability([["a"]], emb)
    with pytest.raises(ValueError):
        reliability([["a"], []], emb)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(2, 16), st.integers(0, 2**32 - 1))
def test_reliability_permutation_invariant_and_bounded(n_a, n_b, dim, seed):
    rng = np.random.default_rng(seed)
    table = {f"t{i}": rng.normal(size=dim) for i in range(n_a + n_b)}
    emb = Lookup(table)
    a = [f"t{i}" for i in range(n_a)]
    b = [f"t{i}" for i in range(n_a, n_a + n_b)]
    base = reliability([a, b], emb).scores_vs_anchor[0]
    shuffled = reliability([list(rng.permutation(a)), list(rng.permutation(b))], emb).scores_vs_anchor[0]
    assert base == shuffled
    assert -1.0 <= base <= 1.0
    assert reliability([a, a], emb).scores_vs_anchor[0] == pytest.approx(1.0, abs=1e-12)


def test_reliability_with_deterministic_embedder(det_embedder):
    rounds = [["Vaccine Safety", "Side Effects"], ["Side Effects", "Vaccine Safety"], ["Holiday Plans"]]
    rep = reliability(rounds, det_embedder)
    assert rep.scores_vs_anchor[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.scores_vs_anchor[1] < 0.9
    assert rep.eval_embedder["model_name"] == "hash-trigram-v1"


# --- comparison, fixtures, output --------------------------------------------


def test_compare_methods(hand_store):
    emb = Lookup({"A": [1, 0, 0, 0], "B": [0, 1, 0, 0]})
    reports = compare_methods({"weak": ["A"], "strong": ["B"], "mixed": ["A", "B"]}, hand_store, emb)
    assert [r.method_name for r in reports] == ["strong", "mixed", "weak"]
    same = compare_methods({"one": ["A", "B"], "two": ["A", "B"]}, hand_store, emb)
    assert same[0].weighted_score == same[1].weighted_score
    assert len(compare_methods({"only": ["B"]}, hand_store, emb)) == 1
    with pytest.raises(ValueError):
        compare_methods({}, hand_store, emb)


def test_published_fixtures():
    fx = ev.load_fixtures()
    assert set(ev.AGENTIC_ROUNDS) <= set(fx)
    assert all(len(fx[name]) == 10 for name in ev.AGENTIC_ROUNDS)
    assert fx["agentic_rag_round_1"][:3] == ["Vaccine Safety", "Side Effects", "Trust Issues"]
    assert fx["agentic_rag_round_2"][-1] == "Natural Immunity"
    assert fx[ev.LLM_PROMPTING][-1] == "Others"
    lda = fx[ev.LDA_PUBLISHED]
    assert len(lda) > len(set(lda))


def test_csv_and_tables(hand_store):
    emb = Lookup({"A": [1, 0, 0, 0], "B": [0, 1, 0, 0]})
    reports = compare_methods({"m1": ["A", "B"], "m2": ["B"]}, hand_store, emb)
    rows = list(csv.DictReader(io.StringIO(ev.validity_csv(reports))))
    assert [r["method"] for r in rows] == ["m2", "m1"]
    assert float(rows[1]["score"]) == reports[1].weighted_score
    assert "0.80" in ev.format_validity_table(reports)

    rel = reliability([["A"], ["A"], ["B"]], emb)
    rows = list(csv.DictReader(io.StringIO(ev.reliability_csv(rel))))
    assert [(r["pair"], float(r["score"])) for r in rows] == [("R1->R2", 1.0), ("R1->R3", 0.0)]
    assert "R1->R3" in ev.format_reliability_table(rel)
