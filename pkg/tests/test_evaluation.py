import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prereq.baselines import ScoredPair
from prereq.corpus import LabeledConceptPair
from prereq.evaluation import (
    EvalReport,
    ExperimentData,
    SplitSpec,
    precision_at_k,
    prf,
    rank_pairs,
    run_experiment,
    sample_negatives,
    split_pairs,
)
from prereq.siamese import TrainConfig


def positives(n, n_concepts=None):
    names = [f"c{i:02d}" for i in range(n_concepts or n + 1)]
    return [LabeledConceptPair(names[i], names[i + 1]) for i in range(n)], names


class TestSplits:
    def test_sizes(self):
        pos, _ = positives(10)
        for train, test in split_pairs(pos, SplitSpec(0.6, 5)):
            assert (len(train), len(test)) == (6, 4)

    def test_partition(self):
        pos, _ = positives(25)
        for train, test in split_pairs(pos, SplitSpec(0.6, 5, seed=3)):
            assert set(train) | set(test) == set(pos) and not set(train) & set(test)

    def test_university_rounding(self):
        pos, _ = positives(1008)
        train, test = split_pairs(pos, SplitSpec(0.6, 1))[0]
        assert (len(train), len(test)) == (605, 403)

    def test_reproducible_and_distinct(self):
        pos, _ = positives(30)
        a = split_pairs(pos, SplitSpec(seed=5))
        b = split_pairs(pos, SplitSpec(seed=5))
        assert a == b
        assert len({tuple(p.key for p in tr) for tr, _ in a}) == 5

    def test_errors(self):
        pos, _ = positives(1)
        with pytest.raises(ValueError):
            split_pairs(pos, SplitSpec())
        with pytest.raises(ValueError):
            split_pairs([LabeledConceptPair("a", "b", 0), LabeledConceptPair("b", "c", 1)], SplitSpec())
        for bad in ({"train_fraction": 1.0}, {"n_splits": 0}, {"negative_factor": 0.9}):
            with pytest.raises(ValueError):
                SplitSpec(**bad)


class TestNegatives:
    def test_two_positives(self):
        pos, names = positives(2, 6)
        neg = sample_negatives(pos, names, 1.5, seed=0)
        assert len(neg) == 3
        assert {p.key for p in neg[:2]} == {("c01", "c00"), ("c02", "c01")}

    def test_factor_one(self):
        pos, names = positives(5, 8)
        assert {p.key for p in sample_negatives(pos, names, 1.0, seed=0)} == {(p.target, p.source) for p in pos}

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(3, 7), st.floats(1.0, 3.0), st.integers(0, 10_000))
    def test_no_collisions(self, n_pos, n_concepts, factor, seed):
        names = [f"k{i}" for i in range(n_concepts)]
        all_pairs = [(a, b) for a in names for b in names if a != b]
        rng = np.random.default_rng(seed)
        chosen = [all_pairs[i] for i in rng.choice(len(all_pairs), size=min(n_pos, len(all_pairs)), replace=False)]
        pos = [LabeledConceptPair(a, b) for a, b in chosen if (b, a) not in chosen or a < b]
        neg = sample_negatives(pos, names, factor, seed)
        keys = [p.key for p in neg]
        assert len(keys) == len(set(keys))
        pos_keys = {p.key for p in pos}
        assert not set(keys) & pos_keys
        assert all(p.label == 0 for p in neg)
        reversals = {(t, s) for s, t in pos_keys}
        assert reversals <= set(keys)
        want = math.ceil(round(factor * len(pos), 9))
        capacity = len(all_pairs) - len(pos_keys)
        assert len(neg) == min(want, capacity)

    def test_exclude_and_known(self):
        pos, names = positives(2, 4)
        neg = sample_negatives(pos, names, 3.0, seed=1, exclude={("c03", "c00")}, known_positives={("c00", "c02")})
        keys = {p.key for p in neg}
        assert ("c03", "c00") not in keys and ("c00", "c02") not in keys

    def test_reversal_that_is_positive_skipped(self, caplog):
        pos = [LabeledConceptPair("a", "b"), LabeledConceptPair("b", "a")]
        neg = sample_negatives(pos, ["a", "b", "c"], 1.0, seed=0)
        assert not {p.key for p in neg} & {("a", "b"), ("b", "a")}
        assert "itself a positive" in caplog.text

    def test_exhausted_warns(self, caplog):
        pos = [LabeledConceptPair("a", "b")]
        neg = sample_negatives(pos, ["a", "b"], 5.0, seed=0)
        assert [p.key for p in neg] == [("b", "a")]
        assert "available" in caplog.text


def brute_precision_at_k(scores, keys, truth, k):
    order = sorted(range(len(keys)), key=lambda i: (-scores[i], keys[i]))
    return sum(keys[i] in truth for i in order[:k]) / k


def brute_prf(pred, truth):
    tp = sum(p and t for p, t in zip(pred, truth))
    fp = sum(p and not t for p, t in zip(pred, truth))
    fn = sum(t and not p for p, t in zip(pred, truth))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r, (2 * p * r / (p + r) if p + r else 0.0)


class TestMetrics:
    def test_all_relevant(self):
        ranked = [ScoredPair("a", "b", 0.9), ScoredPair("b", "c", 0.8)]
        assert precision_at_k(ranked, {("a", "b"), ("b", "c")}, 2) == 1.0

    def test_empty_truth(self):
        assert precision_at_k([ScoredPair("a", "b", 1.0)], set(), 1) == 0.0

    def test_pattern(self):
        ranked = [ScoredPair(*k, s) for k, s in [(("a", "b"), 4), (("c", "d"), 3), (("e", "f"), 2), (("g", "h"), 1)]]
        assert precision_at_k(ranked, {("a", "b"), ("e", "f"), ("g", "h")}, 4) == 0.75

    def test_k_errors(self):
        with pytest.raises(ValueError):
            precision_at_k([ScoredPair("a", "b", 1.0)], set(), 0)
        with pytest.raises(ValueError):
            precision_at_k([ScoredPair("a", "b", 1.0)], set(), 2)

    def test_rank_ties_lexicographic(self):
        ranked = rank_pairs([("b", "a"), ("a", "c"), ("a", "b")], [0.5, 0.5, 0.9])
        assert [r[:2] for r in ranked] == [("a", "b"), ("a", "c"), ("b", "a")]

    def test_irrelevant_tail(self):
        ranked = rank_pairs([("a", "b"), ("c", "d")], [0.9, 0.1])
        longer = ranked + [ScoredPair("x", "y", 0.0)]
        assert precision_at_k(ranked, {("a", "b")}, 2) == precision_at_k(longer, {("a", "b")}, 2)

    def test_prf_cases(self):
        assert prf([1, 0, 1], [1, 0, 1]) == (1.0, 1.0, 1.0)
        p, r, f = prf([1, 1, 0, 0], [1, 0, 0, 0])
        assert (p, r) == (0.5, 1.0) and f == pytest.approx(2 / 3)
        p, r, f = prf([1, 1, 1, 0, 0, 0], [1, 1, 0, 1, 1, 1])
        assert (p, r, f) == pytest.approx((2 / 3, 0.4, 0.5))
        assert prf([0, 0], [1, 0]) == (0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            prf([], [])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans(), st.integers(0, 4)), min_size=1, max_size=20))
    def test_brute_force(self, rows):
        pred = [r[0] for r in rows]
        truth = [r[1] for r in rows]
        assert prf(pred, truth) == pytest.approx(brute_prf(pred, truth))
        keys = [(f"s{i}", f"t{i}") for i in range(len(rows))]
        scores = [float(r[2]) for r in rows]
        relevant = {k for k, t in zip(keys, truth) if t}
        ranked = rank_pairs(keys, scores)
        for k in range(1, len(rows) + 1):
            assert precision_at_k(ranked, relevant, k) == pytest.approx(brute_precision_at_k(scores, keys, relevant, k))


class TestReport:
    def test_mean_and_csv(self):
        rep = EvalReport("freq", splits=[
            {"precision": 0.5, "recall": 1.0, "f_score": 2 / 3, "p_at_50": None, "p_at_100": None},
            {"precision": 1.0, "recall": 0.5, "f_score": 2 / 3, "p_at_50": 1.0, "p_at_100": None},
        ]).finalize()
        assert rep.mean["precision"] == 0.75 and rep.mean["p_at_50"] == 1.0 and rep.mean["p_at_100"] is None
        lines = rep.to_csv().splitlines()
        assert lines[0] == "split,precision,recall,f_score,p_at_50,p_at_100"
        assert lines[-1].startswith("mean,0.75") and len(lines) == 4
        assert json.loads(rep.to_json())["method"] == "freq"

    def test_mean_f_is_per_split(self):
        rep = EvalReport("x", splits=[
            {"precision": 1.0, "recall": 0.2, "f_score": 1 / 3},
            {"precision": 0.2, "recall": 1.0, "f_score": 1 / 3},
        ]).finalize()
        harmonic = 2 * 0.6 * 0.6 / 1.2
        assert rep.mean["f_score"] == pytest.approx(1 / 3) and rep.mean["f_score"] != pytest.approx(harmonic)


@pytest.fixture(scope="module")
def data():
    from prereq.corpus import CONCEPT_RESTRICTED, build_corpus, build_vocabulary, match_concepts
    from prereq.plda import PldaHyper, concept_vectors, fit, links_for_corpus
    from prereq.synthetic import make_prereq_dataset

    ds = make_prereq_dataset(K=3, concepts_per_topic=4, n_docs=40, seed=2)
    vocab = build_vocabulary(ds.documents, CONCEPT_RESTRICTED, ds.concepts)
    corpus = build_corpus(ds.documents, vocab)
    space = match_concepts(ds.concepts, vocab)
    hyper = PldaHyper(K=3, alpha=0.1, max_em_iters=40)
    model, _, _ = fit(corpus, links_for_corpus(corpus, ds.graph, hyper), hyper)
    return ExperimentData(corpus, ds.graph, space.vocab_id, ds.positives,
                          concept_vectors(model, space), model.eta, "tiny")


class TestRunExperiment:
    @pytest.mark.parametrize("method", ["freq", "pairwise-lda", "prereq"])
    def test_structure(self, data, method):
        cfg = TrainConfig(iterations=50, hidden=8, out_dim=4)
        rep = run_experiment(data, method, SplitSpec(n_splits=3, seed=1), cfg)
        assert len(rep.splits) == 3
        for row in rep.splits:
            for m in ("precision", "recall", "f_score"):
                assert 0.0 <= row[m] <= 1.0
        assert rep.mean["f_score"] == pytest.approx(np.mean([s["f_score"] for s in rep.splits]))
        assert rep.metadata["pool"] and rep.metadata["threshold"] == 0.5

    def test_deterministic(self, data):
        cfg = TrainConfig(iterations=30, hidden=8, out_dim=4)
        a = run_experiment(data, "prereq", SplitSpec(n_splits=2), cfg)
        b = run_experiment(data, "prereq", SplitSpec(n_splits=2), cfg)
        assert a.to_json() == b.to_json()

    def test_unknown_method(self, data):
        with pytest.raises(ValueError):
            run_experiment(data, "cgl", SplitSpec())
