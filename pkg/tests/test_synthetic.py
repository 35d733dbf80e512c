import numpy as np

from prereq.synthetic import align_topics, make_prereq_dataset, peaked_beta, sample_planted


def test_align_recovers_permutation():
    rng = np.random.default_rng(0)
    beta = peaked_beta(5, 50, 40.0, rng)
    perm = np.array([3, 0, 4, 1, 2])
    noisy = beta[perm] + 1e-3 * rng.random(beta.shape)
    found = align_topics(beta, noisy)
    assert np.array_equal(found, np.argsort(perm))


def test_planted_corpus_shapes():
    pc = sample_planted(K=3, V=12, D=10, doc_len=20, seed=1)
    assert pc.counts.shape == (10, 12)
    assert np.all(np.asarray(pc.counts.sum(axis=1)).ravel() == 20)
    assert len(pc.links) == 90
    np.testing.assert_allclose(pc.beta.sum(axis=1), 1.0)


def test_prereq_dataset_consistent():
    ds = make_prereq_dataset(K=3, concepts_per_topic=2, n_docs=20, seed=0)
    topic = ds.concept_topic
    assert all(topic[p.source] < topic[p.target] for p in ds.positives)
    assert len(ds.positives) == 3 * 4  # pairs across topic levels (0,1), (0,2), (1,2)
    assert ds.planted_eta[0, 1] > ds.planted_eta[1, 0]
    ids = {d.id for d in ds.documents}
    assert all(s in ids and t in ids for s, t in ds.graph)


def test_deterministic():
    a = make_prereq_dataset(K=3, concepts_per_topic=2, n_docs=15, seed=4)
    b = make_prereq_dataset(K=3, concepts_per_topic=2, n_docs=15, seed=4)
    assert a.documents == b.documents and a.graph == b.graph
