"""Samplers for planted pairwise-link LDA corpora and planted prerequisite datasets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from prereq.corpus import DocumentGraph, LabeledConceptPair, RawDocument
from prereq.plda.model import LinkSet


@dataclass
class PlantedCorpus:
    counts: sp.csr_matrix
    links: LinkSet
    beta: np.ndarray
    eta: np.ndarray
    theta: np.ndarray


def peaked_beta(K: int, V: int, peak: float, rng) -> np.ndarray:
    """Each topic owns a contiguous block of V // K words, weighted ``peak`` times higher."""
    block = V // K
    beta = np.ones((K, V)) + 0.1 * rng.random((K, V))
    for k in range(K):
        beta[k, k * block:(k + 1) * block] *= peak
    return beta / beta.sum(axis=1, keepdims=True)


def _sample_links(theta, eta, pairs, rng):
    K = theta.shape[1]
    s, t = pairs
    cdf = np.cumsum(theta, axis=1)
    z_src = (rng.random(len(s))[:, None] > cdf[s]).sum(axis=1).clip(max=K - 1)
    z_tgt = (rng.random(len(t))[:, None] > cdf[t]).sum(axis=1).clip(max=K - 1)
    return (rng.random(len(s)) < eta[z_src, z_tgt]).astype(np.float64)


def sample_planted(K=5, V=50, D=60, doc_len=80, alpha=0.1, peak=40.0, eta=None, seed=0) -> PlantedCorpus:
    """Draw documents and an all-pairs link matrix from the generative process."""
    rng = np.random.default_rng(seed)
    beta = peaked_beta(K, V, peak, rng)
    if eta is None:
        eta = np.full((K, K), 0.05)
    theta = rng.dirichlet(np.full(K, alpha), size=D)
    rows = []
    for d in range(D):
        rows.append(rng.multinomial(doc_len, theta[d] @ beta))
    counts = sp.csr_matrix(np.array(rows, dtype=np.float64))
    s, t = np.nonzero(~np.eye(D, dtype=bool))
    e = _sample_links(theta, eta, (s, t), rng)
    return PlantedCorpus(counts, LinkSet(s, t, e), beta, eta, theta)


def align_topics(reference_beta: np.ndarray, fitted_beta: np.ndarray) -> np.ndarray:
    """Greedy max-correlation matching; ``perm[k]`` is the fitted topic for reference topic k."""
    K = reference_beta.shape[0]
    corr = np.corrcoef(reference_beta, fitted_beta)[:K, K:]
    corr = np.nan_to_num(corr, nan=-np.inf)
    perm = np.full(K, -1)
    used_ref, used_fit = set(), set()
    for _ in range(K):
        masked = corr.copy()
        masked[list(used_ref), :] = -np.inf
        masked[:, list(used_fit)] = -np.inf
        i, j = np.unravel_index(np.argmax(masked), masked.shape)
        perm[i] = j
        used_ref.add(i)
        used_fit.add(j)
    return perm


@dataclass
class PrereqDataset:
    documents: list
    graph: DocumentGraph
    concepts: list
    positives: list
    concept_topic: dict
    planted_eta: np.ndarray


def make_prereq_dataset(
    K: int = 6,
    concepts_per_topic: int = 8,
    n_docs: int = 150,
    doc_len: int = 60,
    alpha: float = 0.1,
    peak: float = 30.0,
    adjacent_rate: float = 0.3,
    distant_rate: float = 0.1,
    background_rate: float = 0.01,
    seed: int = 0,
) -> PrereqDataset:
    """Topics form a chain 0 -> 1 -> ... -> K-1.

    Document links follow the generative process with eta[i, i+1] =
    ``adjacent_rate``, eta[i, j>i+1] = ``distant_rate`` and
    ``background_rate`` elsewhere. A concept pair is a prerequisite exactly
    when the source concept's topic precedes the target's.
    """
    rng = np.random.default_rng(seed)
    V = K * concepts_per_topic
    names = [f"k{k}c{j}" for k in range(K) for j in range(concepts_per_topic)]
    topic_of = {n: i // concepts_per_topic for i, n in enumerate(names)}
    beta = peaked_beta(K, V, peak, rng)
    eta = np.full((K, K), background_rate)
    for i in range(K):
        for j in range(i + 1, K):
            eta[i, j] = adjacent_rate if j == i + 1 else distant_rate
    theta = rng.dirichlet(np.full(K, alpha), size=n_docs)
    docs = []
    for d in range(n_docs):
        words = rng.choice(V, size=doc_len, p=theta[d] @ beta)
        docs.append(RawDocument(f"doc{d:04d}", " ".join(names[w] for w in words)))
    s, t = np.nonzero(~np.eye(n_docs, dtype=bool))
    e = _sample_links(theta, eta, (s, t), rng)
    graph = DocumentGraph((docs[a].id, docs[b].id) for a, b, v in zip(s, t, e) if v == 1)
    positives = [
        LabeledConceptPair(a, b, 1)
        for a in names
        for b in names
        if topic_of[a] < topic_of[b]
    ]
    return PrereqDataset(docs, graph, names, positives, topic_of, eta)
