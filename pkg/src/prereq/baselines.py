"""Comparison scores: Freq co-occurrence counts and the pairwise-LDA bilinear score."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from prereq.corpus import BowCorpus


class ScoredPair(NamedTuple):
    source: str
    target: str
    score: float


class FreqScorer:
    """Counts document edges (d, d') with the source concept in d and the target in d'.

    Presence is precomputed once as a concept x document boolean matrix so
    scoring a pair is a single dot product.
    """

    def __init__(self, corpus: BowCorpus, doc_edges, concept_ids: dict):
        row = corpus.row_of()
        self.edges = [(row[s], row[t]) for s, t in doc_edges if s in row and t in row]
        self.concepts = list(concept_ids)
        self._row = {c: i for i, c in enumerate(self.concepts)}
        ids = [concept_ids[c] for c in self.concepts]
        present = (corpus.counts[:, ids] > 0).T.toarray() if ids else np.zeros((0, corpus.n_docs), bool)
        self.present = present.astype(np.int64)
        if self.edges:
            src, tgt = np.array(self.edges).T
            self._src = self.present[:, src]
            self._tgt = self.present[:, tgt]
        else:
            self._src = self._tgt = np.zeros((len(self.concepts), 0), np.int64)

    def __call__(self, source: str, target: str) -> int:
        return int(self._src[self._row[source]] @ self._tgt[self._row[target]])


def freq_score(pair, corpus: BowCorpus, doc_edges, concept_ids: dict) -> int:
    """Number of document edges whose source contains pair[0] and target contains pair[1]."""
    source, target = pair
    return FreqScorer(corpus, doc_edges, {source: concept_ids[source], target: concept_ids[target]})(source, target)


def plda_score(eta: np.ndarray, pair, vectors) -> float:
    """v_s^T eta v_t over max-normalized concept vectors."""
    source, target = pair
    for c in (source, target):
        if c not in vectors:
            raise KeyError(f"unmapped concept {c!r}")
    return float(vectors[source] @ np.asarray(eta) @ vectors[target])


def plda_scores(eta: np.ndarray, pairs, vectors) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    xs = vectors.rows([p[0] for p in pairs])
    xt = vectors.rows([p[1] for p in pairs])
    return np.einsum("ik,kl,il->i", xs, np.asarray(eta), xt)
