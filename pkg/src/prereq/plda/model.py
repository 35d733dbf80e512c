"""Pairwise-link LDA fitted by mean-field variational EM.

Documents are generated as in LDA. For every observed ordered document pair
(d, d') a topic is drawn from each endpoint's theta and the link indicator
is Bernoulli(eta[z_dd', z_d'd]). The variational family is fully factorized:
q(theta_d) = Dir(gamma_d), q(z_dn) = phi, q(z_dd') = lambda_src,
q(z_d'd) = lambda_tgt.

The objective maximized is the evidence lower bound plus the log density of
a symmetric Beta(1 + s, 1 + s) prior on each eta entry (s = eta_smoothing),
which is exactly what the smoothed eta update maximizes; this keeps the
bound monotone under the smoothed M-step.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import digamma, gammaln

from prereq.corpus import BowCorpus, ConceptSpace
from prereq.plda.kernels import get_kernels

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class PldaError(RuntimeError):
    pass


class ElboDecreaseError(PldaError):
    pass


@dataclass
class PldaHyper:
    K: int = 100
    alpha: float = 0.01
    max_em_iters: int = 100
    min_em_iters: int = 20
    elbo_rel_tol: float = 1e-4
    nonedge_ratio: float = 5.0
    eta_smoothing: float = 1e-2
    seed: int = 0
    init_jitter: float = 0.5
    beta_floor: float = 1e-12
    all_pairs: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.nonedge_ratio < 0:
            raise ValueError("nonedge_ratio must be >= 0")
        if self.eta_smoothing <= 0:
            raise ValueError("eta_smoothing must be > 0")
        if self.max_em_iters < 1:
            raise ValueError("max_em_iters must be >= 1")


@dataclass
class PldaModel:
    log_beta: np.ndarray  # K x V
    eta: np.ndarray  # K x K
    hyper: Optional[PldaHyper] = None
    vocab: Optional[tuple] = None

    @property
    def K(self) -> int:
        return self.log_beta.shape[0]

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


@dataclass
class VariationalState:
    gamma: np.ndarray  # D x K
    phi: np.ndarray  # nnz x K, aligned with the CSR entries of the corpus
    lam_src: np.ndarray  # L x K
    lam_tgt: np.ndarray  # L x K


class LinkObservation(NamedTuple):
    source: int
    target: int
    e: int


@dataclass
class LinkSet:
    """Observed Bernoulli link values for ordered document pairs (row indices)."""

    src: np.ndarray
    tgt: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.tgt = np.asarray(self.tgt, dtype=np.int64).reshape(-1)
        self.e = np.asarray(self.e, dtype=np.float64).reshape(-1)
        if not (self.src.shape == self.tgt.shape == self.e.shape):
            raise ValueError("link arrays must have equal length")
        if np.any(self.src == self.tgt):
            raise ValueError("self-loop in link observations")
        if len(set(zip(self.src.tolist(), self.tgt.tolist()))) != len(self.src):
            raise ValueError("duplicate ordered pair in link observations")
        if np.any((self.e != 0) & (self.e != 1)):
            raise ValueError("link values must be 0 or 1")

    @classmethod
    def empty(cls) -> "LinkSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    @classmethod
    def from_observations(cls, obs: Iterable[LinkObservation]) -> "LinkSet":
        obs = list(obs)
        if not obs:
            return cls.empty()
        s, t, e = zip(*obs)
        return cls(np.array(s), np.array(t), np.array(e, dtype=np.float64))

    def __len__(self):
        return self.src.shape[0]

    def __iter__(self):
        for s, t, e in zip(self.src.tolist(), self.tgt.tolist(), self.e.tolist()):
            yield LinkObservation(s, t, int(e))

    def degree(self, n_docs: int) -> np.ndarray:
        return np.bincount(self.src, minlength=n_docs) + np.bincount(self.tgt, minlength=n_docs)


class _Arrays(NamedTuple):
    indptr: np.ndarray
    ids: np.ndarray
    cts: np.ndarray
    n_docs: int
    n_vocab: int


def _arrays(corpus) -> _Arrays:
    m = corpus.counts if isinstance(corpus, BowCorpus) else corpus
    if not sp.isspmatrix_csr(m):
        m = sp.csr_matrix(m)
    m.sort_indices()
    cts = np.ascontiguousarray(m.data, dtype=np.float64)
    if cts.size and cts.min() <= 0:
        raise PldaError("term counts must be positive")
    indptr = np.ascontiguousarray(m.indptr, dtype=np.int64)
    if np.any(np.diff(indptr) == 0):
        empty = int(np.flatnonzero(np.diff(indptr) == 0)[0])
        raise PldaError(f"document row {empty} has no terms")
    return _Arrays(indptr, np.ascontiguousarray(m.indices, dtype=np.int64), cts, m.shape[0], m.shape[1])


# ---------------------------------------------------------------------------
# Link construction
# ---------------------------------------------------------------------------


def sample_nonedges(edges, n_docs: int, ratio: float, seed) -> LinkSet:
    """Observed edges as e=1 plus ceil(ratio * |edges|) uniformly drawn non-edges as e=0."""
    if ratio < 0:
        raise ValueError("ratio must be >= 0")
    edge_list = [(int(s), int(t)) for s, t in edges]
    edge_set = set(edge_list)
    if len(edge_set) != len(edge_list):
        raise ValueError("duplicate edge")
    want = math.ceil(round(ratio * len(edge_list), 9))
    available = n_docs * (n_docs - 1) - len(edge_set)
    rng = np.random.default_rng(seed)
    if want >= available:
        if want > available:
            logger.warning("requested %d non-edges but only %d exist; using all", want, available)
        chosen = [(s, t) for s in range(n_docs) for t in range(n_docs) if s != t and (s, t) not in edge_set]
    elif want > available // 2:
        pool = [(s, t) for s in range(n_docs) for t in range(n_docs) if s != t and (s, t) not in edge_set]
        pick = np.sort(rng.choice(len(pool), size=want, replace=False))
        chosen = [pool[i] for i in pick]
    else:
        chosen = []
        taken = set()
        while len(chosen) < want:
            batch = rng.integers(0, n_docs, size=(2 * (want - len(chosen)) + 8, 2))
            for s, t in batch.tolist():
                if s == t or (s, t) in edge_set or (s, t) in taken:
                    continue
                taken.add((s, t))
                chosen.append((s, t))
                if len(chosen) == want:
                    break
    obs = [LinkObservation(s, t, 1) for s, t in edge_list]
    obs += [LinkObservation(s, t, 0) for s, t in chosen]
    return LinkSet.from_observations(obs)


def all_pair_links(edges, n_docs: int) -> LinkSet:
    """Every ordered pair of distinct documents, e=1 exactly on ``edges``."""
    edge_set = {(int(s), int(t)) for s, t in edges}
    s, t = np.nonzero(~np.eye(n_docs, dtype=bool))
    e = np.array([(a, b) in edge_set for a, b in zip(s.tolist(), t.tolist())], dtype=np.float64)
    return LinkSet(s, t, e)


def links_for_corpus(corpus: BowCorpus, graph, hyper: PldaHyper) -> LinkSet:
    """Map a DocumentGraph onto corpus rows and add non-edge observations."""
    row = corpus.row_of()
    edges = [(row[s], row[t]) for s, t in graph if s in row and t in row]
    dropped = len(graph) - len(edges)
    if dropped:
        logger.info("dropped %d edges touching documents outside the corpus", dropped)
    if hyper.all_pairs:
        return all_pair_links(edges, corpus.n_docs)
    return sample_nonedges(edges, corpus.n_docs, hyper.nonedge_ratio, hyper.seed)


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------


def init_log_beta(K: int, V: int, seed, jitter: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    raw = 1.0 + jitter * rng.random((K, V))
    return np.log(raw / raw.sum(axis=1, keepdims=True))


def init_model(hyper: PldaHyper, corpus, links: Optional[LinkSet] = None, seed=None):
    """Seeded starting point: jittered uniform beta, eta = 1/2, uniform q."""
    a = _arrays(corpus)
    links = LinkSet.empty() if links is None else links
    K = hyper.K
    seed = hyper.seed if seed is None else seed
    log_beta = init_log_beta(K, a.n_vocab, seed, hyper.init_jitter)
    eta = np.full((K, K), 0.5)
    doc_len = np.add.reduceat(a.cts, a.indptr[:-1])
    gamma = hyper.alpha + np.repeat((doc_len / K)[:, None], K, axis=1)
    state = VariationalState(
        gamma=gamma,
        phi=np.full((a.ids.shape[0], K), 1.0 / K),
        lam_src=np.full((len(links), K), 1.0 / K),
        lam_tgt=np.full((len(links), K), 1.0 / K),
    )
    return PldaModel(log_beta, eta, hyper), state


def _expected_log_theta(gamma: np.ndarray) -> np.ndarray:
    return digamma(gamma) - digamma(gamma.sum(axis=1, keepdims=True))


def _check_finite(state: VariationalState, links: LinkSet, indptr):
    # responsibilities first: a bad gamma is usually their consequence
    if not np.all(np.isfinite(state.phi)):
        n = int(np.flatnonzero(~np.isfinite(state.phi).all(axis=1))[0])
        d = int(np.searchsorted(indptr, n, side="right") - 1)
        raise PldaError(f"non-finite phi for document row {d}")
    for name, lam in (("lambda_src", state.lam_src), ("lambda_tgt", state.lam_tgt)):
        if not np.all(np.isfinite(lam)):
            l = int(np.flatnonzero(~np.isfinite(lam).all(axis=1))[0])
            raise PldaError(f"non-finite {name} for link {links.src[l]} -> {links.tgt[l]}")
    if not np.all(np.isfinite(state.gamma)):
        d = int(np.flatnonzero(~np.isfinite(state.gamma).all(axis=1))[0])
        raise PldaError(f"non-finite gamma for document row {d}")


def _e_step(model, a: _Arrays, links: LinkSet, state, alpha: float, kernels):
    elog_theta = _expected_log_theta(state.gamma)
    phi, doc_counts = kernels.doc_pass(a.indptr, a.ids, a.cts, elog_theta, model.log_beta)
    log_eta = np.log(model.eta)
    log1m_eta = np.log1p(-model.eta)
    lam_src, lam_tgt, link_counts = kernels.link_pass(
        links.src, links.tgt, links.e, elog_theta, log_eta, log1m_eta, state.lam_tgt
    )
    new = VariationalState(alpha + doc_counts + link_counts, phi, lam_src, lam_tgt)
    _check_finite(new, links, a.indptr)
    return new


def e_step(model: PldaModel, corpus, links: LinkSet, state: VariationalState, alpha: float, use_numba=None):
    """One coordinate-ascent sweep: phi, then lambda_src/lambda_tgt, then gamma.

    phi and lambda are computed from the incoming gamma; gamma is rebuilt
    from the fresh expected counts at the end.
    """
    return _e_step(model, _arrays(corpus), links, state, alpha, get_kernels(use_numba))


def _m_step(state, a: _Arrays, links: LinkSet, hyper: PldaHyper, kernels):
    stats = kernels.beta_stats(a.ids, a.cts, state.phi, a.n_vocab)
    totals = stats.sum(axis=1)
    K, V = stats.shape
    beta = np.empty_like(stats)
    for k in range(K):
        if totals[k] <= 0.0 or not np.isfinite(totals[k]):
            logger.warning("topic %d has zero expected count; keeping a uniform row", k)
            beta[k] = 1.0 / V
        else:
            row = np.maximum(stats[k] / totals[k], hyper.beta_floor)
            beta[k] = row / row.sum()
    num, den = kernels.eta_stats(links.e, state.lam_src, state.lam_tgt)
    s = hyper.eta_smoothing
    eta = (num + s) / (den + 2.0 * s)
    return PldaModel(np.log(beta), eta, hyper)


def m_step(state: VariationalState, corpus, links: LinkSet, hyper: PldaHyper, use_numba=None) -> PldaModel:
    """Closed-form beta and smoothed eta from the expected counts."""
    return _m_step(state, _arrays(corpus), links, hyper, get_kernels(use_numba))


def _elbo(model, state, a: _Arrays, links: LinkSet, hyper: PldaHyper, kernels, include_eta_prior=True):
    K = model.K
    alpha = hyper.alpha
    gamma = state.gamma
    elog_theta = _expected_log_theta(gamma)
    D = gamma.shape[0]
    total = D * (gammaln(K * alpha) - K * gammaln(alpha))
    total += (alpha - 1.0) * elog_theta.sum()
    total -= gammaln(gamma.sum(axis=1)).sum() - gammaln(gamma).sum()
    total -= ((gamma - 1.0) * elog_theta).sum()
    total += kernels.word_bound(a.indptr, a.ids, a.cts, elog_theta, model.log_beta, state.phi)
    log_eta = np.log(model.eta)
    log1m_eta = np.log1p(-model.eta)
    total += kernels.link_bound(
        links.src, links.tgt, links.e, elog_theta, log_eta, log1m_eta, state.lam_src, state.lam_tgt
    )
    if include_eta_prior:
        total += hyper.eta_smoothing * (log_eta.sum() + log1m_eta.sum())
    total = float(total)
    if not math.isfinite(total):
        raise PldaError("non-finite ELBO")
    return total


def elbo(model, state, corpus, links: LinkSet, hyper: PldaHyper, use_numba=None, include_eta_prior=True) -> float:
    """Evidence lower bound (plus the eta smoothing prior unless disabled)."""
    return _elbo(model, state, _arrays(corpus), links, hyper, get_kernels(use_numba), include_eta_prior)


@dataclass
class FitReport:
    iterations: int = 0
    elbo: list = field(default_factory=list)
    delta_rel: list = field(default_factory=list)
    converged: bool = False
    backend: str = ""

    def to_csv(self) -> str:
        lines = ["iter,elbo,delta_rel"]
        for i, (v, d) in enumerate(zip(self.elbo, self.delta_rel), start=1):
            lines.append(f"{i},{v!r},{'' if d is None else repr(d)}")
        return "\n".join(lines) + "\n"


def fit(corpus, links: Optional[LinkSet], hyper: PldaHyper, use_numba=None, check_monotone=True):
    """Alternate E and M steps until the relative ELBO gain drops below tolerance.

    The tolerance is only checked after ``min_em_iters`` sweeps: from the
    near-symmetric start the first gains are tiny while topics separate.

    Returns ``(model, report, state)``. With ``check_monotone`` a drop larger
    than 1e-8 relative raises ElboDecreaseError.
    """
    a = _arrays(corpus)
    links = LinkSet.empty() if links is None else links
    if len(links) and max(links.src.max(), links.tgt.max()) >= a.n_docs:
        raise PldaError("link references a document row outside the corpus")
    kernels = get_kernels(use_numba)
    model, state = init_model(hyper, corpus, links)
    report = FitReport(backend=kernels.name)
    prev = None
    for it in range(1, hyper.max_em_iters + 1):
        state = _e_step(model, a, links, state, hyper.alpha, kernels)
        model = _m_step(state, a, links, hyper, kernels)
        value = _elbo(model, state, a, links, hyper, kernels)
        delta = None if prev is None else (value - prev) / abs(prev)
        report.elbo.append(value)
        report.delta_rel.append(delta)
        report.iterations = it
        logger.debug("EM iter %d elbo %.6f", it, value)
        if delta is not None:
            if check_monotone and delta < -1e-8:
                raise ElboDecreaseError(
                    f"ELBO decreased at iteration {it}: {prev!r} -> {value!r} (rel {delta:.3e})"
                )
            if it >= hyper.min_em_iters and delta < hyper.elbo_rel_tol:
                report.converged = True
                break
        prev = value
    model.vocab = getattr(getattr(corpus, "vocab", None), "terms", None)
    return model, report, state


# ---------------------------------------------------------------------------
# Concept vectors
# ---------------------------------------------------------------------------


class ConceptVectorTable:
    """K-dimensional concept representations, one row per concept."""

    def __init__(self, names, matrix):
        self.names = list(names)
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self._row = {n: i for i, n in enumerate(self.names)}
        if self.matrix.shape[0] != len(self.names):
            raise ValueError("one vector per concept required")

    def __getitem__(self, name) -> np.ndarray:
        return self.matrix[self._row[name]]

    def __contains__(self, name):
        return name in self._row

    def __len__(self):
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def rows(self, names) -> np.ndarray:
        return self.matrix[[self._row[n] for n in names]]


def concept_vectors(model: PldaModel, concepts) -> ConceptVectorTable:
    """Exponentiated beta columns divided by their maximum.

    ``concepts`` is a ConceptSpace (its mapped concepts are used) or a dict
    concept -> vocabulary id.
    """
    if isinstance(concepts, ConceptSpace):
        if concepts.unmapped:
            logger.info("skipping %d unmapped concepts", len(concepts.unmapped))
        mapping = {c: concepts.vocab_id[c] for c in concepts.mapped}
    else:
        mapping = dict(concepts)
        missing = [c for c, v in mapping.items() if v is None]
        if missing:
            raise KeyError(f"unmapped concepts: {missing}")
    names = list(mapping)
    cols = model.log_beta[:, [mapping[n] for n in names]].T
    vecs = np.exp(cols - cols.max(axis=1, keepdims=True))
    return ConceptVectorTable(names, vecs)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def model_to_json(model: PldaModel) -> str:
    payload = {
        "k": model.K,
        "vocab": list(model.vocab) if model.vocab is not None else [],
        "log_beta": model.log_beta.tolist(),
        "eta": model.eta.tolist(),
        "hyper": asdict(model.hyper) if model.hyper is not None else {},
        "format_version": FORMAT_VERSION,
    }
    return json.dumps(payload)


def model_from_json(text: str) -> PldaModel:
    payload = json.loads(text)
    if payload.get("format_version") != FORMAT_VERSION:
        raise PldaError(f"unsupported model format {payload.get('format_version')!r}")
    hyper = PldaHyper(**payload["hyper"]) if payload.get("hyper") else None
    log_beta = np.array(payload["log_beta"], dtype=np.float64)
    if log_beta.shape[0] != payload["k"]:
        raise PldaError("log_beta row count does not match k")
    vocab = tuple(payload["vocab"]) or None
    return PldaModel(log_beta, np.array(payload["eta"], dtype=np.float64), hyper, vocab)


def save_model(model: PldaModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> PldaModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())
