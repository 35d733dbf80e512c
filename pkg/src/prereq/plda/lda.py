"""Plain LDA variational EM, written per document without the shared kernels.

Serves as the reference that pairwise-link LDA must reduce to when there
are no link observations, and as the plain-LDA representation mode.
"""
import numpy as np
import scipy.sparse as sp
from scipy.special import digamma, gammaln

from prereq.corpus import BowCorpus
from prereq.plda.model import PldaHyper, PldaModel, init_log_beta


def _rows(corpus):
    m = corpus.counts if isinstance(corpus, BowCorpus) else corpus
    m = sp.csr_matrix(m)
    m.sort_indices()
    out = []
    for d in range(m.shape[0]):
        lo, hi = m.indptr[d], m.indptr[d + 1]
        out.append((m.indices[lo:hi].astype(np.int64), m.data[lo:hi].astype(np.float64)))
    return out, m.shape[1]


def lda_bound(log_beta, gamma, phis, docs, alpha):
    K = log_beta.shape[0]
    bound = 0.0
    for d, (ids, cts) in enumerate(docs):
        g = gamma[d]
        elog = digamma(g) - digamma(g.sum())
        bound += gammaln(K * alpha) - K * gammaln(alpha) + (alpha - 1.0) * elog.sum()
        bound -= gammaln(g.sum()) - gammaln(g).sum() + ((g - 1.0) * elog).sum()
        phi = phis[d]
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(phi > 0, phi * np.log(phi), 0.0)
        bound += float(cts @ (phi * (elog[None, :] + log_beta[:, ids].T)).sum(axis=1))
        bound -= float(cts @ ent.sum(axis=1))
    return bound


def fit_lda(corpus, hyper: PldaHyper, n_iters=None):
    """Returns ``(model, bounds)``; the model's eta is the constant 1/2."""
    docs, V = _rows(corpus)
    K = hyper.K
    alpha = hyper.alpha
    log_beta = init_log_beta(K, V, hyper.seed, hyper.init_jitter)
    gamma = np.array([alpha + cts.sum() / K * np.ones(K) for _, cts in docs])
    n_iters = hyper.max_em_iters if n_iters is None else n_iters
    bounds = []
    prev = None
    for _ in range(n_iters):
        phis = []
        new_gamma = np.empty_like(gamma)
        for d, (ids, cts) in enumerate(docs):
            g = gamma[d]
            logits = (digamma(g) - digamma(g.sum()))[None, :] + log_beta[:, ids].T
            logits -= logits.max(axis=1, keepdims=True)
            phi = np.exp(logits)
            phi /= phi.sum(axis=1, keepdims=True)
            phis.append(phi)
            new_gamma[d] = alpha + cts @ phi
        gamma = new_gamma

        stats = np.zeros((K, V))
        for (ids, cts), phi in zip(docs, phis):
            stats[:, ids] += (cts[:, None] * phi).T
        beta = np.empty_like(stats)
        for k in range(K):
            tot = stats[k].sum()
            if tot <= 0:
                beta[k] = 1.0 / V
            else:
                row = np.maximum(stats[k] / tot, hyper.beta_floor)
                beta[k] = row / row.sum()
        log_beta = np.log(beta)
        value = lda_bound(log_beta, gamma, phis, docs, alpha)
        bounds.append(value)
        if (len(bounds) >= hyper.min_em_iters and prev is not None
                and (value - prev) / abs(prev) < hyper.elbo_rel_tol):
            break
        prev = value
    return PldaModel(log_beta, np.full((K, K), 0.5), hyper), bounds
