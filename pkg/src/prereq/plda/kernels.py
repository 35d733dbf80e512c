"""Inner loops of the variational EM.

Every kernel exists twice: a vectorized numpy version and a loop version
compiled with numba. ``get_kernels()`` picks one according to
``PREREQ_NUMBA``; both must agree to floating-point summation order.

Array conventions
    indptr, ids, cts : CSR rows of the D x V count matrix (cts float64)
    phi              : nnz x K, one row per (document, distinct term)
    src, tgt, e      : link endpoints (int64) and observed values (float64)
    lam_src, lam_tgt : L x K
"""
from types import SimpleNamespace

import numpy as np

from prereq._accel import njit, numba_enabled


def _softmax_rows(logits):
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def doc_pass_numpy(indptr, ids, cts, elog_theta, log_beta):
    D = indptr.shape[0] - 1
    K = log_beta.shape[0]
    doc_of = np.repeat(np.arange(D), np.diff(indptr))
    phi = _softmax_rows(elog_theta[doc_of] + log_beta[:, ids].T)
    doc_counts = np.zeros((D, K))
    np.add.at(doc_counts, doc_of, cts[:, None] * phi)
    return phi, doc_counts


def link_pass_numpy(src, tgt, e, elog_theta, log_eta, log1m_eta, lam_tgt):
    D, K = elog_theta.shape
    e_col = e[:, None]
    # sum_j lam_tgt_j * B_ij with B = e log eta + (1 - e) log(1 - eta)
    msg_src = e_col * (lam_tgt @ log_eta.T) + (1.0 - e_col) * (lam_tgt @ log1m_eta.T)
    new_src = _softmax_rows(elog_theta[src] + msg_src)
    msg_tgt = e_col * (new_src @ log_eta) + (1.0 - e_col) * (new_src @ log1m_eta)
    new_tgt = _softmax_rows(elog_theta[tgt] + msg_tgt)
    link_counts = np.zeros((D, K))
    np.add.at(link_counts, src, new_src)
    np.add.at(link_counts, tgt, new_tgt)
    return new_src, new_tgt, link_counts


def beta_stats_numpy(ids, cts, phi, V):
    K = phi.shape[1]
    stats = np.zeros((V, K))
    np.add.at(stats, ids, cts[:, None] * phi)
    return stats.T.copy()


def eta_stats_numpy(e, lam_src, lam_tgt):
    num = (lam_src * e[:, None]).T @ lam_tgt
    den = lam_src.T @ lam_tgt
    return num, den


def _xlogx(p):
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos])
    return out


def word_bound_numpy(indptr, ids, cts, elog_theta, log_beta, phi):
    """sum_d sum_w c_dw sum_k phi (Elog theta + log beta - log phi)."""
    D = indptr.shape[0] - 1
    doc_of = np.repeat(np.arange(D), np.diff(indptr))
    inner = phi * (elog_theta[doc_of] + log_beta[:, ids].T) - _xlogx(phi)
    return float(np.sum(cts * inner.sum(axis=1)))


def link_bound_numpy(src, tgt, e, elog_theta, log_eta, log1m_eta, lam_src, lam_tgt):
    total = np.sum(lam_src * elog_theta[src]) - np.sum(_xlogx(lam_src))
    total += np.sum(lam_tgt * elog_theta[tgt]) - np.sum(_xlogx(lam_tgt))
    e_col = e[:, None]
    msg = e_col * (lam_tgt @ log_eta.T) + (1.0 - e_col) * (lam_tgt @ log1m_eta.T)
    total += np.sum(lam_src * msg)
    return float(total)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _softmax_inplace(row):
    m = row[0]
    for k in range(1, row.shape[0]):
        if row[k] > m:
            m = row[k]
    s = 0.0
    for k in range(row.shape[0]):
        row[k] = np.exp(row[k] - m)
        s += row[k]
    for k in range(row.shape[0]):
        row[k] /= s


@njit(cache=True)
def doc_pass_numba(indptr, ids, cts, elog_theta, log_beta):
    D = indptr.shape[0] - 1
    K = log_beta.shape[0]
    phi = np.empty((ids.shape[0], K))
    doc_counts = np.zeros((D, K))
    for d in range(D):
        for n in range(indptr[d], indptr[d + 1]):
            w = ids[n]
            for k in range(K):
                phi[n, k] = elog_theta[d, k] + log_beta[k, w]
            _softmax_inplace(phi[n])
            for k in range(K):
                doc_counts[d, k] += cts[n] * phi[n, k]
    return phi, doc_counts


@njit(cache=True)
def link_pass_numba(src, tgt, e, elog_theta, log_eta, log1m_eta, lam_tgt):
    D, K = elog_theta.shape
    L = src.shape[0]
    new_src = np.empty((L, K))
    new_tgt = np.empty((L, K))
    link_counts = np.zeros((D, K))
    for l in range(L):
        el = e[l]
        d = src[l]
        dp = tgt[l]
        for i in range(K):
            m = 0.0
            for j in range(K):
                m += lam_tgt[l, j] * (el * log_eta[i, j] + (1.0 - el) * log1m_eta[i, j])
            new_src[l, i] = elog_theta[d, i] + m
        _softmax_inplace(new_src[l])
        for j in range(K):
            m = 0.0
            for i in range(K):
                m += new_src[l, i] * (el * log_eta[i, j] + (1.0 - el) * log1m_eta[i, j])
            new_tgt[l, j] = elog_theta[dp, j] + m
        _softmax_inplace(new_tgt[l])
        for k in range(K):
            link_counts[d, k] += new_src[l, k]
            link_counts[dp, k] += new_tgt[l, k]
    return new_src, new_tgt, link_counts


@njit(cache=True)
def beta_stats_numba(ids, cts, phi, V):
    K = phi.shape[1]
    stats = np.zeros((K, V))
    for n in range(ids.shape[0]):
        w = ids[n]
        for k in range(K):
            stats[k, w] += cts[n] * phi[n, k]
    return stats


@njit(cache=True)
def eta_stats_numba(e, lam_src, lam_tgt):
    L, K = lam_src.shape
    num = np.zeros((K, K))
    den = np.zeros((K, K))
    for l in range(L):
        for i in range(K):
            a = lam_src[l, i]
            for j in range(K):
                p = a * lam_tgt[l, j]
                den[i, j] += p
                num[i, j] += e[l] * p
    return num, den


@njit(cache=True)
def word_bound_numba(indptr, ids, cts, elog_theta, log_beta, phi):
    D = indptr.shape[0] - 1
    K = log_beta.shape[0]
    total = 0.0
    for d in range(D):
        for n in range(indptr[d], indptr[d + 1]):
            w = ids[n]
            s = 0.0
            for k in range(K):
                p = phi[n, k]
                if p > 0.0:
                    s += p * (elog_theta[d, k] + log_beta[k, w] - np.log(p))
            total += cts[n] * s
    return total


@njit(cache=True)
def link_bound_numba(src, tgt, e, elog_theta, log_eta, log1m_eta, lam_src, lam_tgt):
    L, K = lam_src.shape
    total = 0.0
    for l in range(L):
        el = e[l]
        for i in range(K):
            a = lam_src[l, i]
            b = lam_tgt[l, i]
            if a > 0.0:
                total += a * (elog_theta[src[l], i] - np.log(a))
            if b > 0.0:
                total += b * (elog_theta[tgt[l], i] - np.log(b))
            for j in range(K):
                total += a * lam_tgt[l, j] * (el * log_eta[i, j] + (1.0 - el) * log1m_eta[i, j])
    return total


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    doc_pass=doc_pass_numpy,
    link_pass=link_pass_numpy,
    beta_stats=beta_stats_numpy,
    eta_stats=eta_stats_numpy,
    word_bound=word_bound_numpy,
    link_bound=link_bound_numpy,
)

NUMBA_KERNELS = SimpleNamespace(
    name="numba",
    doc_pass=doc_pass_numba,
    link_pass=link_pass_numba,
    beta_stats=beta_stats_numba,
    eta_stats=eta_stats_numba,
    word_bound=word_bound_numba,
    link_bound=link_bound_numba,
)


def get_kernels(use_numba=None):
    if use_numba is None:
        use_numba = numba_enabled()
    return NUMBA_KERNELS if use_numba else NUMPY_KERNELS
