#!/usr/bin/env python3
"""Time the pairwise-link LDA kernels: numba-compiled versus pure numpy.

Usage:
    python3 benchmarks/bench_kernels.py [--docs 400] [--vocab 2000] [--topics 20] [--repeat 5]

Compilation happens once before timing; each reported number is the best of
``--repeat`` runs. A final row times whole EM sweeps through ``plda.fit``.
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from prereq.plda import LinkSet, PldaHyper, fit
from prereq.plda.kernels import NUMBA_KERNELS, NUMPY_KERNELS


def make_problem(D, V, K, doc_len, n_links, seed):
    rng = np.random.default_rng(seed)
    rows = np.repeat(np.arange(D), doc_len)
    cols = rng.integers(0, V, size=D * doc_len)
    counts = sp.csr_matrix((np.ones(D * doc_len), (rows, cols)), shape=(D, V))
    counts.sum_duplicates()
    counts.sort_indices()
    pairs = set()
    while len(pairs) < n_links:
        s, t = rng.integers(0, D, size=2)
        if s != t:
            pairs.add((int(s), int(t)))
    src, tgt = np.array(sorted(pairs)).T
    e = (rng.random(len(src)) < 0.2).astype(np.float64)
    links = LinkSet(src.astype(np.int64), tgt.astype(np.int64), e)
    elog_theta = np.log(rng.dirichlet(np.ones(K), size=D))
    log_beta = np.log(rng.dirichlet(np.ones(V), size=K))
    eta = rng.uniform(0.05, 0.95, size=(K, K))
    lam = rng.dirichlet(np.ones(K), size=len(src))
    return counts, links, elog_theta, log_beta, eta, lam


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=400)
    ap.add_argument("--vocab", type=int, default=2000)
    ap.add_argument("--topics", type=int, default=20)
    ap.add_argument("--doc-len", type=int, default=150)
    ap.add_argument("--links", type=int, default=6000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sweeps", type=int, default=10)
    args = ap.parse_args()

    counts, links, elog_theta, log_beta, eta, lam = make_problem(
        args.docs, args.vocab, args.topics, args.doc_len, args.links, seed=0)
    indptr = counts.indptr.astype(np.int64)
    ids = counts.indices.astype(np.int64)
    cts = counts.data.astype(np.float64)
    log_eta, log1m_eta = np.log(eta), np.log1p(-eta)
    phi = NUMPY_KERNELS.doc_pass(indptr, ids, cts, elog_theta, log_beta)[0]
    V = args.vocab

    cases = {
        "doc_pass": lambda k: k.doc_pass(indptr, ids, cts, elog_theta, log_beta),
        "link_pass": lambda k: k.link_pass(links.src, links.tgt, links.e, elog_theta, log_eta, log1m_eta, lam),
        "beta_stats": lambda k: k.beta_stats(ids, cts, phi, V),
        "eta_stats": lambda k: k.eta_stats(links.e, lam, lam),
        "word_bound": lambda k: k.word_bound(indptr, ids, cts, elog_theta, log_beta, phi),
        "link_bound": lambda k: k.link_bound(links.src, links.tgt, links.e, elog_theta, log_eta,
                                             log1m_eta, lam, lam),
    }
    print(f"D={args.docs} V={args.vocab} K={args.topics} nnz={len(ids)} links={len(links.src)}")
    print(f"{'kernel':<12}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, call in cases.items():
        t0 = time.perf_counter()
        call(NUMBA_KERNELS)
        compile_s = time.perf_counter() - t0
        t_np = best_of(lambda: call(NUMPY_KERNELS), args.repeat)
        t_nb = best_of(lambda: call(NUMBA_KERNELS), args.repeat)
        print(f"{name:<12}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>9.1f}x"
              f"   (first numba call {compile_s:.2f}s)")

    hyper = PldaHyper(K=args.topics, alpha=0.1, max_em_iters=args.sweeps, min_em_iters=args.sweeps)
    t_fit = {}
    for label, flag in (("numpy", False), ("numba", True)):
        t0 = time.perf_counter()
        fit(counts, links, hyper, use_numba=flag, check_monotone=False)
        t_fit[label] = time.perf_counter() - t0
    print(f"{'fit x' + str(args.sweeps):<12}{1e3 * t_fit['numpy']:>12.1f}{1e3 * t_fit['numba']:>12.1f}"
          f"{t_fit['numpy'] / t_fit['numba']:>9.1f}x")


if __name__ == "__main__":
    main()
