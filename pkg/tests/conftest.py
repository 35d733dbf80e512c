import numpy as np
import pytest
import scipy.sparse as sp

from prereq.plda import LinkSet, PldaHyper


@pytest.fixture(params=[False, True], ids=["numpy", "numba"])
def use_numba(request):
    return request.param


def random_corpus(rng, D, V, doc_len=20):
    """Dense-ish CSR count matrix with no empty rows."""
    rows = np.repeat(np.arange(D), doc_len)
    cols = rng.integers(0, V, size=D * doc_len)
    m = sp.csr_matrix((np.ones(D * doc_len), (rows, cols)), shape=(D, V))
    m.sum_duplicates()
    m.sort_indices()
    return m


def random_links(rng, D, n, p_edge=0.3):
    pairs = set()
    while len(pairs) < n:
        s, t = (int(v) for v in rng.integers(0, D, size=2))
        if s != t:
            pairs.add((s, t))
    src, tgt = np.array(sorted(pairs)).T
    return LinkSet(src, tgt, (rng.random(n) < p_edge).astype(float))


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(7)
    counts = random_corpus(rng, 12, 15)
    links = random_links(rng, 12, 30)
    hyper = PldaHyper(K=3, alpha=0.1, max_em_iters=15, min_em_iters=1, seed=3)
    return counts, links, hyper


# ---------------------------------------------------------------------------
# Acceptance reporting: one PASS/FAIL line per criterion in the terminal summary
# ---------------------------------------------------------------------------

ACCEPTANCE_LINES = []


class Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.verdict = None

    def check(self, passed, detail):
        self.verdict = ("PASS" if passed else "FAIL", detail)
        assert passed, f"criterion {self.number} ({self.title}) failed: {detail}"

    def skip(self, reason):
        self.verdict = ("SKIP", reason)
        pytest.skip(reason)


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    crit = Criterion(*marker.args)
    yield crit
    status, detail = crit.verdict or ("FAIL", "raised before reaching a verdict")
    line = f"[{status}] criterion {crit.number}: {crit.title} | {detail}"
    ACCEPTANCE_LINES.append((crit.number, line))
    print("\n" + line)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
