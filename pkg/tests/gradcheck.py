"""Central finite-difference check shared by the unit and acceptance suites."""
import numpy as np

from prereq.siamese import PARAM_NAMES, SiameseParams, loss_and_grads

# Entries whose true gradient is exactly zero (b2, dead ReLU units) only
# reach finite-difference roundoff (~1e-11), so the denominator is floored.
REL_FLOOR = 1e-5


def random_params(K, H, N, seed):
    rng = np.random.default_rng(seed)
    shapes = SiameseParams.zeros(K, H, N).tensors()
    return SiameseParams(**{n: rng.normal(size=t.shape) for n, t in shapes.items()})


def max_relative_error(params, x1, x2, y, h=1e-5):
    _, grads = loss_and_grads(params, x1, x2, y)
    worst = 0.0
    for name in PARAM_NAMES:
        t = getattr(params, name)
        for idx in np.ndindex(t.shape):
            up, down = params.copy(), params.copy()
            getattr(up, name)[idx] += h
            getattr(down, name)[idx] -= h
            numeric = (loss_and_grads(up, x1, x2, y)[0] - loss_and_grads(down, x1, x2, y)[0]) / (2 * h)
            analytic = getattr(grads, name)[idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
            worst = max(worst, err)
    return worst


def gradient_case(seed, K=4, H=3, N=2, B=6):
    rng = np.random.default_rng(1000 + seed)
    params = random_params(K, H, N, seed)
    return params, rng.random((B, K)), rng.random((B, K)), rng.integers(0, 2, B)
