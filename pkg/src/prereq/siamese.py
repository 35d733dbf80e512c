"""Tied-weight Siamese pair classifier with hand-written backpropagation and Adam.

Each branch is ``G(x) = relu(x W1 + b1) W2 + b2``; the head computes
``f = (G(x1) - G(x2)) W + b`` and is trained with softmax cross-entropy.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w", "b")


@dataclass
class SiameseParams:
    w1: np.ndarray  # K x H
    b1: np.ndarray  # H
    w2: np.ndarray  # H x N
    b2: np.ndarray  # N
    w: np.ndarray  # N x 2
    b: np.ndarray  # 2

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        K, H = self.w1.shape
        N = self.w2.shape[1]
        if self.b1.shape != (H,) or self.w2.shape != (H, N) or self.b2.shape != (N,):
            raise ValueError("inconsistent branch shapes")
        if self.w.shape != (N, 2) or self.b.shape != (2,):
            raise ValueError("inconsistent head shapes")

    @property
    def shape(self) -> tuple:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def tensors(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "SiameseParams":
        return SiameseParams(**{n: t.copy() for n, t in self.tensors().items()})

    @classmethod
    def zeros(cls, K: int, H: int, N: int) -> "SiameseParams":
        return cls(np.zeros((K, H)), np.zeros(H), np.zeros((H, N)), np.zeros(N), np.zeros((N, 2)), np.zeros(2))

    @classmethod
    def init(cls, K: int, H: int, N: int, seed) -> "SiameseParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        return cls(glorot(K, H), np.zeros(H), glorot(H, N), np.zeros(N), glorot(N, 2), np.zeros(2))

    def to_json(self) -> str:
        K, H, N = self.shape
        payload = {"k": K, "h": H, "n": N}
        payload.update({n: t.tolist() for n, t in self.tensors().items()})
        payload["format_version"] = FORMAT_VERSION
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SiameseParams":
        payload = json.loads(text)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format {payload.get('format_version')!r}")
        params = cls(**{n: payload[n] for n in PARAM_NAMES})
        if params.shape != (payload["k"], payload["h"], payload["n"]):
            raise ValueError("declared k/h/n do not match tensor shapes")
        return params


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    iterations: int = 3500
    hidden: int = 64
    out_dim: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch_size and iterations must be >= 1")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: SiameseParams) -> "AdamState":
        return cls(
            {n: np.zeros_like(x) for n, x in params.tensors().items()},
            {n: np.zeros_like(x) for n, x in params.tensors().items()},
            0,
        )


def _check_input(params: SiameseParams, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.w1.shape[0]:
        raise ValueError(f"input has length {x.shape[-1]}, expected {params.w1.shape[0]}")
    return x


def branch_forward(params: SiameseParams, x) -> np.ndarray:
    x = _check_input(params, x)
    return np.maximum(x @ params.w1 + params.b1, 0.0) @ params.w2 + params.b2


def pair_logits(params: SiameseParams, x1, x2) -> np.ndarray:
    return (branch_forward(params, x1) - branch_forward(params, x2)) @ params.w + params.b


def _log_softmax(f):
    f = f - f.max(axis=-1, keepdims=True)
    return f - np.log(np.exp(f).sum(axis=-1, keepdims=True))


def loss(params: SiameseParams, x1, x2, y: int) -> float:
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    return float(-_log_softmax(pair_logits(params, x1, x2))[..., y])


def score(params: SiameseParams, x_s, x_t):
    """Probability that the source is a prerequisite of the target (class 1)."""
    logp = _log_softmax(pair_logits(params, x_s, x_t))
    return np.exp(logp[..., 1])


def predict_label(params: SiameseParams, x_s, x_t):
    return (score(params, x_s, x_t) > 0.5).astype(int)


def loss_and_grads(params: SiameseParams, x1, x2, y):
    """Mean cross-entropy over a batch and its gradient for every tensor.

    ``x1``, ``x2`` are B x K, ``y`` has length B. Branch gradients from both
    inputs accumulate into the shared weights, the second with a minus sign.
    """
    x1 = np.atleast_2d(_check_input(params, x1))
    x2 = np.atleast_2d(_check_input(params, x2))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    B = x1.shape[0]
    if B == 0:
        raise ValueError("empty batch")

    a1 = x1 @ params.w1 + params.b1
    a2 = x2 @ params.w1 + params.b1
    h1 = np.maximum(a1, 0.0)
    h2 = np.maximum(a2, 0.0)
    v1 = h1 @ params.w2 + params.b2
    v2 = h2 @ params.w2 + params.b2
    diff = v1 - v2
    f = diff @ params.w + params.b
    logp = _log_softmax(f)
    mean_loss = float(-logp[np.arange(B), y].mean())

    df = np.exp(logp)
    df[np.arange(B), y] -= 1.0
    df /= B
    g_w = diff.T @ df
    g_b = df.sum(axis=0)
    d_diff = df @ params.w.T
    # v1 receives +d_diff, v2 receives -d_diff
    g_w2 = h1.T @ d_diff - h2.T @ d_diff
    g_b2 = np.zeros_like(params.b2)  # b2 cancels in v1 - v2
    d_a1 = (d_diff @ params.w2.T) * (a1 > 0)
    d_a2 = -(d_diff @ params.w2.T) * (a2 > 0)
    g_w1 = x1.T @ d_a1 + x2.T @ d_a2
    g_b1 = d_a1.sum(axis=0) + d_a2.sum(axis=0)
    grads = SiameseParams(g_w1, g_b1, g_w2, g_b2, g_w, g_b)
    return mean_loss, grads


def adam_step(params: SiameseParams, grads: SiameseParams, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update; returns new params and new state."""
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params = {}
    new_m, new_v = {}, {}
    for name, p in params.tensors().items():
        g = getattr(grads, name)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return SiameseParams(**new_params), AdamState(new_m, new_v, t)


@dataclass
class TrainResult:
    params: SiameseParams
    losses: list = field(default_factory=list)

    def loss_csv(self) -> str:
        return "iter,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.losses, start=1))


def train_arrays(x1, x2, y, config: TrainConfig) -> TrainResult:
    """Mini-batch Adam over pre-stacked pair arrays, reshuffling each epoch."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x1.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    init_seed, shuffle_seed = rng.integers(0, 2**63 - 1, size=2)
    params = SiameseParams.init(x1.shape[1], config.hidden, config.out_dim, int(init_seed))
    state = AdamState.for_params(params)
    shuffle = np.random.default_rng(int(shuffle_seed))
    order = shuffle.permutation(n)
    pos = 0
    losses = []
    for _ in range(config.iterations):
        if pos >= n:
            order = shuffle.permutation(n)
            pos = 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        value, grads = loss_and_grads(params, x1[idx], x2[idx], y[idx])
        params, state = adam_step(params, grads, state, config)
        losses.append(value)
    return TrainResult(params, losses)


def pair_arrays(pairs, vectors):
    """Stack source/target vectors and labels for a list of labeled pairs."""
    missing = sorted({c for p in pairs for c in (p.source, p.target) if c not in vectors})
    if missing:
        raise KeyError(f"concepts without vectors: {missing}")
    x1 = vectors.rows([p.source for p in pairs])
    x2 = vectors.rows([p.target for p in pairs])
    y = np.array([p.label for p in pairs], dtype=np.int64)
    return x1, x2, y


def train(pairs, vectors, config: TrainConfig) -> TrainResult:
    if not pairs:
        raise ValueError("empty training set")
    x1, x2, y = pair_arrays(pairs, vectors)
    result = train_arrays(x1, x2, y, config)
    logger.info("trained on %d pairs; loss %.4f -> %.4f", len(pairs), result.losses[0], result.losses[-1])
    return result
