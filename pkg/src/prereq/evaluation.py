"""Train/test splits, negative sampling, metrics and multi-split experiments."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from prereq import siamese
from prereq.baselines import FreqScorer, ScoredPair, plda_scores
from prereq.corpus import LabeledConceptPair

logger = logging.getLogger(__name__)

METHODS = ("prereq", "freq", "pairwise-lda")
THRESHOLD = 0.5
POOL_DEFINITION = "test positives plus their sampled negatives"


@dataclass
class SplitSpec:
    train_fraction: float = 0.6
    n_splits: int = 5
    negative_factor: float = 1.5
    seed: int = 0
    ks: tuple = (50, 100)

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_splits < 1:
            raise ValueError("n_splits must be >= 1")
        if self.negative_factor < 1:
            raise ValueError("negative_factor must be >= 1")


def _split_seeds(seed, n: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def split_pairs(positives: Sequence[LabeledConceptPair], spec: SplitSpec) -> list:
    """``n_splits`` seeded (train, test) partitions of the positive pairs."""
    if len(positives) < 2:
        raise ValueError("need at least two positive pairs to split")
    if any(p.label != 1 for p in positives):
        raise ValueError("split_pairs expects positives only")
    keys = [p.key for p in positives]
    if len(set(keys)) != len(keys):
        raise ValueError("positive pairs must be deduplicated")
    n = len(positives)
    n_train = min(max(math.floor(n * spec.train_fraction + 0.5), 1), n - 1)
    out = []
    for rng in _split_seeds(spec.seed, spec.n_splits):
        order = rng.permutation(n)
        out.append(([positives[i] for i in order[:n_train]], [positives[i] for i in order[n_train:]]))
    return out


def sample_negatives(positives, concepts, factor: float, seed, exclude=(), known_positives=()) -> list:
    """All reversed positives plus random concept pairs up to ceil(factor * |positives|).

    Random pairs never coincide with a positive, a reversal, a pair in
    ``exclude`` or each other. A reversal that is itself a positive (here or
    in ``known_positives``) is skipped.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    rng = np.random.default_rng(seed)
    concepts = list(concepts)
    pos_keys = {p.key for p in positives} | {tuple(k) for k in known_positives}
    forbidden = pos_keys | {tuple(k) for k in exclude}
    target = math.ceil(round(factor * len(positives), 9))
    negatives = []
    taken = set()
    for s, t in (p.key for p in positives):
        if (t, s) in pos_keys or (t, s) in taken:
            logger.warning("reversal of (%s, %s) is itself a positive; skipped", s, t)
            continue
        taken.add((t, s))
        forbidden.add((t, s))
        negatives.append(LabeledConceptPair(t, s, 0))
    need = target - len(negatives)
    n = len(concepts)
    if need <= 0:
        return negatives[:target]
    members = set(concepts)
    available = n * (n - 1) - sum(1 for a, b in forbidden if a != b and a in members and b in members)
    if need >= available // 2:
        pool = [(a, b) for a in concepts for b in concepts if a != b and (a, b) not in forbidden]
        if len(pool) < need:
            logger.warning("only %d random negatives available, %d requested", len(pool), need)
            need = len(pool)
        pick = np.sort(rng.choice(len(pool), size=need, replace=False))
        negatives.extend(LabeledConceptPair(*pool[i], 0) for i in pick)
        return negatives
    while need > 0:
        for i, j in rng.integers(0, n, size=(2 * need + 8, 2)).tolist():
            key = (concepts[i], concepts[j])
            if i == j or key in forbidden:
                continue
            forbidden.add(key)
            negatives.append(LabeledConceptPair(*key, 0))
            need -= 1
            if need == 0:
                break
    return negatives


def rank_pairs(pairs, scores) -> list:
    """ScoredPairs sorted by descending score, ties by (source, target)."""
    scored = [ScoredPair(s, t, float(v)) for (s, t), v in zip(pairs, scores)]
    return sorted(scored, key=lambda p: (-p.score, p.source, p.target))


def precision_at_k(ranked, truth, k: int) -> float:
    if k <= 0:
        raise ValueError("K must be positive")
    if len(ranked) < k:
        raise ValueError(f"ranking has {len(ranked)} items, fewer than K={k}")
    truth = set(truth)
    return sum((p[0], p[1]) in truth for p in ranked[:k]) / k


def prf(predicted, truth) -> tuple:
    """Precision, recall and F-score of binary predictions."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.size == 0:
        raise ValueError("no predictions")
    if predicted.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvalReport:
    method: str
    splits: list = field(default_factory=list)
    mean: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    METRICS = ("precision", "recall", "f_score", "p_at_50", "p_at_100")

    def finalize(self):
        self.mean = {}
        for m in self.METRICS:
            vals = [s[m] for s in self.splits if s.get(m) is not None]
            self.mean[m] = float(np.mean(vals)) if vals else None
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["split", *self.METRICS])
        fmt = lambda v: "" if v is None else repr(v)
        for i, s in enumerate(self.splits):
            writer.writerow([i, *(fmt(s.get(m)) for m in self.METRICS)])
        writer.writerow(["mean", *(fmt(self.mean.get(m)) for m in self.METRICS)])
        return buf.getvalue()


@dataclass
class ExperimentData:
    """Everything a method may need: corpus + document edges, concept ids, vectors, eta."""

    corpus: object
    doc_edges: object
    concept_ids: dict
    positives: list
    vectors: object = None
    eta: Optional[np.ndarray] = None
    name: str = "dataset"


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) if hasattr(c, "__dataclass_fields__") else c for c in configs],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _score_pool(method, data: ExperimentData, train_pairs, pool, train_config, seed):
    keys = [p.key for p in pool]
    if method == "prereq":
        cfg = siamese.TrainConfig(**{**asdict(train_config), "seed": seed})
        result = siamese.train(train_pairs, data.vectors, cfg)
        x1, x2, _ = siamese.pair_arrays(pool, data.vectors)
        return np.asarray(siamese.score(result.params, x1, x2))
    if method == "freq":
        scorer = FreqScorer(data.corpus, data.doc_edges, data.concept_ids)
        return np.array([scorer(s, t) for s, t in keys], dtype=np.float64)
    if method == "pairwise-lda":
        return plda_scores(data.eta, keys, data.vectors)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def run_experiment(data: ExperimentData, method: str, spec: SplitSpec,
                   train_config: Optional[siamese.TrainConfig] = None,
                   train_fraction_used: float = 1.0) -> EvalReport:
    """Average P/R/F and Precision@K over seeded splits.

    ``train_fraction_used`` keeps only that share of each split's training
    positives (negatives are drawn for the kept ones).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    train_config = train_config or siamese.TrainConfig()
    if data.vectors is not None:
        usable = [p for p in data.positives if p.source in data.vectors and p.target in data.vectors]
        concepts = [c for c in data.concept_ids if c in data.vectors]
    else:
        usable = list(data.positives)
        concepts = list(data.concept_ids)
    if len(usable) < len(data.positives):
        logger.info("%d labeled pairs dropped (concept without a vector)", len(data.positives) - len(usable))
    all_keys = {p.key for p in usable}
    report = EvalReport(method)
    splits = split_pairs(usable, spec)
    for i, ((train_pos, test_pos), rng) in enumerate(zip(splits, _split_seeds(spec.seed + 1, spec.n_splits))):
        neg_seed_train, neg_seed_test, model_seed, sub_seed = (int(x) for x in rng.integers(0, 2**31 - 1, 4))
        if train_fraction_used < 1.0:
            keep = max(1, math.floor(len(train_pos) * train_fraction_used + 0.5))
            pick = np.sort(np.random.default_rng(sub_seed).permutation(len(train_pos))[:keep])
            train_pos = [train_pos[j] for j in pick]
        train_neg = sample_negatives(train_pos, concepts, spec.negative_factor, neg_seed_train,
                                     known_positives=all_keys)
        test_neg = sample_negatives(test_pos, concepts, spec.negative_factor, neg_seed_test,
                                    exclude={p.key for p in train_neg}, known_positives=all_keys)
        pool = test_pos + test_neg
        scores = _score_pool(method, data, train_pos + train_neg, pool, train_config, model_seed)
        truth = np.array([p.label for p in pool], dtype=bool)
        p, r, f = prf(scores > THRESHOLD, truth)
        ranked = rank_pairs([q.key for q in pool], scores)
        truth_keys = {q.key for q in test_pos}
        row = {"precision": p, "recall": r, "f_score": f,
               "n_train": len(train_pos) + len(train_neg), "n_test": len(pool)}
        for k in spec.ks:
            row[f"p_at_{k}"] = precision_at_k(ranked, truth_keys, k) if len(ranked) >= k else None
        logger.info("%s split %d: P=%.4f R=%.4f F=%.4f", method, i, p, r, f)
        report.splits.append(row)
    report.metadata = {
        "dataset": data.name,
        "method": method,
        "config_hash": config_hash(spec, train_config, {"train_fraction_used": train_fraction_used}),
        "pool": POOL_DEFINITION,
        "threshold": THRESHOLD,
        "n_positives": len(usable),
    }
    return report.finalize()
