"""``prereq`` command line: staged pipeline with artifacts persisted in an output directory.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""
from __future__ import annotations

import contextlib
import dataclasses
import fcntl
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import click

from prereq import corpus as C
from prereq import io as pio
from prereq import plda, siamese
from prereq.evaluation import METHODS, ExperimentData, SplitSpec, run_experiment, sample_negatives

logger = logging.getLogger("prereq")


class ConfigError(Exception):
    """Invalid configuration or input; maps to exit code 1."""


@dataclass
class PipelineConfig:
    documents: Optional[str] = None
    playlists: Optional[str] = None
    edges: Optional[str] = None
    concepts: Optional[str] = None
    pairs: Optional[str] = None
    output_dir: str = "prereq_out"
    dataset_name: str = "dataset"
    vocab_mode: str = C.FULL_NGRAM
    n_max: int = 3
    min_df: int = 1
    K: int = 100
    alpha: float = 0.01
    max_em_iters: int = 100
    min_em_iters: int = 20
    elbo_rel_tol: float = 1e-4
    nonedge_ratio: float = 5.0
    eta_smoothing: float = 1e-2
    init_jitter: float = 0.5
    all_pairs: bool = False
    edge_budget: Optional[int] = None
    learning_rate: float = 1e-4
    batch_size: int = 128
    iterations: int = 3500
    hidden: int = 64
    out_dim: int = 32
    train_fraction: float = 0.6
    n_splits: int = 5
    negative_factor: float = 1.5
    train_subsample: float = 1.0
    seed: int = 0

    @classmethod
    def load(cls, path: Optional[str]) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a flat JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        nested = [k for k, v in raw.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigError(f"config must be flat; nested values for: {', '.join(nested)}")
        base = Path(path).resolve().parent
        for key in ("documents", "playlists", "edges", "concepts", "pairs", "output_dir"):
            if raw.get(key) is not None and not os.path.isabs(raw[key]):
                raw[key] = str(base / raw[key])
        return cls(**raw)

    def hyper(self) -> plda.PldaHyper:
        return plda.PldaHyper(
            K=self.K, alpha=self.alpha, max_em_iters=self.max_em_iters, min_em_iters=self.min_em_iters,
            elbo_rel_tol=self.elbo_rel_tol, nonedge_ratio=self.nonedge_ratio,
            eta_smoothing=self.eta_smoothing, seed=self.seed, init_jitter=self.init_jitter,
            all_pairs=self.all_pairs,
        )

    def train_config(self) -> siamese.TrainConfig:
        return siamese.TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size, iterations=self.iterations,
            hidden=self.hidden, out_dim=self.out_dim, seed=self.seed,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train_fraction, self.n_splits, self.negative_factor, self.seed)

    def validate(self, need=()):
        if self.vocab_mode not in C.VOCAB_MODES:
            raise ConfigError(f"vocab_mode must be one of {C.VOCAB_MODES}")
        if self.edge_budget is not None and self.edge_budget < 0:
            raise ConfigError("edge_budget must be >= 0")
        if not 0 < self.train_subsample <= 1:
            raise ConfigError("train_subsample must lie in (0, 1]")
        try:
            self.hyper()
            self.train_config()
            self.split_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for key in need:
            value = getattr(self, key)
            if value is None:
                raise ConfigError(f"config key {key!r} is required for this command")
            if not Path(value).is_file():
                raise ConfigError(f"{key} file not found: {value}")
        out = Path(self.output_dir)
        probe = out if out.exists() else out.parent
        if not probe.exists() or not os.access(probe, os.W_OK):
            raise ConfigError(f"output_dir is not writable: {out}")


class Artifacts:
    """File names inside the output directory."""

    def __init__(self, root):
        self.root = Path(root)

    def __getattr__(self, name):
        names = {
            "vocab": "vocab.json", "bow": "bow.jsonl", "doc_edges": "doc_edges.tsv",
            "concepts": "concepts.tsv", "pairs": "pairs.tsv", "stats": "stats.json",
            "model": "model.json", "fit_report": "fit_report.csv", "siamese": "siamese.json",
            "loss": "loss.csv", "predictions": "predictions.tsv", "lock": ".prereq.lock",
        }
        if name not in names:
            raise AttributeError(name)
        return self.root / names[name]


@contextlib.contextmanager
def output_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ".prereq.lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            raise RuntimeError(f"another prereq process is writing to {root}") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _setup_logging():
    level = os.environ.get("PREREQ_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("prereq")
    root.handlers = [handler]
    root.setLevel(levels.get(level, logging.INFO))
    root.propagate = False


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Loading prep artifacts
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    corpus: C.BowCorpus
    graph: C.DocumentGraph
    concepts: C.ConceptSpace
    pairs: list


def load_prepared(art: Artifacts) -> Prepared:
    needed = [art.vocab, art.bow, art.doc_edges, art.concepts, art.pairs]
    missing = [p.name for p in needed if not p.is_file()]
    if missing:
        raise ConfigError(f"prep artifacts missing ({', '.join(missing)}); run prep first")
    v = json.loads(art.vocab.read_text(encoding="utf-8"))
    vocab = C.Vocabulary(tuple(v["terms"]), v["mode"], v["n_max"])
    bows = []
    for line in art.bow.read_text(encoding="utf-8").splitlines():
        obj = json.loads(line)
        bows.append(C.BowDocument(obj["id"], {int(i): int(c) for i, c in obj["counts"]}))
    corpus = C.BowCorpus([b.doc_id for b in bows], C.bow_matrix(bows, len(vocab)), vocab)
    graph = C.DocumentGraph(pio.read_edges(art.doc_edges))
    names, ids = [], {}
    for line in art.concepts.read_text(encoding="utf-8").splitlines():
        name, _, vid = line.partition("\t")
        names.append(name)
        if vid:
            ids[name] = int(vid)
    return Prepared(corpus, graph, C.ConceptSpace(names, ids), pio.read_pairs(art.pairs))


def _budget_graph(cfg: PipelineConfig, graph: C.DocumentGraph) -> C.DocumentGraph:
    if cfg.edge_budget is None:
        return graph
    sub = graph.subsample(cfg.edge_budget, cfg.seed)
    logger.info("edge budget %d: using %d of %d document edges", cfg.edge_budget, len(sub), len(graph))
    return sub


def _fit(cfg: PipelineConfig, prep: Prepared):
    hyper = cfg.hyper()
    graph = _budget_graph(cfg, prep.graph)
    links = plda.links_for_corpus(prep.corpus, graph, hyper)
    logger.info("fitting pairwise-link LDA: K=%d, %d documents, %d link observations",
                hyper.K, prep.corpus.n_docs, len(links))
    model, report, _ = plda.fit(prep.corpus, links, hyper)
    logger.info("EM stopped after %d iterations (converged=%s), ELBO %.6f",
                report.iterations, report.converged, report.elbo[-1])
    return model, report


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def common_options(fn):
    fn = click.option("--all-pairs", "all_pairs", is_flag=True, default=None,
                      help="Model every ordered document pair instead of sampled non-edges.")(fn)
    fn = click.option("--method", type=click.Choice(METHODS), default="prereq", show_default=True)(fn)
    fn = click.option("--edge-budget", type=int, default=None, help="Subsample this many document edges.")(fn)
    fn = click.option("--seed", type=int, default=None)(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)(fn)
    return fn


def _config(config_path, seed, edge_budget, all_pairs) -> PipelineConfig:
    cfg = PipelineConfig.load(config_path)
    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if edge_budget is not None:
        overrides["edge_budget"] = edge_budget
    if all_pairs:
        overrides["all_pairs"] = True
    return dataclasses.replace(cfg, **overrides)


@click.group()
def cli():
    """Learn concept prerequisite relations from documents and labeled concept pairs."""
    _setup_logging()


@cli.command()
@common_options
def prep(config_path, seed, edge_budget, method, all_pairs):
    """Build vocabulary, bag-of-words vectors, document graph and concept mapping."""
    cfg = _config(config_path, seed, edge_budget, all_pairs)
    need = ["documents", "concepts", "pairs"]
    if cfg.edges is None and cfg.playlists is None:
        raise ConfigError("prep needs either 'edges' or 'playlists'")
    need.append("edges" if cfg.edges is not None else "playlists")
    cfg.validate(need)

    docs = pio.read_documents(cfg.documents)
    if cfg.playlists is not None:
        playlists = pio.read_playlists(cfg.playlists)
        graph = C.playlists_to_graph(vids for _, vids in playlists)
        in_playlist = {v for _, vids in playlists for v in vids}
        docs = [d for d in docs if d.id in in_playlist]
        if cfg.edges is not None:
            graph = graph.union(C.DocumentGraph(pio.read_edges(cfg.edges)))
    else:
        graph = C.DocumentGraph(pio.read_edges(cfg.edges))
    concept_list = pio.read_concepts(cfg.concepts)
    pairs = pio.read_pairs(cfg.pairs)
    if not docs:
        raise ConfigError("no documents admitted")

    listed = {C.normalize_phrase(c) for c in concept_list}
    extra = [c for p in pairs for c in (p.source, p.target) if C.normalize_phrase(c) not in listed]
    if extra:
        logger.info("%d concepts appear only in the pair file; added to the concept list", len(set(extra)))
        concept_list = concept_list + list(dict.fromkeys(extra))

    vocab = C.build_vocabulary(docs, cfg.vocab_mode, concept_list, n_max=cfg.n_max, min_df=cfg.min_df)
    corpus = C.build_corpus(docs, vocab)
    graph = graph.restrict(corpus.doc_ids)
    space = C.match_concepts(concept_list, vocab)
    norm_pairs = []
    seen = set()
    for p in pairs:
        key = (C.normalize_phrase(p.source), C.normalize_phrase(p.target))
        if key in seen or key[0] == key[1]:
            continue
        seen.add(key)
        norm_pairs.append(C.LabeledConceptPair(key[0], key[1], p.label))

    art = Artifacts(cfg.output_dir)
    with output_lock(art.root):
        _write_json(art.vocab, {"terms": list(vocab.terms), "mode": vocab.mode, "n_max": vocab.n_max})
        with open(art.bow, "w", encoding="utf-8") as fh:
            m = corpus.counts
            for r, doc_id in enumerate(corpus.doc_ids):
                lo, hi = m.indptr[r], m.indptr[r + 1]
                counts = [[int(i), int(c)] for i, c in zip(m.indices[lo:hi], m.data[lo:hi])]
                fh.write(json.dumps({"id": doc_id, "counts": counts}) + "\n")
        pio.write_edges(art.doc_edges, graph)
        art.concepts.write_text(
            "".join(f"{c}\t{space.vocab_id.get(c, '')}\n" for c in space.concepts), encoding="utf-8"
        )
        pio.write_pairs(art.pairs, norm_pairs)
        n_pos = sum(p.label == 1 for p in norm_pairs)
        stats = {
            "dataset": cfg.dataset_name, "n_documents": corpus.n_docs, "n_doc_edges": len(graph),
            "n_concept_pairs": n_pos, "n_concepts_mapped": len(space.mapped),
            "n_concepts_given": len(concept_list), "vocab_size": len(vocab),
        }
        _write_json(art.stats, stats)
    click.echo("|D| |E_D| |E_C| |C|")
    click.echo(f"{corpus.n_docs} {len(graph)} {n_pos} {len(space.mapped)}")


@cli.command("fit-plda")
@common_options
def fit_plda(config_path, seed, edge_budget, method, all_pairs):
    """Fit pairwise-link LDA on the prepared corpus and save model.json."""
    cfg = _config(config_path, seed, edge_budget, all_pairs)
    cfg.validate()
    art = Artifacts(cfg.output_dir)
    prep_data = load_prepared(art)
    with output_lock(art.root):
        model, report = _fit(cfg, prep_data)
        plda.save_model(model, art.model)
        art.fit_report.write_text(report.to_csv(), encoding="utf-8")
    click.echo(f"model written to {art.model} ({report.iterations} EM iterations)")


def _load_model(art: Artifacts) -> plda.PldaModel:
    if not art.model.is_file():
        raise ConfigError("model.json missing; run fit-plda first")
    return plda.load_model(art.model)


@cli.command()
@common_options
def train(config_path, seed, edge_budget, method, all_pairs):
    """Train the Siamese classifier on all labeled pairs."""
    cfg = _config(config_path, seed, edge_budget, all_pairs)
    cfg.validate()
    art = Artifacts(cfg.output_dir)
    prep_data = load_prepared(art)
    model = _load_model(art)
    vectors = plda.concept_vectors(model, prep_data.concepts)
    usable = [p for p in prep_data.pairs if p.source in vectors and p.target in vectors]
    positives = [p for p in usable if p.label == 1]
    explicit_neg = [p for p in usable if p.label == 0]
    if not positives:
        raise ConfigError("no labeled positive pair has both concepts mapped")
    negatives = sample_negatives(positives, vectors.names, cfg.negative_factor, cfg.seed,
                                 exclude={p.key for p in explicit_neg})
    result = siamese.train(positives + negatives + explicit_neg, vectors, cfg.train_config())
    with output_lock(art.root):
        art.siamese.write_text(result.params.to_json(), encoding="utf-8")
        art.loss.write_text(result.loss_csv(), encoding="utf-8")
    click.echo(f"trained on {len(positives)} positive and {len(negatives) + len(explicit_neg)} negative pairs; "
               f"final loss {result.losses[-1]:.4f}")


@cli.command()
@common_options
@click.option("--pairs", "pairs_path", required=True, type=click.Path(dir_okay=False),
              help="TSV of source<TAB>target pairs to score.")
@click.option("--output", "output_path", type=click.Path(dir_okay=False), default=None,
              help="Defaults to predictions.tsv in the output directory.")
def predict(config_path, seed, edge_budget, method, all_pairs, pairs_path, output_path):
    """Score arbitrary concept pairs with the trained model (or a baseline)."""
    cfg = _config(config_path, seed, edge_budget, all_pairs)
    cfg.validate()
    if not Path(pairs_path).is_file():
        raise ConfigError(f"pairs file not found: {pairs_path}")
    art = Artifacts(cfg.output_dir)
    prep_data = load_prepared(art)
    rows = pio.read_unlabeled_pairs(pairs_path)
    model = _load_model(art) if method != "freq" else None
    vectors = plda.concept_vectors(model, prep_data.concepts) if model is not None else None
    known = vectors if vectors is not None else prep_data.concepts.vocab_id
    errors = []
    keys = []
    for lineno, s, t in rows:
        s, t = C.normalize_phrase(s), C.normalize_phrase(t)
        if s == t:
            errors.append(f"line {lineno}: self-pair ({s!r}, {t!r}) rejected")
            continue
        unknown = [c for c in (s, t) if c not in known]
        if unknown:
            errors.append(f"line {lineno}: unknown concept(s) {', '.join(map(repr, unknown))}")
            continue
        keys.append((s, t))
    if errors:
        for e in errors:
            click.echo(e, err=True)
        raise ConfigError(f"{len(errors)} invalid row(s) in {pairs_path}")

    if method == "prereq":
        if not art.siamese.is_file():
            raise ConfigError("siamese.json missing; run train first")
        params = siamese.SiameseParams.from_json(art.siamese.read_text(encoding="utf-8"))
        x1 = vectors.rows([s for s, _ in keys])
        x2 = vectors.rows([t for _, t in keys])
        scores = siamese.score(params, x1, x2) if keys else []
    elif method == "freq":
        from prereq.baselines import FreqScorer
        scorer = FreqScorer(prep_data.corpus, _budget_graph(cfg, prep_data.graph), prep_data.concepts.vocab_id)
        scores = [scorer(s, t) for s, t in keys]
    else:
        from prereq.baselines import plda_scores
        scores = plda_scores(model.eta, keys, vectors)
    out = Path(output_path) if output_path else art.predictions
    pio.write_scores(out, [(s, t, v if isinstance(v, int) else float(v)) for (s, t), v in zip(keys, scores)])
    click.echo(f"{len(keys)} scores written to {out}")


@cli.command("eval")
@common_options
def eval_cmd(config_path, seed, edge_budget, method, all_pairs):
    """Run the multi-split experiment for one method and write report_<method>.json/.csv."""
    cfg = _config(config_path, seed, edge_budget, all_pairs)
    cfg.validate()
    art = Artifacts(cfg.output_dir)
    prep_data = load_prepared(art)
    graph = _budget_graph(cfg, prep_data.graph)
    model = None
    if method != "freq":
        if cfg.edge_budget is not None or not art.model.is_file():
            model, _ = _fit(cfg, prep_data)
        else:
            model = _load_model(art)
    vectors = plda.concept_vectors(model, prep_data.concepts) if model is not None else None
    data = ExperimentData(
        corpus=prep_data.corpus, doc_edges=graph, concept_ids=prep_data.concepts.vocab_id,
        positives=[p for p in prep_data.pairs if p.label == 1], vectors=vectors,
        eta=None if model is None else model.eta, name=cfg.dataset_name,
    )
    if data.vectors is None:
        data.positives = [p for p in data.positives if p.source in data.concept_ids and p.target in data.concept_ids]
    report = run_experiment(data, method, cfg.split_spec(), cfg.train_config(), cfg.train_subsample)
    report.metadata["edge_budget"] = cfg.edge_budget
    suffix = method if cfg.edge_budget is None else f"{method}_budget{cfg.edge_budget}"
    with output_lock(art.root):
        (art.root / f"report_{suffix}.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (art.root / f"report_{suffix}.csv").write_text(report.to_csv(), encoding="utf-8")
    m = report.mean
    click.echo(f"{method}: P={m['precision']:.4f} R={m['recall']:.4f} F={m['f_score']:.4f}")


@cli.command()
@click.option("--output", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out_dir, seed):
    """Write a planted-prerequisite synthetic dataset and a matching config.json."""
    from prereq.synthetic import make_prereq_dataset

    ds = make_prereq_dataset(seed=seed)
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    pio.write_documents(root / "documents.jsonl", ds.documents)
    pio.write_edges(root / "edges.tsv", ds.graph)
    (root / "concepts.txt").write_text("".join(c + "\n" for c in ds.concepts), encoding="utf-8")
    pio.write_pairs(root / "pairs.tsv", ds.positives)
    config = {
        "documents": "documents.jsonl", "edges": "edges.tsv", "concepts": "concepts.txt",
        "pairs": "pairs.tsv", "output_dir": "out", "dataset_name": "synthetic",
        "vocab_mode": C.CONCEPT_RESTRICTED, "K": 6, "alpha": 0.1, "max_em_iters": 200, "seed": seed,
    }
    _write_json(root / "config.json", config)
    click.echo(f"synthetic dataset written to {root}")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="prereq", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.Abort) as exc:
        if isinstance(exc, click.UsageError):
            exc.show()
        return 1
    except (ConfigError, pio.InputFormatError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
