"""Text ingestion: n-gram tokenization, vocabularies, bag-of-words vectors,
document prerequisite graphs and concept/vocabulary alignment."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FULL_NGRAM = "full-ngram"
CONCEPT_RESTRICTED = "concept-restricted"
VOCAB_MODES = (FULL_NGRAM, CONCEPT_RESTRICTED)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class CorpusError(ValueError):
    pass


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset:
    text = resources.files("prereq").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RawDocument:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("document id must be a non-empty string")
        if not self.text or not self.text.strip():
            raise CorpusError(f"document {self.id!r} has empty text")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered n-gram phrases with a phrase -> id bijection.

    In concept-restricted mode a phrase that does not match a term verbatim
    is also looked up by its lemmatized form.
    """

    terms: tuple
    mode: str = FULL_NGRAM
    n_max: int = 3
    index: dict = field(init=False, repr=False, compare=False)
    _lemma_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in VOCAB_MODES:
            raise CorpusError(f"unknown vocabulary mode {self.mode!r}")
        terms = tuple(self.terms)
        object.__setattr__(self, "terms", terms)
        index = {t: i for i, t in enumerate(terms)}
        if len(index) != len(terms):
            raise CorpusError("vocabulary terms must be unique")
        object.__setattr__(self, "index", index)
        lemma_index = {}
        if self.mode == CONCEPT_RESTRICTED:
            for i, t in enumerate(terms):
                lemma_index.setdefault(lemmatize_phrase(t), i)
        object.__setattr__(self, "_lemma_index", lemma_index)

    def __len__(self):
        return len(self.terms)

    def __contains__(self, term):
        return term in self.index

    def lookup(self, phrase: str):
        """Vocabulary id for an n-gram, or None."""
        i = self.index.get(phrase)
        if i is None and self._lemma_index:
            i = self._lemma_index.get(lemmatize_phrase(phrase))
        return i


@dataclass
class ConceptSpace:
    concepts: list
    vocab_id: dict

    @property
    def mapped(self) -> list:
        return [c for c in self.concepts if c in self.vocab_id]

    @property
    def unmapped(self) -> list:
        return [c for c in self.concepts if c not in self.vocab_id]

    def __len__(self):
        return len(self.concepts)


@dataclass(frozen=True)
class BowDocument:
    doc_id: str
    counts: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())


class DocumentGraph:
    """Directed prerequisite edges between documents, without self-loops or duplicates."""

    def __init__(self, edges: Iterable[tuple] = ()):
        seen = set()
        ordered = []
        for s, t in edges:
            if s == t:
                raise CorpusError(f"self-loop on document {s!r}")
            if (s, t) not in seen:
                seen.add((s, t))
                ordered.append((s, t))
        self._edges = ordered
        self._set = seen

    @property
    def edges(self) -> list:
        return list(self._edges)

    def __len__(self):
        return len(self._edges)

    def __iter__(self):
        return iter(self._edges)

    def __contains__(self, edge):
        return tuple(edge) in self._set

    def __eq__(self, other):
        return isinstance(other, DocumentGraph) and self._set == other._set

    def union(self, other: "DocumentGraph") -> "DocumentGraph":
        return DocumentGraph([*self._edges, *other._edges])

    def restrict(self, doc_ids) -> "DocumentGraph":
        """Drop edges touching documents outside ``doc_ids``."""
        keep = set(doc_ids)
        return DocumentGraph((s, t) for s, t in self._edges if s in keep and t in keep)

    def subsample(self, n: int, seed) -> "DocumentGraph":
        if n >= len(self._edges):
            return DocumentGraph(self._edges)
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(self._edges), size=n, replace=False))
        return DocumentGraph(self._edges[i] for i in pick)


@dataclass(frozen=True)
class LabeledConceptPair:
    source: str
    target: str
    label: int = 1

    def __post_init__(self):
        if self.source == self.target:
            raise CorpusError(f"self-pair ({self.source!r}, {self.target!r})")
        if self.label not in (0, 1):
            raise CorpusError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def key(self) -> tuple:
        return (self.source, self.target)


# ---------------------------------------------------------------------------
# Tokenization and lemmatization
# ---------------------------------------------------------------------------


def tokenize(text: str) -> list:
    return _TOKEN_RE.findall(text.lower())


def normalize_phrase(phrase: str) -> str:
    return " ".join(tokenize(phrase))


def _ngrams_from_tokens(tokens: Sequence[str], n_max: int, stopwords) -> list:
    out = []
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            gram = tokens[i:i + n]
            if gram[0] in stopwords or gram[-1] in stopwords:
                continue
            out.append(" ".join(gram))
    return out


def tokenize_ngrams(text: str, n_max: int = 3, stopwords=None) -> list:
    """All contiguous 1..n_max-grams of ``text``, shortest first.

    Multi-grams are dropped only when a stopword sits at either end, so
    "point of inflection" survives.
    """
    if n_max not in (1, 2, 3):
        raise CorpusError(f"n_max must be 1, 2 or 3, got {n_max}")
    if not text or not text.strip():
        raise CorpusError("cannot tokenize empty text")
    if stopwords is None:
        stopwords = default_stopwords()
    return _ngrams_from_tokens(tokenize(text), n_max, stopwords)


_LEMMA_EXCEPTIONS = {
    "analyses": "analysis", "bases": "basis", "hypotheses": "hypothesis",
    "theses": "thesis", "matrices": "matrix", "vertices": "vertex",
    "indices": "index", "indexes": "index", "appendices": "appendix",
    "criteria": "criterion", "phenomena": "phenomenon", "children": "child",
    "men": "man", "women": "woman", "data": "data", "series": "series",
    "species": "species", "axes": "axis", "radii": "radius", "foci": "focus",
    "lemmata": "lemma", "automata": "automaton", "schemata": "schema",
    "was": "was", "has": "has", "does": "does", "is": "is",
}
_KEEP_ENDINGS = ("ss", "us", "is", "ics", "eed")
_VOWELS = set("aeiouy")


def _has_vowel(s: str) -> bool:
    return any(ch in _VOWELS for ch in s)


def _undouble(stem: str) -> str:
    if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-1] not in "lsz" and stem[-1] not in _VOWELS:
        return stem[:-1]
    return stem


def lemmatize_word(word: str) -> str:
    """Rule-based lemma: strips plural -s/-es/-ies, -ing and -ed."""
    w = word.lower()
    if w in _LEMMA_EXCEPTIONS:
        return _LEMMA_EXCEPTIONS[w]
    if len(w) <= 3 or w.isdigit() or w.endswith(_KEEP_ENDINGS):
        return w
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith(("sses", "ches", "shes", "xes", "zes")):
        return w[:-2]
    if w.endswith("ing"):
        stem = w[:-3]
        if len(stem) >= 3 and _has_vowel(stem):
            return _undouble(stem)
        return w
    if w.endswith("ed"):
        stem = w[:-2]
        if len(stem) >= 3 and _has_vowel(stem):
            return _undouble(stem)
        return w
    if w.endswith("s"):
        return w[:-1]
    return w


def lemmatize_phrase(phrase: str) -> str:
    return " ".join(lemmatize_word(t) for t in phrase.split())


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def build_vocabulary(
    docs: Sequence[RawDocument],
    mode: str = FULL_NGRAM,
    concepts=None,
    n_max: int = 3,
    min_df: int = 1,
    stopwords=None,
) -> Vocabulary:
    """Collect the n-gram vocabulary of ``docs``.

    ``concepts`` (a ConceptSpace or a list of phrases) is required in
    concept-restricted mode; only concept phrases found in the corpus
    (verbatim or after lemmatization) are admitted.
    """
    if not docs:
        raise CorpusError("cannot build a vocabulary from zero documents")
    if mode not in VOCAB_MODES:
        raise CorpusError(f"unknown vocabulary mode {mode!r}")
    if stopwords is None:
        stopwords = default_stopwords()
    df = Counter()
    for doc in docs:
        df.update(set(tokenize_ngrams(doc.text, n_max, stopwords)))

    if mode == FULL_NGRAM:
        terms = sorted(t for t, c in df.items() if c >= min_df)
        return Vocabulary(tuple(terms), FULL_NGRAM, n_max)

    if concepts is None:
        raise CorpusError("concept-restricted mode needs a concept list")
    phrases = concepts.concepts if isinstance(concepts, ConceptSpace) else concepts
    wanted = {}
    for c in phrases:
        norm = normalize_phrase(c)
        if norm:
            wanted.setdefault(lemmatize_phrase(norm), norm)
    found = set()
    for gram, c in df.items():
        if c < min_df:
            continue
        if gram in wanted.values():
            found.add(gram)
            continue
        lem = lemmatize_phrase(gram)
        if lem in wanted:
            found.add(wanted[lem])
    if not found:
        raise CorpusError("no concept occurs in corpus")
    return Vocabulary(tuple(sorted(found)), CONCEPT_RESTRICTED, n_max)


def vectorize(doc: RawDocument, vocab: Vocabulary, stopwords=None) -> BowDocument:
    counts = Counter()
    for gram in tokenize_ngrams(doc.text, vocab.n_max, stopwords):
        i = vocab.lookup(gram)
        if i is not None:
            counts[i] += 1
    if not counts:
        logger.warning("document %r has no in-vocabulary terms; excluded from training", doc.id)
    return BowDocument(doc.id, dict(sorted(counts.items())))


def playlist_to_edges(playlist: Sequence[str]) -> DocumentGraph:
    """Every video is a prerequisite of each later video in the same playlist."""
    if len(set(playlist)) != len(playlist):
        raise CorpusError("playlist items must be unique")
    return DocumentGraph(
        (playlist[i], playlist[j])
        for i in range(len(playlist))
        for j in range(i + 1, len(playlist))
    )


def playlists_to_graph(playlists: Iterable[Sequence[str]]) -> DocumentGraph:
    graph = DocumentGraph()
    for pl in playlists:
        graph = graph.union(playlist_to_edges(pl))
    return graph


def match_concepts(
    concepts: Sequence[str],
    vocab: Vocabulary,
    lemmatizer: Callable[[str], str] = lemmatize_phrase,
) -> ConceptSpace:
    """Align concept phrases with vocabulary ids.

    A verbatim match wins; otherwise the lowest-id vocabulary term with the
    same lemmatized form is used. Unmatched concepts stay in the space,
    flagged as unmapped.
    """
    by_lemma = {}
    for i, term in enumerate(vocab.terms):
        by_lemma.setdefault(lemmatizer(term), i)

    ordered = []
    vocab_id = {}
    seen = set()
    for raw in concepts:
        c = normalize_phrase(raw)
        if not c:
            continue
        if c in seen:
            logger.warning("duplicate concept %r collapsed", c)
            continue
        seen.add(c)
        ordered.append(c)
        if c in vocab.index:
            vocab_id[c] = vocab.index[c]
        else:
            i = by_lemma.get(lemmatizer(c))
            if i is not None:
                vocab_id[c] = i
    n_unmapped = len(ordered) - len(vocab_id)
    if n_unmapped:
        logger.info("%d of %d concepts not found in vocabulary", n_unmapped, len(ordered))
    return ConceptSpace(ordered, vocab_id)


# ---------------------------------------------------------------------------
# Matrix form for the topic model
# ---------------------------------------------------------------------------


@dataclass
class BowCorpus:
    """Admitted documents as a CSR count matrix (rows = documents)."""

    doc_ids: list
    counts: sp.csr_matrix
    vocab: Vocabulary

    def __post_init__(self):
        if self.counts.shape != (len(self.doc_ids), len(self.vocab)):
            raise CorpusError("count matrix shape does not match documents x vocabulary")

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def row_of(self) -> dict:
        return {d: i for i, d in enumerate(self.doc_ids)}

    def presence(self, vocab_id: int) -> np.ndarray:
        """Boolean vector: which documents contain the term."""
        return np.asarray(self.counts[:, vocab_id].todense()).ravel() > 0


def bow_matrix(bows: Sequence[BowDocument], n_vocab: int) -> sp.csr_matrix:
    indptr = [0]
    indices = []
    data = []
    for b in bows:
        for i, c in sorted(b.counts.items()):
            indices.append(i)
            data.append(c)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(bows), n_vocab),
    )


def build_corpus(docs: Sequence[RawDocument], vocab: Vocabulary, stopwords=None) -> BowCorpus:
    """Vectorize every document and keep those with at least one term."""
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise CorpusError("document ids must be unique")
    bows = [vectorize(d, vocab, stopwords) for d in docs]
    kept = [b for b in bows if b.counts]
    if not kept:
        raise CorpusError("no documents admitted")
    return BowCorpus([b.doc_id for b in kept], bow_matrix(kept, len(vocab)), vocab)
