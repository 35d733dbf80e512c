"""Readers and writers for the on-disk formats (JSONL documents, TSV edges and pairs)."""
from __future__ import annotations

import json
from pathlib import Path

from prereq.corpus import CorpusError, LabeledConceptPair, RawDocument


class InputFormatError(CorpusError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line


def _json_line(path, lineno, line) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise InputFormatError(path, lineno, f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise InputFormatError(path, lineno, "expected a JSON object")
    return obj


def read_documents(path) -> list:
    docs = []
    seen = set()
    for lineno, line in _lines(path):
        obj = _json_line(path, lineno, line)
        if not isinstance(obj.get("id"), str) or not isinstance(obj.get("text"), str):
            raise InputFormatError(path, lineno, 'expected {"id": str, "text": str}')
        if obj["id"] in seen:
            raise InputFormatError(path, lineno, f"duplicate document id {obj['id']!r}")
        try:
            docs.append(RawDocument(obj["id"], obj["text"]))
        except CorpusError as exc:
            raise InputFormatError(path, lineno, str(exc)) from None
        seen.add(obj["id"])
    return docs


def read_playlists(path) -> list:
    out = []
    for lineno, line in _lines(path):
        obj = _json_line(path, lineno, line)
        vids = obj.get("video_ids")
        if not isinstance(obj.get("playlist_id"), str) or not isinstance(vids, list) \
                or not all(isinstance(v, str) for v in vids):
            raise InputFormatError(path, lineno, 'expected {"playlist_id": str, "video_ids": [str]}')
        if len(set(vids)) != len(vids):
            raise InputFormatError(path, lineno, "playlist repeats a video id")
        out.append((obj["playlist_id"], vids))
    return out


def _tsv(path, n_cols):
    for lineno, line in _lines(path):
        cols = line.split("\t")
        if len(cols) != n_cols:
            raise InputFormatError(path, lineno, f"expected {n_cols} tab-separated columns, got {len(cols)}")
        yield lineno, cols


def read_edges(path) -> list:
    edges = []
    for lineno, (s, t) in _tsv(path, 2):
        if s == t:
            raise InputFormatError(path, lineno, f"self-loop {s!r}")
        edges.append((s, t))
    return edges


def write_edges(path, edges) -> None:
    Path(path).write_text("".join(f"{s}\t{t}\n" for s, t in edges), encoding="utf-8")


def read_concepts(path) -> list:
    return [line.strip() for _, line in _lines(path)]


def read_pairs(path) -> list:
    pairs = []
    for lineno, (s, t, label) in _tsv(path, 3):
        if label not in ("0", "1"):
            raise InputFormatError(path, lineno, f"label must be 0 or 1, got {label!r}")
        try:
            pairs.append(LabeledConceptPair(s.strip(), t.strip(), int(label)))
        except CorpusError as exc:
            raise InputFormatError(path, lineno, str(exc)) from None
    return pairs


def read_unlabeled_pairs(path) -> list:
    """Two-column (or labeled three-column) pair file; the label is ignored."""
    out = []
    for lineno, line in _lines(path):
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise InputFormatError(path, lineno, "expected source<TAB>target")
        out.append((lineno, cols[0].strip(), cols[1].strip()))
    return out


def write_pairs(path, pairs) -> None:
    Path(path).write_text("".join(f"{p.source}\t{p.target}\t{p.label}\n" for p in pairs), encoding="utf-8")


def write_scores(path, scored) -> None:
    Path(path).write_text("".join(f"{s}\t{t}\t{v!r}\n" for s, t, v in scored), encoding="utf-8")


def write_documents(path, docs) -> None:
    Path(path).write_text(
        "".join(json.dumps({"id": d.id, "text": d.text}) + "\n" for d in docs), encoding="utf-8"
    )
