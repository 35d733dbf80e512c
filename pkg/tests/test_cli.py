import fcntl
import json
import logging

import pytest

from prereq.cli import main


@pytest.fixture(autouse=True)
def restore_logging():
    log = logging.getLogger("prereq")
    saved = (list(log.handlers), log.level, log.propagate)
    yield
    log.handlers, log.level, log.propagate = saved[0], saved[1], saved[2]


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def dataset(tmp_path, capsys):
    root = tmp_path / "data"
    assert run(capsys, "synth", "--output", str(root), "--seed", "3")[0] == 0
    cfg = json.loads((root / "config.json").read_text())
    cfg.update({"K": 4, "max_em_iters": 30, "iterations": 200, "n_splits": 5, "learning_rate": 1e-3})
    (root / "config.json").write_text(json.dumps(cfg))
    return root


def cfg_path(root):
    return str(root / "config.json")


def test_prep_stats_line(dataset, capsys):
    code, out, _ = run(capsys, "prep", "--config", cfg_path(dataset))
    assert code == 0
    header, values = out.strip().splitlines()[-2:]
    assert header == "|D| |E_D| |E_C| |C|"
    d, e, c_pairs, c = map(int, values.split())
    assert (d, c_pairs, c) == (150, 960, 48) and e > 0
    stats = json.loads((dataset / "out" / "stats.json").read_text())
    assert stats["n_doc_edges"] == e
    for name in ("vocab.json", "bow.jsonl", "doc_edges.tsv", "concepts.tsv", "pairs.tsv"):
        assert (dataset / "out" / name).is_file()


def test_playlists(tmp_path, capsys):
    docs = [{"id": f"v{i}", "text": f"alpha beta gamma {i}"} for i in range(5)]
    (tmp_path / "docs.jsonl").write_text("".join(json.dumps(d) + "\n" for d in docs))
    playlists = [{"playlist_id": "p1", "video_ids": ["v0", "v1", "v2"]}, {"playlist_id": "p2", "video_ids": ["v3", "v4"]}]
    (tmp_path / "pl.jsonl").write_text("".join(json.dumps(p) + "\n" for p in playlists))
    (tmp_path / "concepts.txt").write_text("alpha\nbeta\ngamma\n")
    (tmp_path / "pairs.tsv").write_text("alpha\tbeta\t1\n")
    cfg = {"documents": "docs.jsonl", "playlists": "pl.jsonl", "concepts": "concepts.txt", "pairs": "pairs.tsv",
           "output_dir": "out", "vocab_mode": "concept-restricted"}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "prep", "--config", str(tmp_path / "c.json"))
    assert code == 0 and out.strip().splitlines()[-1] == "5 4 1 3"

    (tmp_path / "pl.jsonl").write_text("")
    (tmp_path / "c.json").write_text(json.dumps({**cfg, "output_dir": "out2"}))
    code, _, err = run(capsys, "prep", "--config", str(tmp_path / "c.json"))
    assert code == 1 and "no documents admitted" in err
    assert not (tmp_path / "out2").exists()


def test_full_pipeline(dataset, capsys):
    cfg = cfg_path(dataset)
    out_dir = dataset / "out"
    assert run(capsys, "prep", "--config", cfg)[0] == 0
    assert run(capsys, "fit-plda", "--config", cfg)[0] == 0
    first = (out_dir / "model.json").read_bytes()
    assert run(capsys, "fit-plda", "--config", cfg)[0] == 0
    assert (out_dir / "model.json").read_bytes() == first
    assert (out_dir / "fit_report.csv").read_text().startswith("iter,elbo,delta_rel\n")
    model = json.loads(first)
    assert set(model) == {"k", "vocab", "log_beta", "eta", "hyper", "format_version"} and model["k"] == 4

    assert run(capsys, "train", "--config", cfg)[0] == 0
    assert (out_dir / "loss.csv").read_text().count("\n") == 201

    q = dataset / "q.tsv"
    q.write_text("k0c0\tk3c1\nk3c1\tk0c0\n")
    code, _, _ = run(capsys, "predict", "--config", cfg, "--pairs", str(q))
    assert code == 0
    rows = [line.split("\t") for line in (out_dir / "predictions.tsv").read_text().splitlines()]
    assert [r[:2] for r in rows] == [["k0c0", "k3c1"], ["k3c1", "k0c0"]]
    assert all(0.0 < float(r[2]) < 1.0 for r in rows)

    code, _, _ = run(capsys, "predict", "--config", cfg, "--pairs", str(q), "--method", "freq",
                     "--output", str(dataset / "freq.tsv"))
    counts = [line.split("\t")[2] for line in (dataset / "freq.tsv").read_text().splitlines()]
    assert code == 0 and all(c.isdigit() for c in counts)

    code, out, _ = run(capsys, "eval", "--config", cfg, "--method", "freq")
    assert code == 0 and out.startswith("freq: P=")
    report = json.loads((out_dir / "report_freq.json").read_text())
    assert len(report["splits"]) == 5 and report["metadata"]["pool"]
    csv_lines = (out_dir / "report_freq.csv").read_text().splitlines()
    assert len(csv_lines) == 7 and csv_lines[-1].startswith("mean,")


def test_predict_rejects_bad_rows(dataset, capsys):
    cfg = cfg_path(dataset)
    for cmd in ("prep", "fit-plda", "train"):
        assert run(capsys, cmd, "--config", cfg)[0] == 0
    q = dataset / "bad.tsv"
    q.write_text("k0c0\tk1c0\nk0c0\tk0c0\nghost\tk1c0\n")
    code, _, err = run(capsys, "predict", "--config", cfg, "--pairs", str(q), "--output", str(dataset / "p.tsv"))
    assert code == 1
    assert "line 2: self-pair" in err and "line 3: unknown concept(s) 'ghost'" in err
    assert not (dataset / "p.tsv").exists()


def test_eval_edge_budget(dataset, capsys):
    cfg = cfg_path(dataset)
    assert run(capsys, "prep", "--config", cfg)[0] == 0
    code, _, _ = run(capsys, "eval", "--config", cfg, "--method", "pairwise-lda", "--edge-budget", "100",
                     "--seed", "2")
    assert code == 0
    report = json.loads((dataset / "out" / "report_pairwise-lda_budget100.json").read_text())
    assert report["metadata"]["edge_budget"] == 100


def test_missing_prep(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"output_dir": "o"}))
    code, _, err = run(capsys, "fit-plda", "--config", str(tmp_path / "c.json"))
    assert code == 1 and "run prep first" in err


def test_config_validation(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"output_dir": "o", "topics": 3}))
    code, _, err = run(capsys, "prep", "--config", str(tmp_path / "c.json"))
    assert code == 1 and "unknown config keys: topics" in err
    (tmp_path / "c.json").write_text(json.dumps({"output_dir": "o", "documents": "missing.jsonl", "edges": "e",
                                                 "concepts": "c", "pairs": "p"}))
    code, _, err = run(capsys, "prep", "--config", str(tmp_path / "c.json"))
    assert code == 1 and "not found" in err
    (tmp_path / "c.json").write_text(json.dumps({"output_dir": "o", "K": 0}))
    assert run(capsys, "fit-plda", "--config", str(tmp_path / "c.json"))[0] == 1
    (tmp_path / "c.json").write_text("{not json")
    assert run(capsys, "fit-plda", "--config", str(tmp_path / "c.json"))[0] == 1
    assert not (tmp_path / "o").exists()


def test_malformed_input_line(dataset, capsys):
    with open(dataset / "documents.jsonl", "a") as fh:
        fh.write("{broken\n")
    code, _, err = run(capsys, "prep", "--config", cfg_path(dataset))
    assert code == 1 and "documents.jsonl:151: invalid JSON" in err
    assert not (dataset / "out").exists()


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "eval", "--method", "cgl")[0] == 1
    assert run(capsys, "--help")[0] == 0


def test_runtime_failure_exit_2(dataset, capsys):
    cfg = cfg_path(dataset)
    assert run(capsys, "prep", "--config", cfg)[0] == 0
    (dataset / "out" / "model.json").write_text(json.dumps({"format_version": 7}))
    code, _, err = run(capsys, "train", "--config", cfg)
    assert code == 2 and "unsupported model format" in err


def test_lock_contention(dataset, capsys):
    cfg = cfg_path(dataset)
    assert run(capsys, "prep", "--config", cfg)[0] == 0
    with open(dataset / "out" / ".prereq.lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        code, _, err = run(capsys, "fit-plda", "--config", cfg)
    assert code == 2 and "another prereq process" in err
    assert not (dataset / "out" / "model.json").exists()


def test_log_level_env(dataset, capsys, monkeypatch):
    monkeypatch.setenv("PREREQ_LOG", "error")
    code, _, err = run(capsys, "prep", "--config", cfg_path(dataset))
    assert code == 0 and "INFO" not in err
