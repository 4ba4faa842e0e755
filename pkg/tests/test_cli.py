import csv
import json

import pytest

from cthge.cli import main
from cthge.evaluation import ari

FAST = ["--epochs", "40", "--fine-tune-epochs", "10", "--lr", "0.01", "--hidden", "16"]
SMALL = {"n_t": 200, "n_n": 80, "tt_edges": 300, "tn_edges": 1600, "nn_edges": 100,
         "feature_dim": 4, "target_chr": 0.7}


@pytest.fixture(scope="module")
def graph_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("graph")
    (root / "synth.json").write_text(json.dumps(SMALL))
    assert main(["synth", "gen", "--config", str(root / "synth.json"), "--out", str(root / "g")]) == 0
    return root / "g"


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_synth_writes_tsv_and_truth(graph_dir):
    names = set(_files(graph_dir))
    assert {"nodes.tsv", "edges.tsv", "truth.tsv", "config.lock"} <= names
    lock = json.loads((graph_dir / "config.lock").read_text())
    assert lock["command"] == "synth" and lock["tn_edges"] == 1600


def test_chr_prints_value(graph_dir, tmp_path, capsys):
    assert main(["chr", "--graph", str(graph_dir), "--out", str(tmp_path), *FAST]) == 0
    out = capsys.readouterr().out
    assert out.startswith("CHR ")
    report = (tmp_path / "chr_report.csv").read_text().splitlines()
    assert report[-1] == "CHR," + out.split()[1]


def test_chr_uniform_fallback(graph_dir, tmp_path, capsys):
    assert main(["chr", "--graph", str(graph_dir), "--out", str(tmp_path), "--logits", "none"]) == 0
    assert json.loads((tmp_path / "config.lock").read_text())["logits"] == "none"
    assert "CHR" in capsys.readouterr().out


def test_chr_missing_graph(tmp_path, capsys):
    assert main(["chr", "--graph", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_flag_is_usage_error(tmp_path):
    assert main(["chr", "--bogus"]) == 2
    assert main(["theory", "--out", str(tmp_path), "--qs", "abc"]) == 2


def test_config_precedence(graph_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha": 0.05, "iters": 2}))
    out = tmp_path / "o"
    code = main(["edit", "--graph", str(graph_dir), "--out", str(out), "--config", str(cfg),
                 "--iters", "1", "--tau", "0.4", "--skip-f1", *FAST])
    assert code == 0
    lock = json.loads((out / "config.lock").read_text())
    assert lock["alpha"] == 0.05      # from the file
    assert lock["iters"] == 1         # flag beats file
    assert lock["gamma"] == 0.1       # default
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alhpa": 0.1}))
    assert main(["edit", "--graph", str(graph_dir), "--out", str(tmp_path / "x"),
                 "--config", str(bad)]) == 2


def test_edit_raises_chr(graph_dir, tmp_path):
    assert main(["edit", "--graph", str(graph_dir), "--out", str(tmp_path), "--tau", "0.4", *FAST]) == 0
    summary = dict(line.split(",") for line in (tmp_path / "summary.csv").read_text().splitlines())
    assert float(summary["chr_after"]) > float(summary["chr_before"])
    assert "macro_f1_after" in summary
    rows = list(csv.reader((tmp_path / "report.csv").open()))
    assert rows[0] == ["stage", "CHR", "E_tn"]
    assert [r[0] for r in rows[1:]] == ["original", "phase1", "round1", "round2", "round3"]
    head = (tmp_path / "plan.csv").read_text().splitlines()[0]
    assert head == "edge_id,stage,similarity,percentile,action"
    assert (tmp_path / "nodes.tsv").exists() and (tmp_path / "edges.tsv").exists()


def test_edit_tau_one_fails(graph_dir, tmp_path, capsys):
    code = main(["edit", "--graph", str(graph_dir), "--out", str(tmp_path), "--tau", "1.0",
                 "--skip-f1", *FAST])
    assert code == 1
    assert "lower tau" in capsys.readouterr().err


def test_edit_rerun_from_lock_is_byte_identical(graph_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["edit", "--graph", str(graph_dir), "--out", str(a), "--tau", "0.4",
                 "--seed", "3", "--skip-f1", *FAST]) == 0
    assert main(["edit", "--config", str(a / "config.lock"), "--out", str(b)]) == 0
    assert _files(a) == _files(b)


def test_theory_sweep(tmp_path):
    args = ["theory", "--out", str(tmp_path / "a"), "--samples", "5000", "--seed", "2"]
    assert main(args) == 0
    rows = list(csv.reader((tmp_path / "a" / "theory.csv").open()))
    assert rows[0] == ["q_c", "db_index", "c_lower", "c0"]
    c_lower = [float(r[2]) for r in rows[1:]]
    assert all(b < a for a, b in zip(c_lower, c_lower[1:]))
    args[2] = str(tmp_path / "b")
    assert main(args) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_theory_flags_invalid_point(tmp_path):
    assert main(["theory", "--out", str(tmp_path), "--samples", "500",
                 "--qc-grid", "0.05,0.5"]) == 0
    rows = (tmp_path / "theory.csv").read_text().splitlines()
    assert rows[1].endswith("domain_error")


def test_bench_sweep_and_ari(tmp_path):
    args = ["bench", "--out", str(tmp_path), "--seeds", "2", "--n-t", "90", "--n-n", "60",
            "--tt-edges", "100", "--tn-edges", "500", "--nn-edges", "50", "--epochs", "30",
            "--fine-tune-epochs", "10", "--lr", "0.01", "--hidden", "8", "--tau", "0.3",
            "--iters", "1", "--compare"]
    assert main(args) == 0
    rows = list(csv.DictReader((tmp_path / "metrics.csv").open()))
    assert len(rows) == 4 * 2
    summary = dict(line.split(",") for line in (tmp_path / "summary.csv").read_text().splitlines())
    want = ari([float(r["macro_f1"]) for r in rows], [float(r["macro_f1_cthge"]) for r in rows])
    assert float(summary["ari_macro_f1"]) == want


def test_bench_empty_grid(tmp_path):
    assert main(["bench", "--out", str(tmp_path), "--grid", ""]) == 2


def test_eval_run(graph_dir, tmp_path):
    assert main(["eval", "run", "--graph", str(graph_dir), "--out", str(tmp_path),
                 "--eval-seeds", "0,1", *FAST]) == 0
    text = (tmp_path / "metrics.csv").read_text()
    table, aggregate = text.split("\n# aggregate\n")
    lines = table.strip().splitlines()
    assert lines[0] == "model,graph,seed,macro_f1,micro_f1"
    assert len(lines) == 3
    assert aggregate.splitlines()[0].startswith("model,graph,macro_f1_mean")


def test_threads_env(graph_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("CTHGE_THREADS", "1")
    assert main(["chr", "--graph", str(graph_dir), "--out", str(tmp_path), "--logits", "none"]) == 0
