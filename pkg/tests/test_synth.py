import json

import numpy as np
import pytest

from cthge.exceptions import ConfigError
from cthge.hetgraph import load_graph_dir
from cthge.homophily import compute_chr
from cthge.synth import (
    SynthConfig,
    chr_sweep,
    generate,
    oracle_chr,
    oracle_target_info,
    rank_correlation,
    write_synth,
)


def test_full_consistency_gives_one():
    g, truth = generate(SynthConfig(target_chr=1.0, seed=2))
    assert oracle_chr(g, truth) == 1.0
    assert not truth.noisy_cross.any()


def test_random_baseline_two_classes():
    values = []
    for seed in range(10):
        g, truth = generate(SynthConfig(classes=2, target_chr=0.5, seed=seed))
        values.append(oracle_chr(g, truth))
    assert abs(np.mean(values) - 0.5) <= 0.02


@pytest.mark.parametrize("seed", range(3))
def test_target_chr_concentration(seed):
    g, truth = generate(SynthConfig(target_chr=0.7, tn_edges=5000, seed=seed))
    measured = compute_chr(g, oracle_target_info(g, truth))
    assert abs(measured - 0.7) <= 0.02
    assert measured == truth.oracle_chr


def test_noisy_mask_matches_labels():
    g, truth = generate(SynthConfig(target_chr=0.6, tn_edges=1000, seed=4))
    cls = truth.node_classes(g)
    _, e_tn, _ = g.partition_edges()
    consistent = cls[g.src[e_tn]] == cls[g.dst[e_tn]]
    assert np.array_equal(~consistent, truth.noisy_cross[e_tn])
    assert truth.noisy_cross.sum() == 400


def test_class_balance():
    g, truth = generate(SynthConfig(n_t=600, classes=3, seed=1))
    counts = np.bincount(truth.target_classes)
    assert counts.max() / counts.min() <= 1.1


def test_unachievable_chr():
    with pytest.raises(ConfigError, match=r"\[0, 1\]"):
        SynthConfig(target_chr=1.2)
    with pytest.raises(ConfigError):
        SynthConfig(tn_edges=0)


def test_determinism_and_files(tmp_path):
    for d in ("a", "b"):
        g, truth = generate(SynthConfig(seed=9))
        write_synth(g, truth, tmp_path / d)
    for name in ("nodes.tsv", "edges.tsv", "truth.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    g2 = load_graph_dir(tmp_path / "a")
    assert g2.target_name == "target"
    assert g2.node_count == 1000


def test_config_from_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"n_t": 50, "classes": 2}))
    assert SynthConfig.from_file(tmp_path / "c.json").n_t == 50
    (tmp_path / "bad.json").write_text(json.dumps({"nodes": 5}))
    with pytest.raises(ConfigError):
        SynthConfig.from_file(tmp_path / "bad.json")


def _oracle_trainer(g, seed):
    # predicts the true label for training nodes, class 0 otherwise
    return np.where(g.labels >= 0, g.labels, 0)


def test_single_point_grid():
    rows, rho = chr_sweep(SynthConfig(n_t=60, n_n=30, tn_edges=200), [0.5], _oracle_trainer)
    assert len(rows) == 1 and rho is None


def test_degenerate_grid_undefined():
    rows, rho = chr_sweep(SynthConfig(n_t=60, n_n=30, tn_edges=200), [0.5, 0.5],
                          _oracle_trainer, seeds=[0])
    assert len(rows) == 2 and rho is None


def test_rank_correlation():
    assert rank_correlation([1, 2, 3], [2, 4, 9]) == pytest.approx(1.0)
    assert rank_correlation([1, 1], [2, 3]) is None
