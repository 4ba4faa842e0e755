"""Synthetic heterogeneous graphs with a controlled cross-type homophily.

Target nodes get balanced classes and class-mean Gaussian features.
Non-target nodes get a hidden ("latent") class and uninformative features.
Exactly ``round(target_chr * tn_edges)`` cross edges join a non-target node
to a target node of its own latent class; the rest join it to a target node
of a different class.  With one-hot target information built from the
planted classes, CHR therefore equals ``target_chr`` up to rounding.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .evaluation import make_split, score_split
from .exceptions import ConfigError
from .hetgraph import HeteroGraph, from_arrays, save_graph

TARGET, NONTARGET = "target", "item"


@dataclass
class SynthConfig:
    n_t: int = 500
    n_n: int = 500
    classes: int = 3
    target_chr: float = 0.7
    tt_edges: int = 500
    tn_edges: int = 3000
    nn_edges: int = 500
    feature_dim: int = 8
    class_separation: float = 1.0
    split: Sequence[float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least two classes")
        if self.tn_edges <= 0:
            raise ConfigError("tn_edges must be positive")
        if self.n_t < self.classes or self.n_n < 1:
            raise ConfigError("need at least one target node per class and one non-target node")
        if not 0.0 <= self.target_chr <= 1.0:
            raise ConfigError(
                f"target_chr={self.target_chr} is not achievable; achievable range is [0, 1]"
            )
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        self.split = tuple(float(x) for x in self.split)

    @classmethod
    def from_file(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class SynthTruth:
    target_classes: np.ndarray
    nontarget_classes: np.ndarray
    noisy_cross: np.ndarray = field(repr=False)
    oracle_chr: float = 0.0

    def node_classes(self, g: HeteroGraph) -> np.ndarray:
        out = np.empty(g.node_count, dtype=np.int64)
        out[g.target_nodes] = self.target_classes
        out[g.nontarget_nodes] = self.nontarget_classes
        return out


def _balanced(rng, n, c):
    return rng.permutation(np.arange(n) % c)


def generate(cfg: SynthConfig):
    """Return ``(graph, truth)``; node ids are ``t<i>`` and ``n<j>``."""
    rng = np.random.default_rng(cfg.seed)
    c = cfg.classes
    y_t = _balanced(rng, cfg.n_t, c)
    y_n = _balanced(rng, cfg.n_n, c)
    by_class = [np.flatnonzero(y_t == k) for k in range(c)]

    n_consistent = int(round(cfg.target_chr * cfg.tn_edges))
    consistent = np.zeros(cfg.tn_edges, dtype=bool)
    consistent[rng.permutation(cfg.tn_edges)[:n_consistent]] = True

    n_end = rng.integers(0, cfg.n_n, size=cfg.tn_edges)
    cls = y_n[n_end].copy()
    shift = rng.integers(1, c, size=cfg.tn_edges)
    cls[~consistent] = (cls[~consistent] + shift[~consistent]) % c
    t_end = np.empty(cfg.tn_edges, dtype=np.int64)
    for k in range(c):
        sel = np.flatnonzero(cls == k)
        t_end[sel] = by_class[k][rng.integers(0, by_class[k].size, size=sel.size)]

    tt = rng.integers(0, cfg.n_t, size=(cfg.tt_edges, 2))
    nn = rng.integers(0, cfg.n_n, size=(cfg.nn_edges, 2))

    means = np.zeros((c, cfg.feature_dim))
    for k in range(c):
        means[k, k % cfg.feature_dim] = cfg.class_separation
    x_t = means[y_t] + rng.normal(size=(cfg.n_t, cfg.feature_dim))
    x_n = rng.normal(size=(cfg.n_n, cfg.feature_dim))

    # target nodes occupy indices [0, n_t), non-target [n_t, n_t + n_n)
    off = cfg.n_t
    edges = [(int(a), int(b), "t-t") for a, b in tt]
    edges += [(int(t), int(n) + off, "t-i") for t, n in zip(t_end, n_end)]
    edges += [(int(a) + off, int(b) + off, "i-i") for a, b in nn]

    labels = np.concatenate([y_t, np.full(cfg.n_n, -1)])
    split_codes = make_split(labels, cfg.split, seed=cfg.seed)
    names = {1: "train", 2: "val", 3: "test"}
    g = from_arrays(
        [TARGET] * cfg.n_t + [NONTARGET] * cfg.n_n,
        edges,
        TARGET,
        labels=[int(v) if v >= 0 else None for v in labels],
        split=[names.get(int(s)) for s in split_codes],
        features=np.vstack([x_t, x_n]),
        node_ids=[f"t{i}" for i in range(cfg.n_t)] + [f"n{j}" for j in range(cfg.n_n)],
        n_classes=c,
    )
    noisy = np.zeros(g.edge_count, dtype=bool)
    noisy[cfg.tt_edges : cfg.tt_edges + cfg.tn_edges] = ~consistent
    truth = SynthTruth(y_t, y_n, noisy, oracle_chr=n_consistent / cfg.tn_edges)
    return g, truth


def oracle_target_info(g: HeteroGraph, truth: SynthTruth):
    """One-hot target information built from the planted classes."""
    from .homophily import build_target_info

    eye = np.eye(g.n_classes)
    return build_target_info(g, eye[truth.target_classes], eye[truth.nontarget_classes])


def oracle_chr(g: HeteroGraph, truth: SynthTruth) -> float:
    from .homophily import compute_chr

    return compute_chr(g, oracle_target_info(g, truth))


def write_synth(g: HeteroGraph, truth: SynthTruth, out_dir) -> None:
    save_graph(g, out_dir)
    with open(Path(out_dir) / "truth.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for v, k in zip(g.nontarget_nodes, truth.nontarget_classes):
            fh.write(f"{g.node_ids[v]}\t{int(k)}\n")


def chr_sweep(base_cfg: SynthConfig, chr_grid: Sequence[float], trainer: Callable,
              seeds: Sequence[int] = (0,)):
    """Generate one graph per (CHR, seed), train, and score the test split.

    ``trainer(graph, seed)`` must return per-node predicted classes.
    Returns ``(rows, spearman)`` where rows are dicts with keys
    ``target_chr, seed, chr, macro_f1, micro_f1`` and ``spearman`` is the rank
    correlation between measured CHR and Macro-F1 (None when undefined).
    """
    rows = []
    for target in chr_grid:
        for seed in seeds:
            cfg = SynthConfig(**{**asdict(base_cfg), "target_chr": float(target), "seed": int(seed)})
            g, truth = generate(cfg)
            pred = trainer(g, int(seed))
            rep = score_split(g, pred, "test")
            rows.append(dict(target_chr=float(target), seed=int(seed),
                             chr=oracle_chr(g, truth), macro_f1=rep.macro_f1,
                             micro_f1=rep.micro_f1))
    return rows, rank_correlation([r["chr"] for r in rows], [r["macro_f1"] for r in rows])


def rank_correlation(x, y) -> Optional[float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(spearmanr(x, y).statistic)


def gcn_trainer(train_cfg):
    """``trainer`` callback for ``chr_sweep`` using the built-in GCN."""
    from .hgnn import GcnModel, TrainConfig, forward, train_pre

    def run(g, seed):
        cfg = TrainConfig(**{**asdict(train_cfg), "seed": seed})
        model = GcnModel.for_graph(g, cfg.hidden_units, seed)
        train_pre(model, g, cfg)
        return forward(model, g).argmax(axis=1)

    return run
