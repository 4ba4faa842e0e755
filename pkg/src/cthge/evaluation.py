"""Splits, Macro/Micro-F1 and the average relative improvement (ARI)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import numpy as np

from .exceptions import ConfigError, DomainError, UndefinedMetricError
from .hetgraph import SPLIT_NAMES, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL, HeteroGraph

log = logging.getLogger(__name__)


class StratificationWarning(UserWarning):
    pass


@dataclass
class EvalReport:
    macro_f1: float
    micro_f1: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray
    seed_stats: Dict[str, tuple] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())


def make_split(labels, ratios=(0.6, 0.2, 0.2), seed=0) -> np.ndarray:
    """Stratified train/val/test assignment for labelled entries.

    ``labels`` is an int array with ``-1`` for unlabelled positions, which get
    ``SPLIT_NONE``.  Falls back to an unstratified split (with a warning)
    when some class has fewer than three members.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three nonnegative values summing to 1: {ratios}")
    labels = np.asarray(labels)
    out = np.zeros(labels.shape[0], dtype=np.int8)
    idx = np.flatnonzero(labels >= 0)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels[idx], return_counts=True)
    if (counts < 3).any():
        warnings.warn(
            "class with fewer than 3 members; using an unstratified split",
            StratificationWarning,
            stacklevel=2,
        )
        groups = [idx]
    else:
        groups = [idx[labels[idx] == c] for c in classes]
    for members in groups:
        members = rng.permutation(members)
        n = members.size
        n_train = int(round(ratios[0] * n))
        n_val = min(int(round(ratios[1] * n)), n - n_train)
        out[members[:n_train]] = SPLIT_TRAIN
        out[members[n_train : n_train + n_val]] = SPLIT_VAL
        out[members[n_train + n_val :]] = SPLIT_TEST
    return out


def split_graph(g: HeteroGraph, ratios=(0.6, 0.2, 0.2), seed=0) -> HeteroGraph:
    labels = np.where(g.is_target, g.labels, -1)
    return g.with_split(make_split(labels, ratios, seed))


def confusion_matrix(pred, truth, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth), np.asarray(pred)), 1)
    return cm


def f1_from_confusion(cm: np.ndarray) -> EvalReport:
    """Per-class and aggregate F1 from a truth-by-prediction count matrix.

    Classes with a zero denominator get F1 = 0 and still enter the macro mean.
    """
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(float)
    pred_tot = cm.sum(axis=0).astype(float)
    true_tot = cm.sum(axis=1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_tot > 0, tp / pred_tot, 0.0)
        recall = np.where(true_tot > 0, tp / true_tot, 0.0)
        denom = 2 * tp + (pred_tot - tp) + (true_tot - tp)
        f1 = np.where(denom > 0, 2 * tp / denom, 0.0)
    total = cm.sum()
    micro = float(tp.sum() / total)
    return EvalReport(
        macro_f1=float(f1.mean()),
        micro_f1=micro,
        precision=precision,
        recall=recall,
        f1=f1,
        confusion=cm,
    )


def f1_scores(pred: Mapping[int, int], truth: Mapping[int, int], n_classes=None) -> EvalReport:
    """Macro/Micro-F1 over matching node -> class maps."""
    if not truth:
        raise UndefinedMetricError("cannot score an empty prediction set")
    if set(pred) != set(truth):
        raise ConfigError("prediction and truth maps must cover the same nodes")
    keys = sorted(truth)
    p = np.array([pred[k] for k in keys], dtype=np.int64)
    t = np.array([truth[k] for k in keys], dtype=np.int64)
    if n_classes is None:
        n_classes = int(max(p.max(), t.max())) + 1
    return f1_from_confusion(confusion_matrix(p, t, n_classes))


def score_split(g: HeteroGraph, pred_all: np.ndarray, split="test") -> EvalReport:
    """F1 of per-node predictions on one split of the target nodes."""
    nodes = np.flatnonzero(g.is_target & (g.split == SPLIT_NAMES[split]))
    if nodes.size == 0:
        raise UndefinedMetricError(f"split {split!r} is empty")
    cm = confusion_matrix(np.asarray(pred_all)[nodes], g.labels[nodes], g.n_classes)
    return f1_from_confusion(cm)


def summarize(reports: Sequence[EvalReport]) -> Dict[str, tuple]:
    """Mean and population std of macro/micro F1 over seeds."""
    out = {}
    for key in ("macro_f1", "micro_f1"):
        vals = np.array([getattr(r, key) for r in reports])
        out[key] = (float(vals.mean()), float(vals.std()))
    return out


def ari(before: Sequence[float], after: Sequence[float]) -> float:
    """Mean over models of ``(after - before) / before``."""
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    if before.shape != after.shape or before.ndim != 1 or before.size == 0:
        raise ConfigError("ARI needs two equal-length, non-empty lists")
    if (before <= 0).any():
        raise DomainError("ARI is undefined for a non-positive baseline value")
    return float(np.mean((after - before) / before))


def train_and_score(g: HeteroGraph, cfg, split="test", model=None) -> EvalReport:
    """Train a fresh relational GCN on ``g`` and score ``split``."""
    from .hgnn import GcnModel, forward, train_pre

    if model is None:
        model = GcnModel.for_graph(g, cfg.hidden_units, cfg.seed)
    train_pre(model, g, cfg)
    return score_split(g, forward(model, g).argmax(axis=1), split)
