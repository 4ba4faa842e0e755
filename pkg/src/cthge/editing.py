"""Cross-type homophily guided graph editing.

Phase I drops cross-type edges whose target-information similarity falls
below a threshold.  Phase II propagates training labels to non-target
nodes, fine-tunes the classifier on the confidently labelled ones, scores
every cross edge by how well the fine-tuned prediction of its non-target
end agrees with the label row of its target end, then recovers the best
pruned edges and removes the worst retained ones.  Phase II repeats for a
few rounds with a growing refinement ratio.

Only cross-type edges are ever touched.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, TransformerMixin

from .evaluation import score_split
from .exceptions import ConfigError, DivergenceError, PruningError, SearchError
from .hetgraph import HeteroGraph, SPLIT_TRAIN
from .hgnn import GcnModel, TrainConfig, fine_tune, forward, train_pre
from .homophily import (
    TargetInfoMatrix,
    chr_of_subset,
    edge_similarities,
    init_target_info,
    target_info,
    unlabelled_logits,
)
from .validation import check_fraction, check_graph

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass
class PruneConfig:
    """``tau=None`` means: search ``tau_grid`` on validation Macro-F1."""

    tau: Optional[float] = None
    tau_grid: Sequence[float] = DEFAULT_TAU_GRID
    search_epochs: int = 200

    def __post_init__(self):
        if self.tau is not None:
            self.tau = check_fraction(self.tau, "tau")
        for t in self.tau_grid:
            check_fraction(t, "tau_grid entry")


def linear_schedule(cfg: "RefineConfig", r: int) -> float:
    """Round-``r`` ratio ``offset + r * gamma * alpha`` (rounds count from 1)."""
    return cfg.offset + r * cfg.gamma * cfg.alpha


@dataclass
class RefineConfig:
    alpha: float = 0.10
    gamma: float = 0.1
    offset: float = 0.06
    iterations: int = 3
    schedule: Callable[["RefineConfig", int], float] = linear_schedule

    def __post_init__(self):
        check_fraction(self.alpha, "alpha", 0.0, 0.5, open_high=True)
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.gamma < 0 or self.offset < 0:
            raise ConfigError("gamma and offset must be nonnegative")

    def ratio(self, r: int) -> float:
        return float(min(max(self.schedule(self, r), 0.0), np.nextafter(0.5, 0)))


@dataclass
class PseudoLabelState:
    p0: np.ndarray
    margins: np.ndarray
    unlabelled_neighbours: np.ndarray
    confident_set: np.ndarray
    pseudo_labels: Dict[int, int]


@dataclass
class RoundRecord:
    """One refinement pass; masks index ``EditPlan.cross_edges``."""

    alpha: float
    scores: np.ndarray
    percentile: np.ndarray
    recovered: np.ndarray
    removed: np.ndarray
    final: np.ndarray
    chr: float
    n_confident: int = 0


@dataclass
class EditPlan:
    """Auditable record of a cross-edge edit.

    ``cross_edges`` are edge indices of the original graph; all masks and
    per-edge arrays are aligned with it.  ``similarity`` is the
    target-information similarity used by Phase I.  Set-valued properties
    return original edge indices.
    """

    cross_edges: np.ndarray
    similarity: np.ndarray
    tau: float
    retained: np.ndarray
    chr_original: float
    chr_pruned: float
    rounds: List[RoundRecord] = field(default_factory=list)

    @property
    def final_mask(self) -> np.ndarray:
        return self.rounds[-1].final if self.rounds else self.retained

    @property
    def e_prune(self):
        return self.cross_edges[self.retained]

    @property
    def e_cand(self):
        return self.cross_edges[~self.retained]

    @property
    def e_rec(self):
        if not self.rounds:
            return self.cross_edges[:0]
        return self.cross_edges[self.rounds[-1].recovered]

    @property
    def e_rem(self):
        if not self.rounds:
            return self.cross_edges[:0]
        return self.cross_edges[self.rounds[-1].removed]

    @property
    def e_final(self):
        return self.cross_edges[self.final_mask]

    @property
    def chr_final(self) -> float:
        return chr_of_subset(self.similarity, self.final_mask)

    def budget(self, alpha: float) -> float:
        """Edge count targeted by the structured selection at ratio ``alpha``."""
        n_p = int(self.retained.sum())
        return (1 - alpha) * n_p + alpha * (self.retained.size - n_p)

    def stage_rows(self):
        """``(stage, chr, n_cross)`` rows for reporting."""
        rows = [
            ("original", self.chr_original, int(self.retained.size)),
            ("phase1", self.chr_pruned, int(self.retained.sum())),
        ]
        for i, rec in enumerate(self.rounds, start=1):
            rows.append((f"round{i}", rec.chr, int(rec.final.sum())))
        return rows

    def apply(self, g: HeteroGraph) -> HeteroGraph:
        """Original graph with only the final cross edges kept."""
        keep = np.ones(g.edge_count, dtype=bool)
        keep[self.cross_edges] = self.final_mask
        return g.with_edge_mask(keep)

    def write_csv(self, path) -> None:
        """``edge_id,stage,similarity,percentile,action`` rows per stage."""
        phase1_pct = percentile_rank(self.similarity)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("edge_id,stage,similarity,percentile,action\n")
            for k, e in enumerate(self.cross_edges):
                act = "keep" if self.retained[k] else "prune"
                fh.write(
                    f"{e},phase1,{float(self.similarity[k])!r},{float(phase1_pct[k])!r},{act}\n"
                )
            for i, rec in enumerate(self.rounds, start=1):
                for k, e in enumerate(self.cross_edges):
                    if rec.recovered[k]:
                        act = "recover"
                    elif rec.removed[k]:
                        act = "remove"
                    else:
                        act = "keep" if self.retained[k] else "prune"
                    fh.write(
                        f"{e},round{i},{float(rec.scores[k])!r},"
                        f"{float(rec.percentile[k])!r},{act}\n"
                    )


# ----------------------------------------------------------------------
# Phase I


def prune_phase1(g: HeteroGraph, h: TargetInfoMatrix, cfg) -> EditPlan:
    """Keep cross edges with similarity >= tau.

    ``cfg`` is a ``PruneConfig`` with a fixed ``tau`` or a bare float.
    """
    tau = cfg.tau if isinstance(cfg, PruneConfig) else check_fraction(cfg, "tau")
    if tau is None:
        raise ConfigError("prune_phase1 needs a fixed tau; use select_tau first")
    e_tn = g.cross_view.e_tn
    sims = edge_similarities(g, h, e_tn)
    if sims.size == 0:
        raise PruningError("graph has no cross-type edges to prune")
    retained = sims >= tau
    if not retained.any():
        raise PruningError(
            f"tau={tau} removes every cross-type edge (max similarity "
            f"{float(sims.max()):.4f}); choose a lower tau"
        )
    return EditPlan(
        cross_edges=e_tn.copy(),
        similarity=sims,
        tau=float(tau),
        retained=retained,
        chr_original=float(np.mean(sims)),
        chr_pruned=chr_of_subset(sims, retained),
    )


def select_tau(g: HeteroGraph, h: TargetInfoMatrix, grid: Sequence[float],
               validation_eval: Callable[[HeteroGraph], float]) -> float:
    """Grid value whose pruned graph maximizes ``validation_eval``.

    Ties go to the smaller tau; infeasible values (empty retained set) are
    skipped.
    """
    best_tau, best_score = None, -np.inf
    for tau in sorted(float(t) for t in grid):
        try:
            plan = prune_phase1(g, h, tau)
        except PruningError:
            continue
        score = float(validation_eval(plan.apply(g)))
        log.info("tau=%.2f validation score %.4f", tau, score)
        if score > best_score:
            best_tau, best_score = tau, score
    if best_tau is None:
        raise SearchError("no tau in the grid leaves any cross-type edge")
    return best_tau


def validation_macro_f1(cfg: TrainConfig, epochs: Optional[int] = None):
    """Callback for ``select_tau``: retrain from scratch, score the val split."""
    short = TrainConfig(**{**cfg.__dict__, "epochs": cfg.epochs if epochs is None else epochs})

    def evaluate(pruned: HeteroGraph) -> float:
        model = GcnModel.for_graph(pruned, short.hidden_units, short.seed)
        train_pre(model, pruned, short)
        return score_split(pruned, forward(model, pruned).argmax(axis=1), "val").macro_f1

    return evaluate


# ----------------------------------------------------------------------
# Phase II


def propagate_pseudo(g: HeteroGraph) -> PseudoLabelState:
    """Label-count propagation from training target nodes over cross edges.

    A non-target node is confident when its top-minus-runner-up count exceeds
    the number of distinct non-training target nodes it is linked to.
    """
    view = g.cross_view
    tn = g.target_nodes
    is_train = g.split[tn] == SPLIT_TRAIN
    l0 = np.zeros((tn.size, g.n_classes))
    l0[np.flatnonzero(is_train), g.labels[tn[is_train]]] = 1.0
    p0 = np.asarray(view.a_nt @ l0)

    top2 = np.sort(p0, axis=1)[:, -2:]
    margins = top2[:, 1] - top2[:, 0]

    unl = ~is_train[view.tn_target]
    pairs = np.unique(
        np.stack([view.tn_nontarget[unl], view.tn_target[unl]], axis=1), axis=0
    )
    counts = np.bincount(pairs[:, 0], minlength=view.n_n) if pairs.size else np.zeros(view.n_n, int)

    confident_local = np.flatnonzero(margins > counts)
    nodes = g.nontarget_nodes[confident_local]
    classes = p0[confident_local].argmax(axis=1)
    return PseudoLabelState(
        p0=p0,
        margins=margins,
        unlabelled_neighbours=counts,
        confident_set=nodes,
        pseudo_labels={int(v): int(c) for v, c in zip(nodes, classes)},
    )


def soft_similarity(model_fine: GcnModel, g: HeteroGraph, edge, l=None) -> float:
    """Fine-tuned class probabilities of the non-target end dotted with the
    label row of the target end."""
    vi, vj = edge
    if g.is_target[vi]:
        vi, vj = vj, vi
    if l is None:
        l = init_target_info(g)
    probs = softmax(forward(model_fine, g)[vi])
    return float(probs @ l[g.local_index[vj]])


def soft_scores(probs: np.ndarray, g: HeteroGraph, l: np.ndarray, edges) -> np.ndarray:
    """Batch soft similarity for cross edges (indices into ``g``'s edge list)."""
    edges = np.asarray(edges, dtype=np.int64)
    s, d = g.src[edges], g.dst[edges]
    s_is_t = g.is_target[s]
    t_node = np.where(s_is_t, s, d)
    n_node = np.where(s_is_t, d, s)
    return np.einsum("ij,ij->i", probs[n_node], l[g.local_index[t_node]])


def percentile_rank(scores) -> np.ndarray:
    """Fraction of entries strictly greater than each entry."""
    scores = np.asarray(scores, dtype=float)
    srt = np.sort(scores)
    greater = scores.size - np.searchsorted(srt, scores, side="right")
    return greater / scores.size


def rank_and_refine(plan: EditPlan, scores, alpha, n_confident=0) -> EditPlan:
    """Recover pruned edges in the top ``alpha`` percentile and drop retained
    edges below ``1 - alpha``; returns a plan with the round appended."""
    alpha = check_fraction(alpha, "alpha", 0.0, 0.5, open_high=True)
    scores = np.asarray(scores, dtype=float)
    if scores.shape != plan.retained.shape:
        raise ConfigError("scores must cover every cross-type edge")
    pct = percentile_rank(scores)
    recovered = ~plan.retained & (pct <= alpha) if alpha > 0 else np.zeros_like(plan.retained)
    removed = plan.retained & (pct > 1 - alpha) if alpha > 0 else np.zeros_like(plan.retained)
    final = (plan.retained & ~removed) | recovered
    if alpha > 0 and not recovered.any():
        log.info("alpha=%.3f recovers no edges", alpha)
    if not final.any():
        raise PruningError("refinement removed every cross-type edge")
    rec = RoundRecord(
        alpha=float(alpha),
        scores=scores,
        percentile=pct,
        recovered=recovered,
        removed=removed,
        final=final,
        chr=chr_of_subset(plan.similarity, final),
        n_confident=n_confident,
    )
    return EditPlan(
        cross_edges=plan.cross_edges,
        similarity=plan.similarity,
        tau=plan.tau,
        retained=plan.retained,
        chr_original=plan.chr_original,
        chr_pruned=plan.chr_pruned,
        rounds=plan.rounds + [rec],
    )


def refine_round(g: HeteroGraph, plan: EditPlan, model: GcnModel, cfg: TrainConfig,
                 alpha: float) -> EditPlan:
    """Pseudo-label, fine-tune ``model`` in place, score and refine once.

    The current graph is the original with the plan's latest cross-edge set.
    """
    current = plan.apply(g)
    state = propagate_pseudo(current)
    fine_tune(model, current, state.pseudo_labels, cfg)
    logits = forward(model, current)
    if not np.isfinite(logits).all():
        raise DivergenceError(cfg.fine_tune_epochs, "non-finite logits after fine-tuning")
    l = init_target_info(current, unlabelled_logits(current, logits))
    scores = soft_scores(softmax(logits, axis=1), g, l, plan.cross_edges)
    return rank_and_refine(plan, scores, alpha, n_confident=len(state.pseudo_labels))


def iterative_refine(g: HeteroGraph, model: GcnModel, plan: EditPlan, train_cfg: TrainConfig,
                     cfg: RefineConfig) -> EditPlan:
    """Run ``cfg.iterations`` refinement rounds at ratios ``cfg.ratio(r)``.

    Recovery and removal are always relative to the Phase I split; what
    changes between rounds is the graph the model is fine-tuned and scored
    on.  ``model`` is updated in place.  If a round diverges the last good
    plan is returned.
    """
    for r in range(1, cfg.iterations + 1):
        backup = model.copy()
        try:
            plan = refine_round(g, plan, model, train_cfg, cfg.ratio(r))
        except DivergenceError as exc:
            log.error("refinement round %d diverged (%s); keeping previous plan", r, exc)
            model.__dict__.update(backup.__dict__)
            break
    return plan


# ----------------------------------------------------------------------
# pipeline


def run_cthge(g: HeteroGraph, train_cfg: TrainConfig, prune_cfg: PruneConfig,
              refine_cfg: RefineConfig, model: Optional[GcnModel] = None):
    """Pretrain, build target info, prune, refine.

    Returns ``(edited_graph, plan, report)``.
    """
    g = check_graph(g, require_cross=True, require_train=True)
    if model is None:
        model = GcnModel.for_graph(g, train_cfg.hidden_units, train_cfg.seed)
        train_pre(model, g, train_cfg)
    logits = forward(model, g)
    h = target_info(g, unlabelled_logits(g, logits))

    tau = prune_cfg.tau
    if tau is None:
        tau = select_tau(g, h, prune_cfg.tau_grid,
                         validation_macro_f1(train_cfg, prune_cfg.search_epochs))
    plan = prune_phase1(g, h, tau)
    plan = iterative_refine(g, model, plan, train_cfg, refine_cfg)
    edited = plan.apply(g)
    report = {
        "tau": plan.tau,
        "chr_before": plan.chr_original,
        "chr_after": plan.chr_final,
        "stages": plan.stage_rows(),
        "n_cross_before": int(plan.cross_edges.size),
        "n_cross_after": int(plan.final_mask.sum()),
        "confident_per_round": [rec.n_confident for rec in plan.rounds],
    }
    return edited, plan, report


def write_report_csv(path, plan: EditPlan) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("stage,CHR,E_tn\n")
        for stage, value, n in plan.stage_rows():
            fh.write(f"{stage},{float(value)!r},{n}\n")


class CTHGE(BaseEstimator, TransformerMixin):
    """Graph-editing transformer.

    ``fit(g)`` runs the full pipeline and stores ``plan_`` and ``report_``;
    ``transform(g)`` applies the fitted plan to ``g`` (which must share the
    fitted graph's edge list).  ``tau=None`` searches ``tau_grid``.
    """

    def __init__(self, tau=None, tau_grid=DEFAULT_TAU_GRID, alpha=0.10, gamma=0.1, offset=0.06,
                 iterations=3, epochs=400, fine_tune_epochs=200, search_epochs=200,
                 learning_rate=5e-4, weight_decay=1e-4, hidden_units=64, seed=0):
        self.tau = tau
        self.tau_grid = tau_grid
        self.alpha = alpha
        self.gamma = gamma
        self.offset = offset
        self.iterations = iterations
        self.epochs = epochs
        self.fine_tune_epochs = fine_tune_epochs
        self.search_epochs = search_epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.hidden_units = hidden_units
        self.seed = seed

    def _configs(self):
        train = TrainConfig(epochs=self.epochs, fine_tune_epochs=self.fine_tune_epochs,
                            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                            hidden_units=self.hidden_units, seed=self.seed)
        prune = PruneConfig(tau=self.tau, tau_grid=tuple(self.tau_grid),
                            search_epochs=self.search_epochs)
        refine = RefineConfig(alpha=self.alpha, gamma=self.gamma, offset=self.offset,
                              iterations=self.iterations)
        return train, prune, refine

    def fit(self, g, y=None):
        _, self.plan_, self.report_ = run_cthge(g, *self._configs())
        self.n_edges_ = g.edge_count
        return self

    def transform(self, g):
        g = check_graph(g)
        if g.edge_count != self.n_edges_:
            raise ConfigError("transform expects the graph the editor was fitted on")
        return self.plan_.apply(g)
