"""Target-information matrix and the cross-type homophily ratio (CHR).

Target rows carry one-hot labels (training nodes) or softmax scores
(everything else); non-target rows are the L1-normalized weighted sum of
their target neighbours' rows.  CHR is the mean row inner product over the
cross-type edges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DimensionError, NumericError, UndefinedMetricError
from .hetgraph import CrossTypeView, HeteroGraph, SPLIT_TRAIN
from .validation import check_graph, check_matrix


@dataclass(frozen=True)
class TargetInfoMatrix:
    """Row-stochastic class-distribution matrix.

    ``h`` stacks target rows (node-index order) above non-target rows.
    ``row_of[v]`` is the row of global node ``v``.
    """

    h: np.ndarray
    row_of: np.ndarray
    n_t: int
    isolated: np.ndarray

    @property
    def class_count(self) -> int:
        return self.h.shape[1]

    @property
    def l_block(self) -> np.ndarray:
        return self.h[: self.n_t]

    @property
    def p_block(self) -> np.ndarray:
        return self.h[self.n_t :]

    def rows(self, nodes) -> np.ndarray:
        return self.h[self.row_of[np.asarray(nodes)]]

    def node_ordered(self) -> np.ndarray:
        """Rows rearranged into global node-index order."""
        return self.h[self.row_of]


def init_target_info(g: HeteroGraph, test_logits=None) -> np.ndarray:
    """Initial target matrix ``L`` (N_t x C).

    Training nodes get ``e_y``.  Every other target node gets the softmax of
    its row of ``test_logits`` (rows ordered like ``g.target_nodes`` with the
    training nodes removed), or the uniform row ``1/C`` when no logits are
    given.
    """
    c = g.n_classes
    tn = g.target_nodes
    is_train = g.split[tn] == SPLIT_TRAIN
    out = np.zeros((tn.size, c))
    out[np.flatnonzero(is_train), g.labels[tn[is_train]]] = 1.0
    rest = np.flatnonzero(~is_train)
    if test_logits is None:
        out[rest] = 1.0 / c
    else:
        z = np.asarray(test_logits, dtype=float)
        if z.ndim != 2 or z.shape != (rest.size, c):
            raise DimensionError(
                f"test_logits must have shape ({rest.size}, {c}), got {z.shape}"
            )
        if not np.isfinite(z).all():
            raise NumericError("test_logits contains non-finite values")
        out[rest] = softmax(z, axis=1)
    return out


def unlabelled_logits(g: HeteroGraph, logits) -> np.ndarray:
    """Select the non-training target rows of an N x C logit matrix."""
    tn = g.target_nodes
    return np.asarray(logits)[tn[g.split[tn] != SPLIT_TRAIN]]


def propagate(view: CrossTypeView, l) -> np.ndarray:
    """``P = (W o A_nt) L`` as a sparse-dense product."""
    l = np.asarray(l, dtype=float)
    if l.shape[0] != view.n_t:
        raise DimensionError(f"L has {l.shape[0]} rows, view has {view.n_t} target nodes")
    return np.asarray(view.a_nt @ l)


def normalize_rows(p):
    """L1-normalize rows; return ``(p_prime, isolated)`` with zero rows flagged."""
    p = np.asarray(p, dtype=float)
    if (p < 0).any():
        raise NumericError("propagated matrix has negative entries")
    norms = p.sum(axis=1)
    isolated = norms == 0
    out = np.zeros_like(p)
    out[~isolated] = p[~isolated] / norms[~isolated, None]
    return out, isolated


def build_target_info(g: HeteroGraph, l, p_prime, isolated=None) -> TargetInfoMatrix:
    l = np.asarray(l, dtype=float)
    p_prime = np.asarray(p_prime, dtype=float).reshape(-1, l.shape[1])
    n_t = l.shape[0]
    row_of = np.empty(g.node_count, dtype=np.int64)
    row_of[g.target_nodes] = np.arange(n_t)
    row_of[g.nontarget_nodes] = n_t + np.arange(g.nontarget_nodes.size)
    if isolated is None:
        isolated = p_prime.sum(axis=1) == 0
    return TargetInfoMatrix(
        h=np.vstack([l, p_prime]), row_of=row_of, n_t=n_t, isolated=np.asarray(isolated)
    )


def target_info(g: HeteroGraph, test_logits=None, l=None) -> TargetInfoMatrix:
    """Convenience composition of init, propagate, normalize and build."""
    if l is None:
        l = init_target_info(g, test_logits)
    p, iso = normalize_rows(propagate(g.cross_view, l))
    return build_target_info(g, l, p, iso)


def edge_similarity(h: TargetInfoMatrix, edge) -> float:
    vi, vj = edge
    return float(h.h[h.row_of[vi]] @ h.h[h.row_of[vj]])


def edge_similarities(g: HeteroGraph, h: TargetInfoMatrix, edges=None) -> np.ndarray:
    """Similarity of each edge in ``edges`` (graph edge indices; default all cross edges)."""
    if edges is None:
        edges = g.cross_view.e_tn
    edges = np.asarray(edges, dtype=np.int64)
    a = h.h[h.row_of[g.src[edges]]]
    b = h.h[h.row_of[g.dst[edges]]]
    return np.einsum("ij,ij->i", a, b)


def compute_chr(g: HeteroGraph, h: TargetInfoMatrix, edges=None) -> float:
    """Mean cross-edge similarity.  Raises if there are no cross-type edges."""
    sims = edge_similarities(g, h, edges)
    if sims.size == 0:
        raise UndefinedMetricError("CHR is undefined without cross-type edges")
    return float(np.mean(sims))


def chr_of_subset(sims: np.ndarray, mask: np.ndarray) -> float:
    sel = np.asarray(sims)[np.asarray(mask, dtype=bool)]
    if sel.size == 0:
        raise UndefinedMetricError("CHR is undefined on an empty edge set")
    return float(np.mean(sel))


def homophily_ratio(src, dst, labels) -> float:
    """Edge homophily of a homogeneous graph: fraction of same-label edges."""
    labels = np.asarray(labels)
    if len(src) == 0:
        raise UndefinedMetricError("homophily ratio is undefined without edges")
    return float(np.mean(labels[np.asarray(src)] == labels[np.asarray(dst)]))


def write_chr_report(path, g: HeteroGraph, h: TargetInfoMatrix) -> float:
    """CSV ``edge_id,src,dst,similarity`` followed by ``CHR,<value>``."""
    e_tn = g.cross_view.e_tn
    sims = edge_similarities(g, h, e_tn)
    value = compute_chr(g, h, e_tn)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("edge_id,src,dst,similarity\n")
        for k, s in zip(e_tn, sims):
            fh.write(f"{k},{g.node_ids[g.src[k]]},{g.node_ids[g.dst[k]]},{float(s)!r}\n")
        fh.write(f"CHR,{value!r}\n")
    return value


class CrossTypeHomophily(BaseEstimator, TransformerMixin):
    """Estimator wrapper: ``fit`` builds the target information of a graph.

    Parameters
    ----------
    logits : array (N, C) or None
        Model logits for every node; only rows of non-training target nodes
        are used.  ``None`` selects the uniform fallback.

    Attributes
    ----------
    target_info_ : TargetInfoMatrix
    similarities_ : array of per-cross-edge similarity
    chr_ : float
    """

    def __init__(self, logits=None):
        self.logits = logits

    def fit(self, g, y=None):
        g = check_graph(g, require_cross=True)
        test_logits = None
        if self.logits is not None:
            z = check_matrix(self.logits, shape=(g.node_count, g.n_classes), name="logits")
            test_logits = unlabelled_logits(g, z)
        self.target_info_ = target_info(g, test_logits)
        self.similarities_ = edge_similarities(g, self.target_info_)
        self.chr_ = float(np.mean(self.similarities_))
        return self

    def transform(self, g):
        """Per-cross-edge similarities of ``g`` under the fitted target info."""
        return edge_similarities(check_graph(g), self.target_info_)

    def score(self, g, y=None):
        return compute_chr(check_graph(g, require_cross=True), self.target_info_)
