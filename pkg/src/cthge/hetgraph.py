"""Typed heterogeneous graph storage, TSV ingestion and cross-type views.

Edges are stored once (undirected).  Adjacency views materialize both
directions.  Nodes whose type equals ``target_type`` are *target* nodes;
everything else is *non-target*.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, GraphParseError, GraphValidationError

SPLIT_NONE, SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2, 3
SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}
_SPLIT_TOKENS = {v: k for k, v in SPLIT_NAMES.items()}

NODES_FILE = "nodes.tsv"
EDGES_FILE = "edges.tsv"


@dataclass(frozen=True)
class CrossTypeView:
    """Sparse target/non-target adjacency restricted to cross-type edges.

    Rows of ``a_nt`` index non-target nodes, columns index target nodes,
    both in node-index order.  ``e_tn`` lists the graph edge indices of
    the cross-type edges; ``tn_target``/``tn_nontarget`` give, for each of
    them, the local target and non-target positions.
    """

    a_nt: sp.csr_matrix
    e_tn: np.ndarray
    tn_target: np.ndarray
    tn_nontarget: np.ndarray
    n_t: int
    n_n: int

    @property
    def a_tn(self) -> sp.csr_matrix:
        return self.a_nt.T.tocsr()


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Immutable heterogeneous graph.

    Parameters
    ----------
    node_ids : sequence of str
        External node identifiers, one per node index.
    node_types : int array (N,)
        Type id of each node, indexing ``type_names``.
    src, dst, edge_types, weights : arrays (E,)
        Undirected edge list; each logical edge appears once.
    target_type : int
        Type id of the classification target.
    labels : int array (N,)
        Class id, ``-1`` when absent.
    split : int8 array (N,)
        One of ``SPLIT_NONE/TRAIN/VAL/TEST``.
    features : float array (N, F) or None
        Rows of nodes without features are zero and flagged in ``has_features``.
    """

    node_ids: tuple
    node_types: np.ndarray
    type_names: tuple
    src: np.ndarray
    dst: np.ndarray
    edge_types: np.ndarray
    edge_type_names: tuple
    weights: np.ndarray
    target_type: int
    labels: np.ndarray
    split: np.ndarray
    features: Optional[np.ndarray] = None
    has_features: Optional[np.ndarray] = None
    n_classes: int = field(default=0)

    def __post_init__(self):
        for name in ("node_types", "src", "dst", "edge_types", "weights", "labels", "split"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.features is not None:
            self.features.setflags(write=False)
        if self.n_classes == 0:
            lab = self.labels[self.labels >= 0]
            object.__setattr__(self, "n_classes", int(lab.max()) + 1 if lab.size else 0)
        self.validate()

    # ------------------------------------------------------------------
    # basic properties

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_count(self) -> int:
        return int(self.src.shape[0])

    @property
    def target_name(self) -> str:
        return self.type_names[self.target_type]

    @cached_property
    def is_target(self) -> np.ndarray:
        return self.node_types == self.target_type

    @cached_property
    def target_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.is_target)

    @cached_property
    def nontarget_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_target)

    @cached_property
    def local_index(self) -> np.ndarray:
        """Position of each node inside its target / non-target block."""
        out = np.empty(self.node_count, dtype=np.int64)
        out[self.target_nodes] = np.arange(self.target_nodes.size)
        out[self.nontarget_nodes] = np.arange(self.nontarget_nodes.size)
        return out

    @property
    def train_mask(self) -> np.ndarray:
        return self.is_target & (self.split == SPLIT_TRAIN)

    def split_nodes(self, which: str) -> np.ndarray:
        return np.flatnonzero(self.is_target & (self.split == SPLIT_NAMES[which]))

    def validate(self) -> None:
        n = self.node_count
        if len(self.node_types) != n or len(self.labels) != n or len(self.split) != n:
            raise GraphValidationError("per-node arrays must have node_count entries")
        if len(set(self.node_ids)) != n:
            raise GraphValidationError("duplicate node id")
        e = self.edge_count
        if not (len(self.dst) == len(self.edge_types) == len(self.weights) == e):
            raise GraphValidationError("per-edge arrays must have equal length")
        if e:
            bad = (self.src < 0) | (self.src >= n) | (self.dst < 0) | (self.dst >= n)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise GraphValidationError(
                    f"edge {i} references a node index outside [0, {n})"
                )
            if (self.weights < 0).any() or not np.isfinite(self.weights).all():
                raise GraphValidationError("edge weights must be finite and nonnegative")
        if not 0 <= self.target_type < len(self.type_names):
            raise GraphValidationError("target_type is not a known node type")
        train = self.train_mask
        if (self.labels[train] < 0).any():
            raise GraphValidationError("every training target node needs a label")
        if self.is_target.any() and self.n_classes < 2:
            raise GraphValidationError("at least two classes are required")
        if (self.labels >= self.n_classes).any():
            raise GraphValidationError("label exceeds n_classes")
        if self.features is not None and self.features.shape[0] != n:
            raise GraphValidationError("feature matrix must have node_count rows")

    # ------------------------------------------------------------------
    # edge partition and views

    @cached_property
    def _edge_kind(self) -> np.ndarray:
        t = self.is_target
        return t[self.src].astype(np.int8) + t[self.dst].astype(np.int8)

    def partition_edges(self):
        """Return ``(e_tt, e_tn, e_nn)`` edge-index arrays.

        Self-loops on target nodes fall into ``e_tt``.
        """
        kind = self._edge_kind
        return (
            np.flatnonzero(kind == 2),
            np.flatnonzero(kind == 1),
            np.flatnonzero(kind == 0),
        )

    @cached_property
    def cross_view(self) -> CrossTypeView:
        _, e_tn, _ = self.partition_edges()
        s, d = self.src[e_tn], self.dst[e_tn]
        tgt_first = self.is_target[s]
        t_node = np.where(tgt_first, s, d)
        n_node = np.where(tgt_first, d, s)
        rows = self.local_index[n_node]
        cols = self.local_index[t_node]
        n_t, n_n = self.target_nodes.size, self.nontarget_nodes.size
        a_nt = sp.csr_matrix(
            (self.weights[e_tn].astype(float), (rows, cols)), shape=(n_n, n_t)
        )
        a_nt.sort_indices()
        return CrossTypeView(
            a_nt=a_nt, e_tn=e_tn, tn_target=cols, tn_nontarget=rows, n_t=n_t, n_n=n_n
        )

    def adjacency(self, edge_type: Optional[int] = None) -> sp.csr_matrix:
        """Symmetric weighted N x N adjacency, optionally for one edge type."""
        sel = slice(None) if edge_type is None else self.edge_types == edge_type
        s, d, w = self.src[sel], self.dst[sel], self.weights[sel].astype(float)
        loop = s == d
        rows = np.concatenate([s, d[~loop]])
        cols = np.concatenate([d, s[~loop]])
        vals = np.concatenate([w, w[~loop]])
        n = self.node_count
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def degrees(self) -> np.ndarray:
        deg = np.bincount(self.src, minlength=self.node_count)
        deg += np.bincount(self.dst, minlength=self.node_count)
        return deg

    # ------------------------------------------------------------------
    # derived graphs

    def with_edge_mask(self, keep: np.ndarray) -> "HeteroGraph":
        """New graph keeping only edges where ``keep`` is true (order preserved)."""
        keep = np.asarray(keep, dtype=bool)
        return _replace(
            self,
            src=self.src[keep].copy(),
            dst=self.dst[keep].copy(),
            edge_types=self.edge_types[keep].copy(),
            weights=self.weights[keep].copy(),
        )

    def with_split(self, split: np.ndarray) -> "HeteroGraph":
        return _replace(self, split=np.asarray(split, dtype=np.int8).copy())

    def canonical(self) -> "HeteroGraph":
        """Graph with nodes sorted by id, edges oriented and sorted.

        Type ids are reassigned by first appearance in the canonical order,
        so two logically identical graphs produce identical arrays.
        """
        order = np.array(
            sorted(range(self.node_count), key=lambda i: _id_key(self.node_ids[i])),
            dtype=np.int64,
        )
        new_pos = np.empty_like(order)
        new_pos[order] = np.arange(order.size)

        old_types = self.node_types[order]
        type_map, type_names = _first_appearance([self.type_names[t] for t in old_types])
        node_types = np.array(type_map, dtype=np.int64)

        s, d = new_pos[self.src], new_pos[self.dst]
        lo, hi = np.minimum(s, d), np.maximum(s, d)
        et_names = [self.edge_type_names[t] for t in self.edge_types]
        eorder = sorted(
            range(self.edge_count),
            key=lambda i: (lo[i], hi[i], et_names[i], self.weights[i]),
        )
        eorder = np.array(eorder, dtype=np.int64)
        emap, edge_type_names = _first_appearance([et_names[i] for i in eorder])

        feats = None if self.features is None else self.features[order].copy()
        hasf = None if self.has_features is None else self.has_features[order].copy()
        return HeteroGraph(
            node_ids=tuple(self.node_ids[i] for i in order),
            node_types=node_types,
            type_names=tuple(type_names),
            src=lo[eorder].copy(),
            dst=hi[eorder].copy(),
            edge_types=np.array(emap, dtype=np.int64),
            edge_type_names=tuple(edge_type_names),
            weights=self.weights[eorder].copy(),
            target_type=type_names.index(self.target_name),
            labels=self.labels[order].copy(),
            split=self.split[order].copy(),
            features=feats,
            has_features=hasf,
            n_classes=self.n_classes,
        )


def _replace(g: HeteroGraph, **changes) -> HeteroGraph:
    fields = dict(
        node_ids=g.node_ids,
        node_types=g.node_types,
        type_names=g.type_names,
        src=g.src,
        dst=g.dst,
        edge_types=g.edge_types,
        edge_type_names=g.edge_type_names,
        weights=g.weights,
        target_type=g.target_type,
        labels=g.labels,
        split=g.split,
        features=g.features,
        has_features=g.has_features,
        n_classes=g.n_classes,
    )
    fields.update(changes)
    return HeteroGraph(**fields)


def _id_key(node_id: str):
    try:
        return (0, int(node_id), "")
    except ValueError:
        return (1, 0, node_id)


def _first_appearance(names: Sequence[str]):
    seen: dict = {}
    ids = []
    for nm in names:
        if nm not in seen:
            seen[nm] = len(seen)
        ids.append(seen[nm])
    return ids, list(seen)


def partition_edges(g: HeteroGraph):
    return g.partition_edges()


def cross_view(g: HeteroGraph) -> CrossTypeView:
    return g.cross_view


def from_arrays(
    node_types: Sequence[str],
    edges: Sequence[tuple],
    target_type: str,
    labels: Optional[Sequence[int]] = None,
    split: Optional[Sequence[str]] = None,
    features: Optional[np.ndarray] = None,
    node_ids: Optional[Sequence[str]] = None,
    n_classes: int = 0,
) -> HeteroGraph:
    """Build a graph from Python sequences.

    ``edges`` holds ``(src, dst, edge_type_name[, weight])`` tuples over node
    indices.  ``split`` entries are ``"train"``, ``"val"``, ``"test"`` or
    ``None``.
    """
    n = len(node_types)
    type_ids, type_names = _first_appearance(list(node_types))
    if target_type not in type_names:
        raise ConfigError(f"unknown target type {target_type!r}; known: {type_names}")
    src, dst, etn, w = [], [], [], []
    for e in edges:
        src.append(int(e[0]))
        dst.append(int(e[1]))
        etn.append(str(e[2]))
        w.append(float(e[3]) if len(e) > 3 else 1.0)
    et_ids, et_names = _first_appearance(etn)
    lab = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(
        [-1 if v is None else int(v) for v in labels], dtype=np.int64
    )
    spl = np.zeros(n, dtype=np.int8)
    if split is not None:
        spl = np.array([SPLIT_NAMES[s] if s else SPLIT_NONE for s in split], dtype=np.int8)
    feats = None if features is None else np.asarray(features, dtype=float).copy()
    return HeteroGraph(
        node_ids=tuple(str(i) for i in (range(n) if node_ids is None else node_ids)),
        node_types=np.array(type_ids, dtype=np.int64),
        type_names=tuple(type_names),
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        edge_types=np.array(et_ids, dtype=np.int64),
        edge_type_names=tuple(et_names),
        weights=np.array(w, dtype=float),
        target_type=type_names.index(target_type),
        labels=lab,
        split=spl,
        features=feats,
        has_features=None if feats is None else np.ones(n, dtype=bool),
        n_classes=n_classes,
    )


# ----------------------------------------------------------------------
# TSV I/O


def _lines(path):
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield no, line


def load_graph(nodes_path, edges_path, target_type: Optional[str] = None) -> HeteroGraph:
    """Read the node and edge TSV files.

    When ``target_type`` is None the target is inferred as the single node
    type carrying labels.
    """
    ids, types, labels, splits, feats = [], [], [], [], []
    for no, line in _lines(nodes_path):
        cols = line.split("\t")
        if len(cols) not in (4, 5):
            raise GraphParseError(nodes_path, no, f"expected 4 or 5 columns, got {len(cols)}")
        node_id, tname, lab, spl = cols[:4]
        if not node_id or not tname:
            raise GraphParseError(nodes_path, no, "empty node id or type")
        try:
            labels.append(None if lab == "-" else int(lab))
        except ValueError:
            raise GraphParseError(nodes_path, no, f"bad label {lab!r}") from None
        if spl != "-" and spl not in SPLIT_NAMES:
            raise GraphParseError(nodes_path, no, f"bad split {spl!r}")
        splits.append(None if spl == "-" else spl)
        if len(cols) == 5 and cols[4] != "-":
            try:
                feats.append([float(x) for x in cols[4].split(",")])
            except ValueError:
                raise GraphParseError(nodes_path, no, "bad feature value") from None
        else:
            feats.append(None)
        ids.append(node_id)
        types.append(tname)

    if labels and any(v is not None and v < 0 for v in labels):
        raise GraphValidationError("labels must be nonnegative class ids")
    pos = {}
    for i, nid in enumerate(ids):
        if nid in pos:
            raise GraphValidationError(f"duplicate node id {nid!r}")
        pos[nid] = i

    edges = []
    for no, line in _lines(edges_path):
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise GraphParseError(edges_path, no, f"expected 3 or 4 columns, got {len(cols)}")
        a, b, et = cols[:3]
        for end in (a, b):
            if end not in pos:
                raise GraphValidationError(
                    f"{edges_path}:{no}: edge endpoint {end!r} is not a known node"
                )
        w = 1.0
        if len(cols) == 4:
            try:
                w = float(cols[3])
            except ValueError:
                raise GraphParseError(edges_path, no, f"bad weight {cols[3]!r}") from None
        edges.append((pos[a], pos[b], et, w))

    if target_type is None:
        labelled = sorted({t for t, lab in zip(types, labels) if lab is not None})
        if len(labelled) != 1:
            raise ConfigError(
                "cannot infer target type: labelled node types are "
                f"{labelled}; pass target_type explicitly"
            )
        target_type = labelled[0]
    elif target_type not in set(types):
        raise ConfigError(f"unknown target type {target_type!r}")

    feature_matrix = None
    has = None
    present = [f for f in feats if f is not None]
    if present:
        width = max(len(f) for f in present)
        feature_matrix = np.zeros((len(ids), width))
        has = np.zeros(len(ids), dtype=bool)
        for i, f in enumerate(feats):
            if f is not None:
                feature_matrix[i, : len(f)] = f
                has[i] = True

    g = from_arrays(
        types, edges, target_type, labels=labels, split=splits, node_ids=ids
    )
    if feature_matrix is not None:
        g = _replace(g, features=feature_matrix, has_features=has)
    return g


def load_graph_dir(path, target_type: Optional[str] = None) -> HeteroGraph:
    path = Path(path)
    return load_graph(path / NODES_FILE, path / EDGES_FILE, target_type)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_graph(g: HeteroGraph, out_dir) -> None:
    """Write the canonical TSV pair into ``out_dir``.

    Output is byte-stable for logically identical graphs.  The weight column
    is written only when some weight differs from 1.
    """
    c = g.canonical()
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for i in range(c.node_count):
        lab = "-" if c.labels[i] < 0 else str(int(c.labels[i]))
        spl = _SPLIT_TOKENS.get(int(c.split[i]), "-")
        row = [c.node_ids[i], c.type_names[c.node_types[i]], lab, spl]
        if c.features is not None:
            if c.has_features is None or c.has_features[i]:
                row.append(",".join(_fmt(v) for v in c.features[i]))
            else:
                row.append("-")
        lines.append("\t".join(row))
    _write_lines(Path(out_dir) / NODES_FILE, lines)

    weighted = bool((c.weights != 1.0).any())
    lines = []
    for k in range(c.edge_count):
        row = [c.node_ids[c.src[k]], c.node_ids[c.dst[k]], c.edge_type_names[c.edge_types[k]]]
        if weighted:
            row.append(_fmt(c.weights[k]))
        lines.append("\t".join(row))
    _write_lines(Path(out_dir) / EDGES_FILE, lines)


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
