"""Two-layer relation-aware graph convolution in plain numpy.

Layer rule, per layer ``l``::

    Z = H W_self + sum_r  A_r H W_r + b,      H' = relu(Z)

with ``A_r = D_r^-1/2 A_r D_r^-1/2`` the symmetric-normalized adjacency of
edge type ``r``.  Node features first pass through a projection chosen by
node type, and a linear head maps the last hidden layer to class logits.
Gradients are derived by hand; ``gradient_check`` compares them against
central finite differences.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import ConfigError, DivergenceError
from .hetgraph import HeteroGraph
from .validation import check_graph

log = logging.getLogger(__name__)

N_DEGREE_BUCKETS = 16
CHECKPOINT_MAGIC = b"CTHGEGCN"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 400
    fine_tune_epochs: int = 200
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    hidden_units: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ConfigError("epoch counts must be nonnegative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.hidden_units < 1:
            raise ConfigError("hidden_units must be positive")


# ----------------------------------------------------------------------
# graph -> model inputs


def degree_features(g: HeteroGraph) -> np.ndarray:
    """One-hot degree bucket ``min(floor(log2(1 + deg)), 15)``."""
    deg = g.degrees()
    bucket = np.minimum(np.floor(np.log2(1.0 + deg)).astype(int), N_DEGREE_BUCKETS - 1)
    out = np.zeros((g.node_count, N_DEGREE_BUCKETS))
    out[np.arange(g.node_count), bucket] = 1.0
    return out


def node_features(g: HeteroGraph, synthesize=True) -> np.ndarray:
    if g.features is None:
        if not synthesize:
            raise ConfigError("graph has no features and feature synthesis is disabled")
        return degree_features(g)
    if g.has_features is not None and not g.has_features.all():
        if not synthesize:
            raise ConfigError("some nodes lack features and feature synthesis is disabled")
        return np.hstack([g.features, degree_features(g)])
    return np.asarray(g.features, dtype=float)


def normalized_relations(g: HeteroGraph, n_relations: int):
    out = []
    for r in range(n_relations):
        a = g.adjacency(r)
        deg = np.asarray(a.sum(axis=1)).ravel()
        inv = np.zeros_like(deg)
        nz = deg > 0
        inv[nz] = 1.0 / np.sqrt(deg[nz])
        d = sp.diags(inv)
        out.append((d @ a @ d).tocsr())
    return out


@dataclass
class GraphInputs:
    x: np.ndarray
    node_types: np.ndarray
    relations: list


def graph_inputs(g: HeteroGraph, n_relations=None, synthesize=True) -> GraphInputs:
    n_rel = len(g.edge_type_names) if n_relations is None else n_relations
    return GraphInputs(
        x=node_features(g, synthesize),
        node_types=np.asarray(g.node_types),
        relations=normalized_relations(g, n_rel),
    )


# ----------------------------------------------------------------------
# model


class GcnModel:
    """Parameters and Adam state of the relational GCN.

    Parameter names: ``proj{t}`` (per node type), ``w_self{l}``,
    ``w_rel{l}_{r}``, ``b{l}`` for layers 1 and 2, ``w_out`` and ``b_out``.
    """

    def __init__(self, n_types, in_dim, n_relations, n_classes, hidden_units=64,
                 activation="relu", seed=0, synthesize_features=True):
        if activation not in ("relu", "identity"):
            raise ConfigError(f"unknown activation {activation!r}")
        self.n_types = int(n_types)
        self.in_dim = int(in_dim)
        self.n_relations = int(n_relations)
        self.n_classes = int(n_classes)
        self.hidden_units = int(hidden_units)
        self.activation = activation
        self.seed = int(seed)
        self.synthesize_features = synthesize_features
        self.params: Dict[str, np.ndarray] = {}
        rng = np.random.default_rng(self.seed)
        h = self.hidden_units
        for t in range(self.n_types):
            self.params[f"proj{t}"] = _glorot(rng, self.in_dim, h)
        for layer in (1, 2):
            self.params[f"w_self{layer}"] = _glorot(rng, h, h)
            for r in range(self.n_relations):
                self.params[f"w_rel{layer}_{r}"] = _glorot(rng, h, h)
            self.params[f"b{layer}"] = np.zeros(h)
        self.params["w_out"] = _glorot(rng, h, self.n_classes)
        self.params["b_out"] = np.zeros(self.n_classes)
        self.reset_optimizer()

    @classmethod
    def for_graph(cls, g: HeteroGraph, hidden_units=64, seed=0, activation="relu",
                  synthesize_features=True):
        x = node_features(g, synthesize_features)
        return cls(len(g.type_names), x.shape[1], len(g.edge_type_names), g.n_classes,
                   hidden_units=hidden_units, activation=activation, seed=seed,
                   synthesize_features=synthesize_features)

    def reset_optimizer(self):
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step = 0

    def copy(self) -> "GcnModel":
        other = object.__new__(GcnModel)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.m = {k: v.copy() for k, v in self.m.items()}
        other.v = {k: v.copy() for k, v in self.v.items()}
        return other

    def config(self) -> dict:
        return dict(n_types=self.n_types, in_dim=self.in_dim, n_relations=self.n_relations,
                    n_classes=self.n_classes, hidden_units=self.hidden_units,
                    activation=self.activation, seed=self.seed,
                    synthesize_features=self.synthesize_features)

    def inputs(self, g: HeteroGraph) -> GraphInputs:
        inp = graph_inputs(g, self.n_relations, self.synthesize_features)
        if inp.x.shape[1] != self.in_dim:
            raise ConfigError(
                f"graph has {inp.x.shape[1]} input features, model expects {self.in_dim}"
            )
        return inp

    # -- forward / backward --------------------------------------------

    def _act(self, z):
        return np.maximum(z, 0.0) if self.activation == "relu" else z

    def _forward(self, inp: GraphInputs, dtype=float):
        p = self.params
        x, relations = inp.x, inp.relations
        if dtype is not float:
            p = {k: v.astype(dtype) for k, v in p.items()}
            x = x.astype(dtype)
            relations = [a.astype(dtype) for a in relations]
        h0 = np.zeros((x.shape[0], self.hidden_units), dtype=dtype)
        for t in range(self.n_types):
            idx = inp.node_types == t
            if idx.any():
                h0[idx] = x[idx] @ p[f"proj{t}"]
        cache = {"h0": h0}
        h = h0
        for layer in (1, 2):
            agg = [a @ h for a in relations]
            z = h @ p[f"w_self{layer}"] + p[f"b{layer}"]
            for r, ah in enumerate(agg):
                z = z + ah @ p[f"w_rel{layer}_{r}"]
            cache[f"in{layer}"] = h
            cache[f"agg{layer}"] = agg
            cache[f"z{layer}"] = z
            h = self._act(z)
        cache["h2"] = h
        logits = h @ p["w_out"] + p["b_out"]
        return logits, cache

    def _backward(self, inp: GraphInputs, cache, dlogits):
        p = self.params
        g: Dict[str, np.ndarray] = {}
        h2 = cache["h2"]
        g["w_out"] = h2.T @ dlogits
        g["b_out"] = dlogits.sum(axis=0)
        dh = dlogits @ p["w_out"].T
        for layer in (2, 1):
            z = cache[f"z{layer}"]
            dz = dh * (z > 0) if self.activation == "relu" else dh
            h_in = cache[f"in{layer}"]
            g[f"w_self{layer}"] = h_in.T @ dz
            g[f"b{layer}"] = dz.sum(axis=0)
            dh = dz @ p[f"w_self{layer}"].T
            for r, a in enumerate(inp.relations):
                g[f"w_rel{layer}_{r}"] = cache[f"agg{layer}"][r].T @ dz
                dh = dh + a.T @ (dz @ p[f"w_rel{layer}_{r}"].T)
        for t in range(self.n_types):
            idx = inp.node_types == t
            g[f"proj{t}"] = inp.x[idx].T @ dh[idx]
        return g

    def loss_and_grads(self, inp: GraphInputs, nodes, targets, weight_decay=0.0):
        """Mean cross-entropy over ``nodes`` plus ``weight_decay/2 * ||theta||^2``."""
        nodes = np.asarray(nodes, dtype=np.int64)
        logits, cache = self._forward(inp)
        logp = log_softmax(logits[nodes], axis=1)
        n = max(nodes.size, 1)
        loss = -float(logp[np.arange(nodes.size), targets].sum()) / n
        dlogits = np.zeros_like(logits)
        probs = np.exp(logp)
        probs[np.arange(nodes.size), targets] -= 1.0
        dlogits[nodes] = probs / n
        grads = self._backward(inp, cache, dlogits)
        if weight_decay:
            for k, v in self.params.items():
                loss += 0.5 * weight_decay * float(np.sum(v * v))
                grads[k] = grads[k] + weight_decay * v
        return loss, grads

    def loss(self, inp: GraphInputs, nodes, targets, dtype=float):
        """Mean cross-entropy only, optionally evaluated in another float type."""
        nodes = np.asarray(nodes, dtype=np.int64)
        logits, _ = self._forward(inp, dtype)
        z = logits[nodes]
        zmax = z.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
        picked = z[np.arange(nodes.size), targets]
        return (lse - picked).sum() / max(nodes.size, 1)

    def adam_step(self, grads, cfg: TrainConfig):
        self.step += 1
        b1, b2 = cfg.beta1, cfg.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for k, w in self.params.items():
            gk = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * gk
            self.v[k] = b2 * self.v[k] + (1 - b2) * gk * gk
            w -= cfg.learning_rate * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + cfg.eps)

    def fit_nodes(self, inp: GraphInputs, nodes, targets, epochs, cfg: TrainConfig):
        """Full-batch Adam on cross-entropy over ``nodes``; returns per-epoch losses."""
        targets = np.asarray(targets, dtype=np.int64)
        history = []
        for epoch in range(epochs):
            loss, grads = self.loss_and_grads(inp, nodes, targets, cfg.weight_decay)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            self.adam_step(grads, cfg)
            history.append(loss)
        if not all(np.isfinite(v).all() for v in self.params.values()):
            raise DivergenceError(epochs, "parameters became non-finite")
        return history


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ----------------------------------------------------------------------
# functional API


def forward(model: GcnModel, g: HeteroGraph) -> np.ndarray:
    """Logits for every node, shape (N, C)."""
    logits, _ = model._forward(model.inputs(g))
    return logits


def predict_proba(model: GcnModel, g: HeteroGraph) -> np.ndarray:
    return softmax(forward(model, g), axis=1)


def train_pre(model: GcnModel, g: HeteroGraph, cfg: TrainConfig):
    """Supervised training on labelled training target nodes.

    Returns ``(model, final_loss)``; ``final_loss`` is None when ``cfg.epochs``
    is zero.
    """
    nodes = np.flatnonzero(g.train_mask)
    if nodes.size == 0:
        raise ConfigError("training split is empty")
    history = model.fit_nodes(model.inputs(g), nodes, g.labels[nodes], cfg.epochs, cfg)
    return model, (history[-1] if history else None)


def fine_tune(model: GcnModel, g: HeteroGraph, pseudo: Dict[int, int], cfg: TrainConfig,
              epochs: Optional[int] = None):
    """Cross-entropy on pseudo-labelled non-target nodes.

    An empty ``pseudo`` mapping leaves the model untouched (logged warning).
    """
    if not pseudo:
        log.warning("no confident pseudo-labelled nodes; skipping fine-tuning")
        return model
    nodes = np.fromiter(sorted(pseudo), dtype=np.int64)
    targets = np.array([pseudo[v] for v in nodes], dtype=np.int64)
    n_ep = cfg.fine_tune_epochs if epochs is None else epochs
    model.fit_nodes(model.inputs(g), nodes, targets, n_ep, cfg)
    return model


def gradient_check(model: GcnModel, g: HeteroGraph, probe_count=64, step=1e-5, seed=0,
                   nodes=None, targets=None, probes=None):
    """Largest relative error between analytic and central-difference gradients.

    Probes are ``(param_name, flat_index)`` pairs drawn uniformly over all
    parameter entries unless given.  The relative error of a probe is
    ``|a - n| / max(|a|, |n|)``, and zero when both gradients are zero.
    Perturbed losses are evaluated in extended precision so that roundoff
    does not swamp small gradient entries.
    """
    inp = model.inputs(g)
    if nodes is None:
        nodes = np.flatnonzero(g.train_mask)
        if nodes.size == 0:
            nodes = np.flatnonzero(g.labels >= 0)
        targets = g.labels[nodes]
    targets = np.asarray(targets, dtype=np.int64)
    _, grads = model.loss_and_grads(inp, nodes, targets)
    if probes is None:
        names = list(model.params)
        sizes = np.array([model.params[k].size for k in names])
        rng = np.random.default_rng(seed)
        flat = rng.choice(sizes.sum(), size=min(probe_count, int(sizes.sum())), replace=False)
        bounds = np.cumsum(sizes)
        probes = []
        for f in flat:
            i = int(np.searchsorted(bounds, f, side="right"))
            probes.append((names[i], int(f - (bounds[i] - sizes[i]))))
    worst = 0.0
    for name, idx in probes:
        lp = _perturbed_loss(model, inp, nodes, targets, name, idx, step)
        lm = _perturbed_loss(model, inp, nodes, targets, name, idx, -step)
        numeric = float((lp - lm) / (2 * step))
        analytic = float(grads[name].reshape(-1)[idx])
        denom = max(abs(analytic), abs(numeric))
        err = 0.0 if denom == 0 else abs(analytic - numeric) / denom
        worst = max(worst, err)
    return worst


def _perturbed_loss(model, inp, nodes, targets, name, idx, delta):
    ext = np.longdouble
    saved = model.params
    shifted = dict(saved)
    w = saved[name].astype(ext).reshape(-1)
    w[idx] += ext(delta)
    shifted[name] = w.reshape(saved[name].shape)
    model.params = shifted
    try:
        return model.loss(inp, nodes, targets, dtype=ext)
    finally:
        model.params = saved


# ----------------------------------------------------------------------
# checkpoints: magic, u32 version, u32 header length, JSON header,
# then every tensor as row-major little-endian float64.


def save_model(model: GcnModel, path) -> None:
    tensors = []
    for group, store in (("param", model.params), ("m", model.m), ("v", model.v)):
        for k, arr in store.items():
            tensors.append((f"{group}:{k}", arr))
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.config(),
        "step": model.step,
        "tensors": [[name, list(arr.shape)] for name, arr in tensors],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> GcnModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    model = GcnModel(**header["config"])
    model.step = header["step"]
    stores = {"param": model.params, "m": model.m, "v": model.v}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        group, key = name.split(":", 1)
        stores[group][key] = arr.astype(float).copy()
    return model


# ----------------------------------------------------------------------
# estimator


class MultiGCNClassifier(BaseEstimator, ClassifierMixin):
    """Relational GCN node classifier over a ``HeteroGraph``.

    ``fit`` trains on the graph's training split; ``predict`` returns the
    predicted class for every target node (``g.target_nodes`` order).
    """

    def __init__(self, hidden_units=64, epochs=400, fine_tune_epochs=200,
                 learning_rate=5e-4, weight_decay=1e-4, activation="relu", seed=0):
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.fine_tune_epochs = fine_tune_epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.activation = activation
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, fine_tune_epochs=self.fine_tune_epochs,
                           learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           hidden_units=self.hidden_units, seed=self.seed)

    def fit(self, g, y=None):
        g = check_graph(g, require_train=True)
        cfg = self._train_config()
        self.model_ = GcnModel.for_graph(g, cfg.hidden_units, cfg.seed, self.activation)
        _, self.loss_ = train_pre(self.model_, g, cfg)
        self.classes_ = np.arange(g.n_classes)
        return self

    def fine_tune(self, g, pseudo):
        fine_tune(self.model_, check_graph(g), pseudo, self._train_config())
        return self

    def decision_function(self, g):
        """Logits for all nodes."""
        return forward(self.model_, check_graph(g))

    def predict_proba(self, g):
        g = check_graph(g)
        return softmax(forward(self.model_, g), axis=1)[g.target_nodes]

    def predict(self, g):
        return self.predict_proba(g).argmax(axis=1)

    def score(self, g, y=None, split="test"):
        """Accuracy on the given split of target nodes."""
        g = check_graph(g)
        pred = forward(self.model_, g).argmax(axis=1)
        nodes = g.split_nodes(split)
        return float(np.mean(pred[nodes] == g.labels[nodes]))


def train_config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
