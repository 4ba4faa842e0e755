"""Command-line entry point: ``cthge {chr,edit,bench,theory,synth,eval}``.

Every run resolves its parameters as built-in defaults, overridden by a
``--config`` JSON file (for instance a previous ``config.lock``), overridden
by explicit flags, and writes the resolved values to ``<out>/config.lock``.

Exit codes: 0 success, 1 pipeline failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import editing, evaluation, homophily, synth, theory
from .exceptions import (
    ConfigError,
    CTHGEError,
    DomainError,
    GraphParseError,
    GraphValidationError,
)
from .hetgraph import load_graph_dir, save_graph
from .hgnn import GcnModel, TrainConfig, forward, train_pre

log = logging.getLogger("cthge")

USAGE_ERRORS = (ConfigError, GraphParseError, GraphValidationError, FileNotFoundError)


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    items = [t for t in str(text).split(",") if t.strip()]
    return [float(t) for t in items]


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(t) for t in str(text).split(",") if t.strip()]


def _tau(text):
    if text is None or str(text).lower() == "auto":
        return "auto"
    return float(text)


def _strs(text):
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [text]


TRAIN_PARAMS = [
    ("epochs", int, 400, "pretraining epochs"),
    ("fine_tune_epochs", int, 200, "fine-tuning epochs per refinement round"),
    ("lr", float, 5e-4, "Adam learning rate"),
    ("weight_decay", float, 1e-4, "L2 weight decay"),
    ("hidden", int, 64, "hidden units"),
]
EDIT_PARAMS = [
    ("tau", _tau, "auto", "pruning threshold or 'auto' for validation search"),
    ("tau_grid", _floats, list(editing.DEFAULT_TAU_GRID), "comma-separated search grid"),
    ("search_epochs", int, 200, "retraining epochs per grid point"),
    ("alpha", float, 0.10, "refinement ratio"),
    ("gamma", float, 0.1, "gap factor"),
    ("offset", float, 0.06, "base offset"),
    ("iters", int, 3, "refinement rounds"),
]
SYNTH_PARAMS = [
    ("n_t", int, 500, "target nodes"),
    ("n_n", int, 500, "non-target nodes"),
    ("classes", int, 3, "classes"),
    ("target_chr", float, 0.7, "planted CHR"),
    ("tt_edges", int, 500, "target-target edges"),
    ("tn_edges", int, 3000, "cross-type edges"),
    ("nn_edges", int, 500, "non-target edges"),
    ("feature_dim", int, 8, "feature dimension"),
    ("class_separation", float, 1.0, "distance of class means"),
    ("split", _floats, [0.6, 0.2, 0.2], "train,val,test ratios"),
]

COMMANDS = {
    "chr": [
        ("graph", str, None, "graph directory with nodes.tsv and edges.tsv"),
        ("target", str, None, "target node type (default: the labelled type)"),
        ("logits", str, "train", "'train', 'none' (uniform) or a .npy/.txt N x C file"),
    ] + TRAIN_PARAMS,
    "edit": [
        ("graph", str, None, "graph directory"),
        ("target", str, None, "target node type"),
        ("skip_f1", bool, False, "skip the before/after F1 evaluation"),
    ] + EDIT_PARAMS + TRAIN_PARAMS,
    "bench": [
        ("grid", _floats, [0.3, 0.5, 0.7, 0.9], "target CHR values"),
        ("seeds", int, 5, "seeds per grid point"),
        ("compare", bool, False, "also run the editor and report ARI"),
    ] + [p for p in SYNTH_PARAMS if p[0] != "target_chr"] + [
        ("epochs", int, 100, "training epochs"),
        ("fine_tune_epochs", int, 200, "fine-tuning epochs"),
        ("lr", float, 5e-4, "learning rate"),
        ("weight_decay", float, 1e-4, "weight decay"),
        ("hidden", int, 32, "hidden units"),
    ] + EDIT_PARAMS,
    "theory": [
        ("qs", float, 0.9, "same-type homophily"),
        ("qc_grid", _floats, [0.2, 0.4, 0.6, 0.8, 1.0], "cross-type homophily grid"),
        ("samples", int, 100_000, "samples per class and grid point"),
        ("dim", int, 2, "feature dimension"),
        ("sigma", float, 1.0, "per-class standard deviation"),
        ("separation", float, 2.0, "distance between class means"),
        ("lam", float, 0.5, "non-target mixture coefficient"),
    ],
    "synth": SYNTH_PARAMS,
    "eval": [
        ("graph", _strs, None, "graph directory (repeatable)"),
        ("target", str, None, "target node type"),
        ("eval_seeds", _ints, [0, 1, 2], "comma-separated training seeds"),
        ("edit", bool, False, "also evaluate the edited graph"),
    ] + EDIT_PARAMS + TRAIN_PARAMS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cthge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, params in COMMANDS.items():
        p = sub.add_parser(name)
        if name in ("synth", "eval"):
            p.add_argument("action", choices=["gen"] if name == "synth" else ["run"])
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON config or config.lock")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads (env CTHGE_THREADS)")
        p.add_argument("-v", "--verbose", action="store_true")
        for pname, typ, _, help_ in params:
            flag = "--" + pname.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=pname, action="store_const", const=True,
                               default=None, help=help_)
            elif typ is _strs:
                p.add_argument(flag, dest=pname, action="append", default=None, help=help_)
            else:
                p.add_argument(flag, dest=pname, default=None, help=help_)
    return parser


def resolve(args) -> dict:
    """Merge defaults, config file and explicit flags into one dict."""
    params = COMMANDS[args.command]
    values = {name: default for name, _, default, _ in params}
    values["seed"] = 0
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if loaded.get("command", args.command) != args.command:
            raise ConfigError(
                f"{args.config} was written by '{loaded['command']}', not '{args.command}'"
            )
        known = set(values) | {"command"}
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in loaded.items() if k != "command"})
    for name, _, _, _ in params:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    if args.seed is not None:
        values["seed"] = args.seed
    try:
        for name, typ, _, _ in params:
            if values[name] is not None and typ is not bool:
                values[name] = typ(values[name])
        values["seed"] = int(values["seed"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameter value: {exc}") from None
    return values


def write_lock(out: Path, command: str, values: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.lock", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"command": command, **values}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_config(v) -> TrainConfig:
    return TrainConfig(epochs=v["epochs"], fine_tune_epochs=v["fine_tune_epochs"],
                       learning_rate=v["lr"], weight_decay=v["weight_decay"],
                       hidden_units=v["hidden"], seed=v["seed"])


def _edit_configs(v):
    tau = None if v["tau"] == "auto" else v["tau"]
    prune = editing.PruneConfig(tau=tau, tau_grid=tuple(v["tau_grid"]),
                                search_epochs=v["search_epochs"])
    refine = editing.RefineConfig(alpha=v["alpha"], gamma=v["gamma"], offset=v["offset"],
                                  iterations=v["iters"])
    return prune, refine


def _require(v, name):
    if v.get(name) in (None, []):
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return v[name]


def _load(v, path=None):
    path = path or _require(v, "graph")
    if not Path(path).is_dir():
        raise FileNotFoundError(f"graph directory not found: {path}")
    return load_graph_dir(path, v.get("target"))


# ----------------------------------------------------------------------
# subcommands


def cmd_chr(v, out: Path) -> int:
    g = _load(v)
    mode = v["logits"]
    if mode == "none":
        test_logits = None
    elif mode == "train":
        cfg = _train_config(v)
        model = GcnModel.for_graph(g, cfg.hidden_units, cfg.seed)
        train_pre(model, g, cfg)
        test_logits = homophily.unlabelled_logits(g, forward(model, g))
    else:
        if not Path(mode).is_file():
            raise FileNotFoundError(f"logits file not found: {mode}")
        z = np.load(mode) if mode.endswith(".npy") else np.loadtxt(mode, ndmin=2)
        if z.shape != (g.node_count, g.n_classes):
            raise ConfigError(f"logits must have shape {(g.node_count, g.n_classes)}, got {z.shape}")
        test_logits = homophily.unlabelled_logits(g, z)
    h = homophily.target_info(g, test_logits)
    value = homophily.write_chr_report(out / "chr_report.csv", g, h)
    print(f"CHR {value!r}")
    return 0


def cmd_edit(v, out: Path) -> int:
    g = _load(v)
    cfg = _train_config(v)
    prune, refine = _edit_configs(v)
    edited, plan, report = editing.run_cthge(g, cfg, prune, refine)
    save_graph(edited, out)
    plan.write_csv(out / "plan.csv")
    editing.write_report_csv(out / "report.csv", plan)
    summary = [("tau", plan.tau), ("chr_before", plan.chr_original), ("chr_after", plan.chr_final)]
    if not v["skip_f1"]:
        before = evaluation.train_and_score(g, cfg)
        after = evaluation.train_and_score(edited, cfg)
        summary += [("macro_f1_before", before.macro_f1), ("macro_f1_after", after.macro_f1),
                    ("micro_f1_before", before.micro_f1), ("micro_f1_after", after.micro_f1)]
    _write_pairs(out / "summary.csv", summary)
    for k, val in summary:
        print(f"{k} {val!r}")
    return 0


def cmd_bench(v, out: Path) -> int:
    grid = v["grid"]
    if not grid:
        raise ConfigError("--grid must list at least one CHR value")
    if v["seeds"] < 1:
        raise ConfigError("--seeds must be positive")
    base = synth.SynthConfig(**{k: v[k] for k, *_ in SYNTH_PARAMS if k in v}, seed=v["seed"])
    cfg = _train_config(v)
    seeds = [v["seed"] + i for i in range(v["seeds"])]
    rows, rho = synth.chr_sweep(base, grid, synth.gcn_trainer(cfg), seeds)
    summary = [("spearman_chr_macro_f1", "undefined" if rho is None else rho)]
    if v["compare"]:
        prune, refine = _edit_configs(v)
        for row in rows:
            g, truth = synth.generate(synth.SynthConfig(
                **{**asdict(base), "target_chr": row["target_chr"], "seed": row["seed"]}))
            seed_cfg = TrainConfig(**{**asdict(cfg), "seed": row["seed"]})
            edited, _, _ = editing.run_cthge(g, seed_cfg, prune, refine)
            rep = evaluation.train_and_score(edited, seed_cfg)
            row.update(chr_cthge=synth.oracle_chr(edited, truth),
                       macro_f1_cthge=rep.macro_f1, micro_f1_cthge=rep.micro_f1)
        summary += [
            ("ari_macro_f1", evaluation.ari([r["macro_f1"] for r in rows],
                                            [r["macro_f1_cthge"] for r in rows])),
            ("ari_micro_f1", evaluation.ari([r["micro_f1"] for r in rows],
                                            [r["micro_f1_cthge"] for r in rows])),
        ]
    _write_rows(out / "metrics.csv", rows)
    _write_pairs(out / "summary.csv", summary)
    for k, val in summary:
        print(f"{k} {val!r}" if not isinstance(val, str) else f"{k} {val}")
    return 0


def cmd_theory(v, out: Path) -> int:
    d = v["dim"]
    mu0 = np.zeros(d)
    mu0[0] = v["separation"] / 2
    spec = theory.MixtureSpec(mu_x0=mu0, mu_x1=-mu0, sigma=v["sigma"], lam=v["lam"],
                              q_s=v["qs"], q_c=1.0, samples=v["samples"], seed=v["seed"])
    rows = theory.empirical_generalization_sweep(spec, v["qc_grid"])
    theory.write_sweep_csv(out / "theory.csv", rows)
    sys.stdout.write((out / "theory.csv").read_text(encoding="utf-8"))
    return 0


def cmd_synth(v, out: Path) -> int:
    cfg = synth.SynthConfig(**{k: v[k] for k, *_ in SYNTH_PARAMS}, seed=v["seed"])
    g, truth = synth.generate(cfg)
    synth.write_synth(g, truth, out)
    print(f"wrote {g.node_count} nodes, {g.edge_count} edges; oracle CHR {truth.oracle_chr!r}")
    return 0


def cmd_eval(v, out: Path) -> int:
    graphs = _require(v, "graph")
    prune, refine = _edit_configs(v)
    rows = []
    for path in graphs:
        g = _load(v, path)
        for seed in v["eval_seeds"]:
            cfg = TrainConfig(**{**asdict(_train_config(v)), "seed": seed})
            rep = evaluation.train_and_score(g, cfg)
            rows.append(dict(model="multigcn", graph=path, seed=seed,
                             macro_f1=rep.macro_f1, micro_f1=rep.micro_f1))
            if v["edit"]:
                edited, _, _ = editing.run_cthge(g, cfg, prune, refine)
                rep = evaluation.train_and_score(edited, cfg)
                rows.append(dict(model="multigcn+cthge", graph=path, seed=seed,
                                 macro_f1=rep.macro_f1, micro_f1=rep.micro_f1))
    _write_rows(out / "metrics.csv", rows)
    with open(out / "metrics.csv", "a", encoding="utf-8", newline="\n") as fh:
        fh.write("\n# aggregate\n")
        fh.write("model,graph,macro_f1_mean,macro_f1_std,micro_f1_mean,micro_f1_std\n")
        keys = sorted({(r["model"], r["graph"]) for r in rows}, key=lambda k: (k[1], k[0]))
        for model, graph in keys:
            sel = [r for r in rows if r["model"] == model and r["graph"] == graph]
            stats = []
            for m in ("macro_f1", "micro_f1"):
                vals = np.array([r[m] for r in sel])
                stats += [float(vals.mean()), float(vals.std())]
            fh.write(",".join([model, graph] + [repr(s) for s in stats]) + "\n")
        if v["edit"]:
            base = [r["macro_f1"] for r in rows if r["model"] == "multigcn"]
            new = [r["macro_f1"] for r in rows if r["model"] == "multigcn+cthge"]
            fh.write(f"ARI_macro_f1,{evaluation.ari(base, new)!r}\n")
    print(f"wrote {len(rows)} rows to {out / 'metrics.csv'}")
    return 0


def _write_pairs(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, val in pairs:
            fh.write(f"{k},{val if isinstance(val, str) else repr(float(val))}\n")


def _write_rows(path, rows) -> None:
    if not rows:
        return
    cols = list(rows[0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                              for c in cols) + "\n")


HANDLERS = {
    "chr": cmd_chr,
    "edit": cmd_edit,
    "bench": cmd_bench,
    "theory": cmd_theory,
    "synth": cmd_synth,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or int(os.environ.get("CTHGE_THREADS", "0") or 0) or None
    try:
        values = resolve(args)
        out = Path(args.out or f"cthge-{args.command}-out")
        write_lock(out, args.command, values)
        with threadpool_limits(limits=threads):
            return HANDLERS[args.command](values, out)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CTHGEError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
