import numpy as np
import pytest

from cthge.hetgraph import from_arrays


def random_graph(seed, n_t=20, n_n=15, n_edges=60, classes=3, n_types=2,
                 weighted=False, features=False, train_frac=0.5):
    """Random heterogeneous graph with one target type 'paper'.

    Non-target nodes are spread over ``n_types - 1`` other types.
    """
    rng = np.random.default_rng(seed)
    others = [f"other{k}" for k in range(max(1, n_types - 1))]
    types = ["paper"] * n_t + [others[i % len(others)] for i in range(n_n)]
    n = n_t + n_n
    labels = [int(rng.integers(classes)) for _ in range(n_t)] + [None] * n_n
    # guarantee every class appears among targets
    for k in range(min(classes, n_t)):
        labels[k] = k
    split = []
    for i in range(n):
        if i >= n_t:
            split.append(None)
        elif i < classes or rng.random() < train_frac:
            split.append("train")
        else:
            split.append("val" if rng.random() < 0.5 else "test")
    edges = []
    for _ in range(n_edges):
        a, b = rng.integers(n, size=2)
        w = float(rng.uniform(0.5, 2.0)) if weighted else 1.0
        edges.append((int(a), int(b), f"{types[a]}-{types[b]}", w))
    feats = rng.normal(size=(n, 3)) if features else None
    return from_arrays(types, edges, "paper", labels=labels, split=split,
                       features=feats, n_classes=classes)


def cross_graph(seed, n_t=20, n_n=15, n_cross=60, classes=3, **kw):
    """Random graph guaranteed to contain cross-type edges only plus a few same-type ones."""
    rng = np.random.default_rng(seed)
    n = n_t + n_n
    types = ["paper"] * n_t + ["author"] * n_n
    labels = [int(rng.integers(classes)) for _ in range(n_t)] + [None] * n_n
    for k in range(classes):
        labels[k] = k
    split = ["train" if (i < classes or rng.random() < 0.5) else "test" for i in range(n_t)]
    split += [None] * n_n
    edges = []
    for _ in range(n_cross):
        t = int(rng.integers(n_t))
        a = int(rng.integers(n_t, n))
        edges.append((a, t, "writes") if rng.random() < 0.5 else (t, a, "writes"))
    for _ in range(n_cross // 4):
        a, b = rng.integers(n_t, size=2)
        edges.append((int(a), int(b), "cites"))
    return from_arrays(types, edges, "paper", labels=labels, split=split,
                       n_classes=classes, **kw)


@pytest.fixture
def tiny_graph():
    """3 nodes, 2 edges: paper p0 (train, class 0), paper p1 (test, class 1), author a."""
    return from_arrays(
        ["paper", "paper", "author"],
        [(0, 2, "writes"), (1, 2, "writes")],
        "paper",
        labels=[0, 1, None],
        split=["train", "test", None],
        node_ids=["p0", "p1", "a"],
    )


def write_tsv(tmp_path, nodes, edges):
    (tmp_path / "nodes.tsv").write_text("".join(line + "\n" for line in nodes))
    (tmp_path / "edges.tsv").write_text("".join(line + "\n" for line in edges))
    return tmp_path / "nodes.tsv", tmp_path / "edges.tsv"


ACCEPTANCE_LINES = []


def record_acceptance(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
