"""Davies-Bouldin complexity and the cross-type homophily lower bound.

Binary mixture setting: target features of class ``c`` are Gaussian around
``mu_c``.  One mean-aggregation layer with weight ``W`` gives class-0
representations ``W((q_s + q_c) X_0 + (2 - q_s - q_c) X_1)`` and the mirror
image for class 1.  Then::

    C >= C_lower = C0 / (2 q_s + 2 q_c - 2)^2
    C0 = 2 (E[dX0' W'W dX0] + E[dX1' W'W dX1]) / ||W (mu_0 - mu_1)||^2

where ``C`` is the squared Davies-Bouldin index.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import DomainError


def _centroids_and_spread(class_reps, p):
    reps = []
    for i, r in enumerate(class_reps):
        a = np.asarray(r, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2 or a.shape[0] == 0:
            raise DomainError(f"class {i} must be a non-empty (n, d) array")
        reps.append(a)
    if len(reps) < 2:
        raise DomainError("Davies-Bouldin index needs at least two classes")
    mu = [r.mean(axis=0) for r in reps]
    spread = [np.mean(np.linalg.norm(r - m, axis=1) ** p) for r, m in zip(reps, mu)]
    return mu, spread


def _separation(mu, i, j, p):
    d = float(np.sum(np.abs(mu[i] - mu[j]) ** p) ** (1.0 / p))
    if d == 0.0:
        raise DomainError(f"classes {i} and {j} have coincident centroids")
    return d


def db_index(class_reps, p=2) -> float:
    """Davies-Bouldin index ``(1/k) sum_i max_{j!=i} (S_i + S_j) / M_ij``.

    ``S_i = (mean_t ||O_i^t - mu_i||^p)^(1/p)`` and ``M_ij = ||mu_i - mu_j||_p``.
    Each entry of ``class_reps`` is an ``(n_i, d)`` array or a flat list of
    scalars.
    """
    mu, spread = _centroids_and_spread(class_reps, p)
    s = [v ** (1.0 / p) for v in spread]
    k = len(mu)
    total = 0.0
    for i in range(k):
        total += max((s[i] + s[j]) / _separation(mu, i, j, p) for j in range(k) if j != i)
    return float(total / k)


def db_index_squared(class_reps) -> float:
    """Squared form ``(1/k) sum_t max_{s!=t} (T_t^2 + T_s^2) / M_ts^2`` (p = 2)."""
    mu, t2 = _centroids_and_spread(class_reps, 2)
    k = len(mu)
    total = 0.0
    for i in range(k):
        total += max((t2[i] + t2[j]) / _separation(mu, i, j, 2) ** 2 for j in range(k) if j != i)
    return float(total / k)


@dataclass
class ComplexityReport:
    """Davies-Bouldin summary of a set of class representations.

    ``intra`` holds the per-class squared spreads ``T_i^2``, ``inter`` the
    centroid distances ``M_ij`` for ``i < j``.  ``lower_bound`` and ``c0`` are
    filled only when a mixture spec is supplied.
    """

    intra: np.ndarray
    inter: dict
    db_index: float
    squared_form: float
    lower_bound: Optional[float] = None
    c0: Optional[float] = None


def complexity_report(class_reps, spec: Optional["MixtureSpec"] = None) -> ComplexityReport:
    mu, t2 = _centroids_and_spread(class_reps, 2)
    inter = {(i, j): _separation(mu, i, j, 2)
             for i in range(len(mu)) for j in range(i + 1, len(mu))}
    c0_value = c_lower = None
    if spec is not None:
        c0_value, c_lower = lower_bound(spec)
    return ComplexityReport(
        intra=np.array(t2),
        inter=inter,
        db_index=db_index(class_reps),
        squared_form=db_index_squared(class_reps),
        lower_bound=c_lower,
        c0=c0_value,
    )


@dataclass
class MixtureSpec:
    """Binary mixture for the lower-bound study.

    ``sigma`` is a scalar standard deviation, a pair of them (one per class),
    or a pair of covariance matrices.  ``lam`` only shapes the non-target
    sample mean ``lam mu_0 + (1 - lam) mu_1`` and does not enter the bound.
    """

    mu_x0: np.ndarray
    mu_x1: np.ndarray
    sigma: object = 1.0
    lam: float = 0.5
    q_s: float = 0.9
    q_c: float = 0.9
    w: Optional[np.ndarray] = None
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        self.mu_x0 = np.atleast_1d(np.asarray(self.mu_x0, dtype=float))
        self.mu_x1 = np.atleast_1d(np.asarray(self.mu_x1, dtype=float))
        if self.mu_x0.shape != self.mu_x1.shape:
            raise DomainError("class means must have the same dimension")
        if np.array_equal(self.mu_x0, self.mu_x1):
            raise DomainError("class means must differ")
        if self.w is None:
            self.w = np.eye(self.dim)
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError("lambda must lie in [0, 1]")

    @property
    def dim(self) -> int:
        return self.mu_x0.shape[0]

    def covariances(self):
        s = self.sigma
        if np.isscalar(s):
            s = (s, s)
        out = []
        for item in s:
            a = np.asarray(item, dtype=float)
            out.append(a * a * np.eye(self.dim) if a.ndim == 0 else a)
        return out

    def check_domain(self):
        if not self.q_s + self.q_c > 1.0:
            raise DomainError(
                f"bound needs q_s + q_c > 1 (got {self.q_s} + {self.q_c})"
            )


def c0(spec: MixtureSpec) -> float:
    """Homophily-independent constant of the bound."""
    wtw = spec.w.T @ spec.w
    cov0, cov1 = spec.covariances()
    num = np.trace(wtw @ cov0) + np.trace(wtw @ cov1)
    gap = spec.w @ (spec.mu_x0 - spec.mu_x1)
    den = float(gap @ gap)
    if den == 0.0:
        raise DomainError("W maps the class-mean difference to zero")
    return 2.0 * float(num) / den


def lower_bound(spec: MixtureSpec):
    """Return ``(C0, C_lower)``; raises ``DomainError`` unless q_s + q_c > 1."""
    spec.check_domain()
    base = c0(spec)
    return base, base / (2 * spec.q_s + 2 * spec.q_c - 2) ** 2


def lower_bound_derivative(spec: MixtureSpec) -> float:
    """d C_lower / d q_c = -4 C0 / (2 q_s + 2 q_c - 2)^3.

    The factor 4 is -2 from the squared denominator times the inner
    derivative 2 of ``2 q_s + 2 q_c - 2``.
    """
    spec.check_domain()
    return -4.0 * c0(spec) / (2 * spec.q_s + 2 * spec.q_c - 2) ** 3


def _gaussian(rng, mean, cov, n):
    if not np.any(cov):
        return np.broadcast_to(mean, (n, mean.shape[0])).copy()
    return rng.multivariate_normal(mean, cov, size=n, method="cholesky")


def sample_representations(spec: MixtureSpec, rng=None):
    """Draw aggregated class-0 and class-1 representations.

    Returns ``(O_0, O_1, nontarget)`` arrays with ``spec.samples`` rows each.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    n = spec.samples
    cov0, cov1 = spec.covariances()
    a = spec.q_s + spec.q_c
    b = 2.0 - a
    x0 = _gaussian(rng, spec.mu_x0, cov0, n)
    x1 = _gaussian(rng, spec.mu_x1, cov1, n)
    o0 = (a * x0 + b * x1) @ spec.w.T
    x0 = _gaussian(rng, spec.mu_x0, cov0, n)
    x1 = _gaussian(rng, spec.mu_x1, cov1, n)
    o1 = (a * x1 + b * x0) @ spec.w.T
    pick = rng.random(n) < spec.lam
    nontarget = np.where(pick[:, None], _gaussian(rng, spec.mu_x0, cov0, n),
                         _gaussian(rng, spec.mu_x1, cov1, n))
    return o0, o1, nontarget


@dataclass
class SweepRow:
    q_c: float
    db_index: float = float("nan")
    db_index_se: float = float("nan")
    c_lower: float = float("nan")
    c0: float = float("nan")
    domain_error: bool = False


def empirical_generalization_sweep(spec_template: MixtureSpec, q_c_grid: Sequence[float],
                                   batches: int = 20) -> List[SweepRow]:
    """Empirical squared DB index next to the closed-form bound per ``q_c``.

    Each grid point draws ``samples`` representations per class from its own
    seed stream.  The standard error comes from ``batches`` disjoint batches.
    Points outside the domain are flagged rather than raised.
    """
    streams = np.random.SeedSequence(spec_template.seed).spawn(len(q_c_grid))
    rows = []
    for q_c, ss in zip(q_c_grid, streams):
        spec = replace(spec_template, q_c=float(q_c))
        row = SweepRow(q_c=float(q_c))
        try:
            row.c0, row.c_lower = lower_bound(spec)
        except DomainError:
            row.domain_error = True
            rows.append(row)
            continue
        o0, o1, _ = sample_representations(spec, np.random.default_rng(ss))
        row.db_index = db_index_squared([o0, o1])
        nb = max(2, min(batches, spec.samples // 2))
        parts = [db_index_squared([a, b]) for a, b in
                 zip(np.array_split(o0, nb), np.array_split(o1, nb))]
        row.db_index_se = float(np.std(parts, ddof=1) / np.sqrt(nb))
        rows.append(row)
    return rows


def write_sweep_csv(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("q_c,db_index,c_lower,c0\n")
        for r in rows:
            if r.domain_error:
                fh.write(f"{r.q_c!r},domain_error,domain_error,domain_error\n")
            else:
                fh.write(f"{r.q_c!r},{r.db_index!r},{r.c_lower!r},{r.c0!r}\n")
