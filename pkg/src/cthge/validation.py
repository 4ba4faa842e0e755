"""Input validation helpers used by the estimators and pipeline stages."""
import numpy as np

from .exceptions import ConfigError, DimensionError, NumericError, UndefinedMetricError
from .hetgraph import HeteroGraph


def check_graph(g, require_cross=False, require_train=False) -> HeteroGraph:
    if not isinstance(g, HeteroGraph):
        raise TypeError(f"expected a HeteroGraph, got {type(g).__name__}")
    if require_cross and g.cross_view.e_tn.size == 0:
        raise UndefinedMetricError("graph has no cross-type edges")
    if require_train and not g.train_mask.any():
        raise ConfigError("graph has no training target nodes")
    return g


def check_matrix(x, shape=None, name="array", finite=True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {x.shape}")
    if shape is not None:
        for want, got in zip(shape, x.shape):
            if want is not None and want != got:
                raise DimensionError(f"{name} has shape {x.shape}, expected {shape}")
    if finite and not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")
    return x


def check_probability_rows(h, atol=1e-9, allow_zero=True) -> np.ndarray:
    """Raise unless every row is a probability vector (or all-zero)."""
    h = check_matrix(h, name="probability matrix")
    if (h < -atol).any():
        raise NumericError("probability rows must be nonnegative")
    sums = h.sum(axis=1)
    ok = np.abs(sums - 1.0) <= atol
    if allow_zero:
        ok |= sums == 0
    if not ok.all():
        raise NumericError(f"row {int(np.flatnonzero(~ok)[0])} is not a distribution")
    return h


def check_fraction(value, name, low=0.0, high=1.0, open_high=False) -> float:
    value = float(value)
    bad = not (low <= value <= high) or (open_high and value >= high)
    if bad or not np.isfinite(value):
        raise ConfigError(f"{name}={value} outside [{low}, {high}{')' if open_high else ']'}")
    return value
