"""Cross-type homophily measurement and graph editing for heterogeneous GNNs."""
from .editing import CTHGE, EditPlan, PruneConfig, RefineConfig, run_cthge
from .evaluation import ari, f1_scores, make_split
from .exceptions import (
    ConfigError,
    CTHGEError,
    DimensionError,
    DivergenceError,
    DomainError,
    GraphParseError,
    GraphValidationError,
    NumericError,
    PruningError,
    SearchError,
    UndefinedMetricError,
)
from .hetgraph import HeteroGraph, from_arrays, load_graph, load_graph_dir, save_graph
from .hgnn import GcnModel, MultiGCNClassifier, TrainConfig
from .homophily import CrossTypeHomophily, compute_chr, target_info
from .synth import SynthConfig, generate
from .theory import MixtureSpec, db_index, db_index_squared, lower_bound

__version__ = "0.1.0"

__all__ = [
    "CTHGE", "EditPlan", "PruneConfig", "RefineConfig", "run_cthge",
    "ari", "f1_scores", "make_split",
    "ConfigError", "CTHGEError", "DimensionError", "DivergenceError", "DomainError",
    "GraphParseError", "GraphValidationError", "NumericError", "PruningError",
    "SearchError", "UndefinedMetricError",
    "HeteroGraph", "from_arrays", "load_graph", "load_graph_dir", "save_graph",
    "GcnModel", "MultiGCNClassifier", "TrainConfig",
    "CrossTypeHomophily", "compute_chr", "target_info",
    "SynthConfig", "generate",
    "MixtureSpec", "db_index", "db_index_squared", "lower_bound",
]
