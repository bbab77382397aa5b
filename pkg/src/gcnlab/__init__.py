"""gcnlab: a desk-scale laboratory for sampling-based GCN training.

The package implements mini-batch GCN training under several neighbor
sampling strategies, two historical-state variance-reduction schemes on
top of them (zeroth-order on node embeddings, doubly on embeddings plus
layerwise gradients), and the measurement tools to decompose stochastic
gradient error into bias and variance against exact oracles.
"""

from .errors import (
    ConfigError,
    DegreeZeroError,
    GcnLabError,
    LabelError,
    OracleTooLargeError,
    ParseError,
    SamplerDegenerateError,
    ShapeError,
    StateError,
)
from .graphs import GraphDataset, generate_sbm, load_dataset, normalize_laplacian, save_dataset
from .matrices import SparseMatrix, spmm
from .model import (
    ForwardCache,
    GradientSet,
    ModelParams,
    backward_full,
    backward_sampled,
    forward_full,
    forward_sampled,
    full_gradient,
    init_params,
    loss_and_output_grad,
)
from .sampling import LayerPlan, SamplerConfig, propagation_matrix, sample_plan
from .training import TrainConfig, evaluate, train, train_sgcn, train_sgcn_plus, train_sgcn_plusplus
from .variance_reduction import HistoricalStore, SnapshotConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegreeZeroError",
    "ForwardCache",
    "GcnLabError",
    "GradientSet",
    "GraphDataset",
    "HistoricalStore",
    "LabelError",
    "LayerPlan",
    "ModelParams",
    "OracleTooLargeError",
    "ParseError",
    "SamplerConfig",
    "SamplerDegenerateError",
    "ShapeError",
    "SnapshotConfig",
    "SparseMatrix",
    "StateError",
    "TrainConfig",
    "backward_full",
    "backward_sampled",
    "evaluate",
    "forward_full",
    "forward_sampled",
    "full_gradient",
    "generate_sbm",
    "init_params",
    "load_dataset",
    "loss_and_output_grad",
    "normalize_laplacian",
    "propagation_matrix",
    "sample_plan",
    "save_dataset",
    "spmm",
    "train",
    "train_sgcn",
    "train_sgcn_plus",
    "train_sgcn_plusplus",
    "__version__",
]
