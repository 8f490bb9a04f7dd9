"""Federated selective-layer fine-tuning with layerwise NTK importance.

Typical flow: score layers per client with :func:`importance_scores`, pick
masks with :func:`solve` and simulate training rounds with
:func:`run_federation`.
"""

from .data import ClientDataset, ProbeBatch, generate_clients
from .errors import ConfigError, NumericalError
from .fedsim import FederationConfig, aggregate, local_train_masked, run_federation
from .lntk import ImportanceMatrix, importance_scores, lntk_gram, lntk_grams, loss_reduction_estimate
from .metrics import SelectionHistogram, hypervolume, hypervolume_ratio, rounds_to_target
from .model import LayeredModel, build_model, full_jacobian, layer_jacobian
from .selector import ParetoArchive, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "ClientDataset",
    "ConfigError",
    "FederationConfig",
    "ImportanceMatrix",
    "LayeredModel",
    "NumericalError",
    "ParetoArchive",
    "ProbeBatch",
    "SelectionHistogram",
    "SolverConfig",
    "aggregate",
    "build_model",
    "full_jacobian",
    "generate_clients",
    "hypervolume",
    "hypervolume_ratio",
    "importance_scores",
    "layer_jacobian",
    "lntk_gram",
    "lntk_grams",
    "local_train_masked",
    "loss_reduction_estimate",
    "rounds_to_target",
    "run_federation",
    "solve",
]
