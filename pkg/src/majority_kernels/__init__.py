"""Majority Kernels: overparameterized training that collapses to base size for inference."""
from .numeric import BACKEND, ContractError, RngStream, matmul, sample_exponential
from .mk_layer import (
    ExtendedKernel,
    aggregate,
    collapse,
    expand_from,
    perturbation_of,
    sample_probability_tensor,
)
from .model import TOPOLOGIES, ModelParams, NetworkSpec, backward, cross_entropy, forward
from .trainers import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractError",
    "ExtendedKernel",
    "ModelParams",
    "NetworkSpec",
    "RngStream",
    "TOPOLOGIES",
    "TrainConfig",
    "aggregate",
    "backward",
    "collapse",
    "cross_entropy",
    "expand_from",
    "forward",
    "matmul",
    "perturbation_of",
    "sample_exponential",
    "sample_probability_tensor",
    "train",
]
