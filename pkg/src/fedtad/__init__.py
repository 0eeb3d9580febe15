"""Subgraph federated learning with topology-aware data-free distillation."""

from fedtad.graph import Graph, build_graph, diffusion_diagonals, gcn_normalize, transition_matrix
from fedtad.runtime import FedConfig, run_federation
from fedtad.server import DistillConfig, FedTADServer, fedtad_refine

__all__ = [
    "DistillConfig",
    "FedConfig",
    "FedTADServer",
    "Graph",
    "build_graph",
    "diffusion_diagonals",
    "fedtad_refine",
    "gcn_normalize",
    "run_federation",
    "transition_matrix",
]

__version__ = "0.1.0"
