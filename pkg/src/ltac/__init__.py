"""Decentralized actor-critic with local-training ADMM consensus."""

from .config import ConfigError, RunConfig
from .ltadmm import TrainingHistory, train
from .topology import Graph, build_structures, lambda_bounds, ring_graph

__all__ = ["ConfigError", "RunConfig", "TrainingHistory", "train", "Graph", "build_structures", "lambda_bounds", "ring_graph"]
__version__ = "0.1.0"
