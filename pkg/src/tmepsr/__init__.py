"""Dual-branch sequential recommender with time-aware gating, multihead
linear recurrences, and weighted cross-branch alignment."""

from .model import ExperimentConfig, ModelParams, evaluate, forward, total_loss, train
from .tensor import Tensor, grad_check

__all__ = ["ExperimentConfig", "ModelParams", "Tensor", "evaluate", "forward",
           "grad_check", "total_loss", "train"]

__version__ = "0.1.0"
