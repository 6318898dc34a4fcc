"""Symbolic invertible maps built from equation-learner coupling blocks.

Train invertible models whose coupling subnetworks are equation-learner
networks, extract the learned map as closed-form invertible expressions,
and evaluate density-estimation and inverse-problem benchmarks.
"""

__version__ = "0.1.0"

from .autodiff import Tape, finite_difference_check
from .eql import EqlNetwork, l05_penalty, threshold_weights
from .coupling import CouplingBlock, PermutationLayer, InvertibleStack
from .flows import (
    CisrModel,
    FlowModel,
    IsrModel,
    model_log_density,
    nll_conditional,
    nll_flow,
    nll_supervised,
    sample_posterior,
)
from .train import TrainConfig, TrainHistory, train
from .symbolic import Expr, compose_model, eval_expression, extract, simplify
from .estimators import ConditionalSymbolicFlow, SymbolicFlow, SymbolicInverseModel

__all__ = [
    "Tape",
    "finite_difference_check",
    "EqlNetwork",
    "l05_penalty",
    "threshold_weights",
    "CouplingBlock",
    "PermutationLayer",
    "InvertibleStack",
    "FlowModel",
    "IsrModel",
    "CisrModel",
    "nll_flow",
    "nll_supervised",
    "nll_conditional",
    "sample_posterior",
    "model_log_density",
    "TrainConfig",
    "TrainHistory",
    "train",
    "Expr",
    "extract",
    "compose_model",
    "eval_expression",
    "simplify",
    "SymbolicFlow",
    "SymbolicInverseModel",
    "ConditionalSymbolicFlow",
]
