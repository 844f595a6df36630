"""Gradient-flow laboratory for deep diagonal linear models.

Simulates plain and weight-normalized gradient descent on the loss
(1/2L)||A x**L - b||^2, tracks the conserved quantities of both flows,
evaluates the closed-form suboptimality bounds, and compares everything
against an exact LP ground truth.
"""

from .model import (
    DenseState,
    PolarState,
    ProblemInstance,
    Projectors,
    SignedState,
    effective_x,
    grad_loss,
    loss,
    projectors,
    signed_loss_and_grads,
    wn_grads,
    wn_loss,
    xtilde,
)

__all__ = [
    "DenseState",
    "PolarState",
    "ProblemInstance",
    "Projectors",
    "SignedState",
    "effective_x",
    "grad_loss",
    "loss",
    "projectors",
    "signed_loss_and_grads",
    "wn_grads",
    "wn_loss",
    "xtilde",
]

__version__ = "0.1.0"
