"""Stochastic gradient descent, plain or with classical momentum.

State is per-session: every training session starts with zero velocity.
Updates touch exactly the entries that received a gradient, so batch-norm
running statistics (which never get gradients) are left to the statistics
path in the trainers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .parameters import ParameterSet

SCHEMES = ("sgd", "sgd_momentum")


@dataclass
class OptimizerState:
    scheme: str
    lr: float
    momentum: float = 0.9
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown optimizer scheme {self.scheme!r}")
        if self.lr < 0:
            raise ParameterError(f"learning rate must be non-negative, got {self.lr}")


def apply_gradients(opt: OptimizerState, params: ParameterSet, grads: dict[str, np.ndarray]) -> None:
    """One in-place descent step on ``params`` using ``grads``."""
    for name, g in grads.items():
        if name not in params.entries:
            raise ParameterError(f"gradient for unknown parameter {name!r}")
        p = params.entries[name]
        if p.shape != g.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if opt.scheme == "sgd_momentum":
            v = opt.velocities.get(name)
            if v is None:
                v = np.zeros_like(p)
                opt.velocities[name] = v
            v *= opt.momentum
            v += g
            p -= (opt.lr * v).astype(p.dtype, copy=False)
        else:
            p -= (opt.lr * g).astype(p.dtype, copy=False)
