"""Contrastive network architectures and the paired online/target state.

Two families are provided:

* ``mnist`` — two 5x5 conv + pool blocks (10 then 20 maps) feeding a
  320-dim representation; classifier head FC 320-50-10 with softmax;
  projector MLP 320-320.  Backbone + head hold 21,840 trainable scalars.
* ``cifar`` (also used for SVHN) — six 3x3 same-padded convs
  (32/64/128/128/256/256) with batch-norm, pooling and dropout, feeding a
  4096-dim representation; head FC 4096-1024-512-10 with softmax;
  projector MLP 4096-4096.  Backbone + head hold 5,852,170 trainable
  scalars.

The trainable object everywhere is a :class:`ContrastiveState`: an online
parameter set updated by gradients plus a target parameter set updated only
by exponential moving average (and by wholesale copies at session starts).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, ParameterError
from .layers import (
    BatchNorm,
    Conv2d,
    Dropout,
    Flatten,
    Linear,
    MaxPool2d,
    ReLU,
    Sequential,
    Softmax,
)
from .parameters import ParameterSet, ema_blend, shape_compatible
from . import rngs

FAMILIES = ("mnist", "cifar")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Selects one architecture family and its dropout toggle."""

    family: str
    dropout_enabled: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown architecture family {self.family!r}")


@dataclass
class ContrastiveState:
    """Online (gradient-trained) and target (EMA) parameter sets."""

    online: ParameterSet
    target: ParameterSet
    step: int = 0

    def __post_init__(self):
        if not shape_compatible(self.online, self.target):
            raise ParameterError("online and target parameter sets must be shape-compatible")
        if self.step < 0:
            raise ParameterError("step counter must be non-negative")

    def copy(self) -> "ContrastiveState":
        return ContrastiveState(self.online.copy(), self.target.copy(), self.step)


def _mnist_stacks(dropout_enabled: bool):
    backbone = Sequential([
        Conv2d("backbone/conv1", 1, 10, 5),
        MaxPool2d(),
        ReLU(),
        Conv2d("backbone/conv2", 10, 20, 5),
        MaxPool2d(),
        ReLU(),
        Flatten(),
    ])
    head = Sequential([
        Linear("head/fc1", 320, 50),
        ReLU(),
        Linear("head/fc2", 50, 10),
        Softmax(),
    ])
    projector = Sequential([
        Linear("projector/lin1", 320, 320),
        BatchNorm("projector/bn", 320),
        ReLU(),
        Linear("projector/lin2", 320, 320),
    ])
    return backbone, head, projector, (28, 28, 1), 320


def _cifar_stacks(dropout_enabled: bool):
    def drop(p):
        return [Dropout(p)] if dropout_enabled else []

    backbone = Sequential([
        Conv2d("backbone/conv1", 3, 32, 3, pad=1),
        BatchNorm("backbone/bn1", 32),
        ReLU(),
        Conv2d("backbone/conv2", 32, 64, 3, pad=1),
        ReLU(),
        MaxPool2d(),
        Conv2d("backbone/conv3", 64, 128, 3, pad=1),
        BatchNorm("backbone/bn3", 128),
        ReLU(),
        Conv2d("backbone/conv4", 128, 128, 3, pad=1),
        ReLU(),
        MaxPool2d(),
        *drop(0.05),
        Conv2d("backbone/conv5", 128, 256, 3, pad=1),
        BatchNorm("backbone/bn5", 256),
        ReLU(),
        Conv2d("backbone/conv6", 256, 256, 3, pad=1),
        ReLU(),
        MaxPool2d(),
        Flatten(),
    ])
    head = Sequential([
        Linear("head/fc1", 4096, 1024),
        ReLU(),
        *drop(0.1),
        Linear("head/fc2", 1024, 512),
        ReLU(),
        *drop(0.1),
        Linear("head/fc3", 512, 10),
        Softmax(),
    ])
    projector = Sequential([
        Linear("projector/lin1", 4096, 4096),
        BatchNorm("projector/bn", 4096),
        ReLU(),
        Linear("projector/lin2", 4096, 4096),
    ])
    return backbone, head, projector, (32, 32, 3), 4096


class ContrastiveNetwork:
    """Architecture object: three layer stacks plus shape metadata.

    Parameters are external (dicts inside :class:`ParameterSet`), so one
    network object serves every session of an experiment.
    """

    def __init__(self, arch: ArchitectureSpec):
        self.arch = arch
        build = _mnist_stacks if arch.family == "mnist" else _cifar_stacks
        self.backbone, self.head, self.projector, self.input_shape, self.feature_dim = build(
            arch.dropout_enabled)
        self.num_classes = 10

    @classmethod
    def from_stacks(cls, backbone: Sequential, head: Sequential | None,
                    projector: Sequential | None, input_shape: tuple,
                    feature_dim: int, num_classes: int = 10) -> "ContrastiveNetwork":
        """Assemble a network from custom layer stacks (toy models, tests)."""
        net = cls.__new__(cls)
        net.arch = None
        net.backbone = backbone
        net.head = head if head is not None else Sequential([])
        net.projector = projector if projector is not None else Sequential([])
        net.input_shape = tuple(input_shape)
        net.feature_dim = feature_dim
        net.num_classes = num_classes
        return net

    # -- construction ------------------------------------------------------

    def _init_role_params(self, seq: Sequential, rng, dtype) -> ParameterSet:
        entries = seq.init_params(rng, dtype)
        roles = {name: name.split("/", 1)[0] for name in entries}
        return ParameterSet(entries=entries, roles=roles)

    def init_server_params(self, rng: np.random.Generator, dtype=np.float32) -> ParameterSet:
        """Backbone + head; the server never holds a projector."""
        backbone = self._init_role_params(self.backbone, rng, dtype)
        head = self._init_role_params(self.head, rng, dtype)
        from .parameters import stitch

        return stitch(backbone, head)

    def init_projector_params(self, rng: np.random.Generator, dtype=np.float32) -> ParameterSet:
        return self._init_role_params(self.projector, rng, dtype)

    # -- plain forward passes (no caches; for evaluation, targets, tests) --

    def _check_input(self, batch: np.ndarray):
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.input_shape:
            raise DimensionError(
                f"expected input of shape (batch, {self.input_shape}), got {batch.shape}")

    def forward_backbone(self, params: ParameterSet, batch: np.ndarray,
                         train: bool = False, rng=None) -> np.ndarray:
        """Representation ``y`` of shape (batch, feature_dim)."""
        self._check_input(batch)
        y, _, _ = self.backbone.forward(params.entries, batch, train=train, rng=rng)
        return y

    def forward_head(self, params: ParameterSet, y: np.ndarray,
                     train: bool = False, rng=None) -> np.ndarray:
        """Class probabilities of shape (batch, 10); rows sum to one."""
        c, _, _ = self.head.forward(params.entries, y, train=train, rng=rng)
        return c

    def forward_projector(self, params: ParameterSet, y: np.ndarray,
                          train: bool = False, rng=None) -> np.ndarray:
        """Projection ``z`` with the same dimensionality as ``y``."""
        z, _, _ = self.projector.forward(params.entries, y, train=train, rng=rng)
        return z

    def classify(self, params: ParameterSet, batch: np.ndarray) -> np.ndarray:
        """Inference-mode class probabilities for a raw image batch."""
        return self.forward_head(params, self.forward_backbone(params, batch))


def build_network(arch: ArchitectureSpec) -> ContrastiveNetwork:
    return ContrastiveNetwork(arch)


def init_state(arch: ArchitectureSpec, seed: int, dtype=np.float32) -> ContrastiveState:
    """Fresh server-side state: target starts as an exact copy of online."""
    net = build_network(arch)
    online = net.init_server_params(rngs.derive_rng(seed, rngs.MODEL_INIT), dtype)
    return ContrastiveState(online=online, target=online.copy(), step=0)


def ema_update(state: ContrastiveState, decay: float) -> ContrastiveState:
    """New state whose target is ``decay*target + (1-decay)*online``.

    The online set is untouched (and shared with the input state).
    """
    if not 0.0 <= decay <= 1.0:
        raise ParameterError(f"EMA decay must lie in [0, 1], got {decay}")
    return replace(state, target=ema_blend(state.target, state.online, decay))


def ema_decay_schedule(step: int, upper: float) -> float:
    """Ramp-up decay ``min(upper, 1 - 1/(step+1))``.

    Starts at zero so a fresh target immediately tracks the fast-improving
    online net, then saturates at ``upper``.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    return min(upper, 1.0 - 1.0 / (step + 1))
