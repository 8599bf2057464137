"""The three training losses with hand-derived input gradients.

* classification: mean negative log-likelihood of softmax probabilities;
* consistency: mean squared distance between online and target class
  probabilities over two views of the same images;
* projection regression: mean squared distance between the online
  projection and the (stop-gradient) target representation.

Gradient helpers return the derivative with respect to the online-branch
input only; target-branch inputs are constants by construction, which is
what implements the stop gradient.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

PROBABILITY_FLOOR = 1e-12  # clamp for log/divide; documented contract


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean ``-log p[label]`` over the batch, with probabilities clamped at
    ``PROBABILITY_FLOOR`` so a zero at the true class stays finite."""
    if probabilities.ndim != 2 or len(probabilities) != len(labels):
        raise DimensionError(
            f"expected (batch, classes) probabilities matching {len(labels)} labels, "
            f"got {probabilities.shape}")
    picked = probabilities[np.arange(len(labels)), labels]
    return float(-np.log(np.maximum(picked, PROBABILITY_FLOOR)).mean())


def cross_entropy_grad(probabilities: np.ndarray, labels: np.ndarray):
    """Loss value plus gradient w.r.t. the probability matrix."""
    n = len(labels)
    idx = np.arange(n)
    picked = np.maximum(probabilities[idx, labels], PROBABILITY_FLOOR)
    loss = float(-np.log(picked).mean())
    grad = np.zeros_like(probabilities)
    grad[idx, labels] = -1.0 / (n * picked)
    return loss, grad


def mean_squared_distance(online: np.ndarray, target: np.ndarray) -> float:
    """Mean over rows of the squared Euclidean distance between rows."""
    _check_same_shape(online, target, "mean squared distance")
    diff = online - target
    return float((diff * diff).sum(axis=1).mean())


def mean_squared_distance_grad(online: np.ndarray, target: np.ndarray):
    _check_same_shape(online, target, "mean squared distance")
    diff = online - target
    loss = float((diff * diff).sum(axis=1).mean())
    return loss, (2.0 / len(online)) * diff


def consistency_loss(c_online: np.ndarray, c_target: np.ndarray) -> float:
    """Squared distance between predicted probability rows, averaged over
    every contributing example (labeled plus any server unlabeled)."""
    return mean_squared_distance(c_online, c_target)


def consistency_loss_grad(c_online: np.ndarray, c_target: np.ndarray):
    return mean_squared_distance_grad(c_online, c_target)


def client_regression_loss(z_online: np.ndarray, z_target: np.ndarray) -> float:
    """Mean squared distance between projections and target representations;
    ``z_target`` is a constant (stop gradient)."""
    return mean_squared_distance(z_online, z_target)


def client_regression_loss_grad(z_online: np.ndarray, z_target: np.ndarray):
    return mean_squared_distance_grad(z_online, z_target)


def l2_normalize_rows(z: np.ndarray, eps: float = 1e-12):
    norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), eps)
    return z / norms, norms


def l2_normalize_backward(z: np.ndarray, norms: np.ndarray, z_hat: np.ndarray,
                          grad_hat: np.ndarray) -> np.ndarray:
    """Backprop through row-wise normalization ``z_hat = z / ||z||``."""
    inner = (grad_hat * z_hat).sum(axis=1, keepdims=True)
    return (grad_hat - z_hat * inner) / norms
