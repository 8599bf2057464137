"""Test-set accuracy of the stitched global classifier.

Inference only: no augmentation (channel normalization aside), dropout off,
batch-norm on running statistics.  Argmax ties break toward the lowest
class index, so accuracy is exactly invariant to test-set permutation and
to the batch size used for evaluation.
"""

from __future__ import annotations

import numpy as np

from .augment import normalize
from .datasets import LabeledSet
from .errors import DataError, ParameterError
from .models import ContrastiveNetwork
from .parameters import ParameterSet


def evaluate(net: ContrastiveNetwork, params: ParameterSet, test: LabeledSet,
             batch_size: int = 128, norm=None) -> float:
    """Fraction of test examples whose argmax prediction matches the label."""
    if test is None or len(test) == 0:
        raise DataError("evaluation requires a non-empty test set")
    roles = params.present_roles()
    if not {"backbone", "head"} <= roles:
        raise ParameterError(f"evaluation needs backbone+head parameters, got {sorted(roles)}")
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    correct = 0
    for start in range(0, len(test), batch_size):
        images = test.images[start:start + batch_size]
        if norm is not None:
            images = normalize(images, norm[0], norm[1])
        probs = net.classify(params, images)
        predictions = np.argmax(probs, axis=1)  # first index wins ties
        correct += int((predictions == test.labels[start:start + batch_size]).sum())
    return correct / len(test)


def aggregate_runs(accuracies) -> tuple[float, float]:
    """Mean and sample standard deviation over repeated runs."""
    values = np.asarray(list(accuracies), dtype=np.float64)
    if values.size == 0:
        raise ValueError("aggregate_runs requires at least one accuracy")
    mean = float(values.mean())
    std = 0.0 if values.size == 1 else float(values.std(ddof=1))
    return mean, std
