import os
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = Path(os.environ.get("FEDCONTRAST_MNIST_DIR", REPO_ROOT / "data" / "mnist"))


def mnist_available() -> bool:
    names = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
    return all((MNIST_DIR / n).exists() or (MNIST_DIR / (n + ".gz")).exists() for n in names)


requires_mnist = pytest.mark.skipif(
    not mnist_available(), reason="canonical MNIST files not found; see scripts/fetch_data.sh")


@pytest.fixture(scope="session")
def mnist_dir() -> Path:
    if not mnist_available():
        pytest.skip("canonical MNIST files not found; see scripts/fetch_data.sh")
    return MNIST_DIR


@pytest.fixture(scope="session")
def mnist_train(mnist_dir):
    from fedcontrast.datasets import load_dataset

    train, _, descriptor = load_dataset("mnist", mnist_dir)
    return train, descriptor


def numerical_gradient(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar-valued ``f`` w.r.t. array ``x``.

    ``f`` takes no arguments and must read ``x`` afresh on every call; the
    array is perturbed in place and restored.  This is the independent
    oracle used to check every hand-derived backward pass.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + eps
        f_plus = f()
        x[idx] = saved - eps
        f_minus = f()
        x[idx] = saved
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    norm_a = np.linalg.norm(np.asarray(a, dtype=np.float64).ravel())
    norm_b = np.linalg.norm(np.asarray(b, dtype=np.float64).ravel())
    if max(norm_a, norm_b) < 1e-9:  # both gradients are zero up to roundoff
        return 0.0
    return float(np.linalg.norm((np.asarray(a) - np.asarray(b)).ravel()) / max(norm_a, norm_b))
