"""Canonical dataset ingestion.

Readers for the three supported image classification datasets, each in its
original distribution format, parsed bit-exactly:

* MNIST — big-endian IDX files (image magic ``0x00000803``, label magic
  ``0x00000801``), optionally gzip-compressed as distributed.
* CIFAR-10 — binary batches of 3073-byte records (1 label byte followed by
  3072 pixel bytes in planar RGB order).
* SVHN — the cropped-digit MATLAB containers ``train_32x32.mat`` /
  ``test_32x32.mat`` (label 10 denotes digit zero and is remapped to 0).

Images come out as float32 in [0, 1], shaped (N, H, W, channels), in file
order.  Nothing is re-encoded or cached.  ``scripts/fetch_data.sh``
documents where the canonical files come from.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IngestionError

DATASET_NAMES = ("mnist", "cifar10", "svhn")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    image_shape: tuple[int, int, int]
    num_classes: int
    train_size: int
    test_size: int
    channel_mean: tuple[float, ...]
    channel_std: tuple[float, ...]


CANONICAL = {
    "mnist": DatasetDescriptor(
        name="mnist", image_shape=(28, 28, 1), num_classes=10,
        train_size=60000, test_size=10000,
        channel_mean=(0.1307,), channel_std=(0.3081,)),
    "cifar10": DatasetDescriptor(
        name="cifar10", image_shape=(32, 32, 3), num_classes=10,
        train_size=50000, test_size=10000,
        channel_mean=(0.4914, 0.4822, 0.4465), channel_std=(0.2470, 0.2435, 0.2616)),
    "svhn": DatasetDescriptor(
        name="svhn", image_shape=(32, 32, 3), num_classes=10,
        train_size=73257, test_size=26032,
        channel_mean=(0.4377, 0.4438, 0.4728), channel_std=(0.1980, 0.2010, 0.1970)),
}


def architecture_family(dataset: str) -> str:
    """Model stack used for a dataset (CIFAR-10 and SVHN share one)."""
    return "mnist" if dataset == "mnist" else "cifar"


@dataclass(frozen=True)
class LabeledExample:
    image: np.ndarray
    label: int


@dataclass(frozen=True)
class UnlabeledExample:
    image: np.ndarray


class LabeledSet:
    """Ordered collection of labeled images backed by two arrays."""

    def __init__(self, images: np.ndarray, labels: np.ndarray):
        if len(images) != len(labels):
            raise ValueError("images and labels must have equal length")
        self.images = images
        self.labels = labels

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> LabeledExample:
        return LabeledExample(self.images[i], int(self.labels[i]))

    def subset(self, indices) -> "LabeledSet":
        return LabeledSet(self.images[indices], self.labels[indices])


class UnlabeledSet:
    """Ordered collection of images with labels discarded."""

    def __init__(self, images: np.ndarray):
        self.images = images

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i) -> UnlabeledExample:
        return UnlabeledExample(self.images[i])

    def subset(self, indices) -> "UnlabeledSet":
        return UnlabeledSet(self.images[indices])


def _open_maybe_gzip(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _resolve(root: Path, name: str) -> Path:
    """Find ``name`` or ``name.gz`` under root."""
    for candidate in (root / name, root / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise IngestionError(f"dataset file not found: {root / name}(.gz)")


def _read_idx_images(path: Path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise FormatError(f"truncated IDX header in {path}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"bad magic number 0x{magic:08x} in {path}, expected 0x{IDX_IMAGE_MAGIC:08x}")
        data = fh.read(count * rows * cols)
    if len(data) != count * rows * cols:
        raise FormatError(f"truncated image payload in {path}")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols, 1)


def _read_idx_labels(path: Path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise FormatError(f"truncated IDX header in {path}")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(
                f"bad magic number 0x{magic:08x} in {path}, expected 0x{IDX_LABEL_MAGIC:08x}")
        data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated label payload in {path}")
    return np.frombuffer(data, dtype=np.uint8).astype(np.int64)


def _load_mnist(root: Path):
    train_images = _read_idx_images(_resolve(root, "train-images-idx3-ubyte"))
    train_labels = _read_idx_labels(_resolve(root, "train-labels-idx1-ubyte"))
    test_images = _read_idx_images(_resolve(root, "t10k-images-idx3-ubyte"))
    test_labels = _read_idx_labels(_resolve(root, "t10k-labels-idx1-ubyte"))
    return (train_images, train_labels), (test_images, test_labels)


def _read_cifar_batch(path: Path) -> tuple[np.ndarray, np.ndarray]:
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % 3073 != 0:
        raise FormatError(f"{path} is not a CIFAR-10 binary batch (size {raw.size})")
    records = raw.reshape(-1, 3073)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        raise FormatError(f"{path} contains label bytes outside 0..9")
    images = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def _resolve_cifar(root: Path, stem: str) -> Path:
    for candidate in (root / f"{stem}.bin", root / stem,
                      root / "cifar-10-batches-bin" / f"{stem}.bin"):
        if candidate.exists():
            return candidate
    raise IngestionError(f"dataset file not found: {root / (stem + '.bin')}")


def _load_cifar10(root: Path):
    train_parts = [_read_cifar_batch(_resolve_cifar(root, f"data_batch_{i}")) for i in range(1, 6)]
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    test_images, test_labels = _read_cifar_batch(_resolve_cifar(root, "test_batch"))
    return (train_images, train_labels), (test_images, test_labels)


def _read_svhn_mat(path: Path) -> tuple[np.ndarray, np.ndarray]:
    from scipy.io import loadmat

    try:
        mat = loadmat(path)
    except Exception as exc:
        raise FormatError(f"{path} is not a readable MATLAB container: {exc}") from exc
    if "X" not in mat or "y" not in mat:
        raise FormatError(f"{path} lacks the canonical X/y variables")
    x = mat["X"]
    if x.ndim != 4 or x.shape[:3] != (32, 32, 3):
        raise FormatError(f"{path} has unexpected X shape {x.shape}")
    images = np.ascontiguousarray(x.transpose(3, 0, 1, 2))
    labels = mat["y"].reshape(-1).astype(np.int64) % 10  # label 10 encodes digit 0
    return images, labels


def _load_svhn(root: Path):
    train = _read_svhn_mat(_resolve(root, "train_32x32.mat"))
    test = _read_svhn_mat(_resolve(root, "test_32x32.mat"))
    return train, test


_LOADERS = {"mnist": _load_mnist, "cifar10": _load_cifar10, "svhn": _load_svhn}


def load_dataset(name: str, root, strict: bool = True):
    """Load a dataset from its canonical files under ``root``.

    Returns ``(train, test, descriptor)`` with pixel values scaled to [0, 1]
    and examples in file order.  With ``strict`` (the default) the example
    counts must match the canonical descriptor; disable it to read truncated
    or synthetic files in the same formats.
    """
    if name not in DATASET_NAMES:
        raise IngestionError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    root = Path(root)
    if not root.exists():
        raise IngestionError(f"dataset root does not exist: {root}")
    descriptor = CANONICAL[name]
    (train_images, train_labels), (test_images, test_labels) = _LOADERS[name](root)

    for split, images, labels in (("train", train_images, train_labels),
                                  ("test", test_images, test_labels)):
        if tuple(images.shape[1:]) != descriptor.image_shape:
            raise FormatError(
                f"{name} {split} images have shape {images.shape[1:]}, "
                f"expected {descriptor.image_shape}")
        if len(images) != len(labels):
            raise FormatError(f"{name} {split}: image/label counts disagree")
        if labels.size and (labels.min() < 0 or labels.max() >= descriptor.num_classes):
            raise FormatError(f"{name} {split}: labels outside 0..{descriptor.num_classes - 1}")
    if strict:
        if len(train_images) != descriptor.train_size:
            raise FormatError(
                f"{name} train set has {len(train_images)} examples, "
                f"expected {descriptor.train_size}")
        if len(test_images) != descriptor.test_size:
            raise FormatError(
                f"{name} test set has {len(test_images)} examples, "
                f"expected {descriptor.test_size}")

    def to_set(images, labels):
        return LabeledSet(images.astype(np.float32) / 255.0, labels)

    return to_set(train_images, train_labels), to_set(test_images, test_labels), descriptor
