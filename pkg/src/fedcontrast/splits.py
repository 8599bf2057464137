"""Labeled/unlabeled splitting and client partitioning.

The training set is split into three parts: a (stratified) labeled set kept
at the server, an optional unlabeled server pool, and the remaining
unlabeled examples dealt across ``num_clients`` shards.  Two client regimes
are supported:

* ``iid`` — examples are dealt round-robin per class, so shard sizes differ
  by at most one and per-class counts within a shard differ by at most one.
* ``noniid`` — label-skew: the pool is sorted by class, each class is cut
  into equal-size single-class chunks, and every client receives
  ``classes_per_client`` chunks of pairwise distinct classes.

Every example of the input lands in exactly one part; the split is a pure
function of the spec (including its seed).  Index provenance is kept on the
result so the partition can be audited against the source data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .datasets import LabeledSet, UnlabeledSet
from .errors import SplitError


@dataclass(frozen=True)
class SplitSpec:
    gamma: float
    beta: float = 0.0
    num_clients: int = 100
    regime: str = "iid"
    classes_per_client: int = 2
    seed: int = 0
    stratify_labeled: bool = True

    def validate(self, num_classes: int = 10) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise SplitError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.beta < 1.0:
            raise SplitError(f"beta must lie in [0, 1), got {self.beta}")
        if self.gamma + self.beta > 1.0:
            raise SplitError("gamma + beta must not exceed 1")
        if self.num_clients < 1:
            raise SplitError("at least one client required")
        if self.regime not in ("iid", "noniid"):
            raise SplitError(f"unknown regime {self.regime!r}")
        if not 1 <= self.classes_per_client <= num_classes:
            raise SplitError(
                f"classes_per_client must lie in 1..{num_classes}, got {self.classes_per_client}")


@dataclass
class DataSplit:
    server_labeled: LabeledSet
    server_unlabeled: UnlabeledSet
    client_shards: list[UnlabeledSet]
    # positions in the source training list, for partition audits
    labeled_indices: np.ndarray = field(repr=False, default=None)
    server_unlabeled_indices: np.ndarray = field(repr=False, default=None)
    shard_indices: list[np.ndarray] = field(repr=False, default=None)


def _stratified_quota(n: int, counts: np.ndarray) -> np.ndarray:
    """Per-class quotas summing to n; remainder goes to the lowest class ids."""
    num_classes = len(counts)
    quota = np.full(num_classes, n // num_classes, dtype=np.int64)
    quota[: n % num_classes] += 1
    if np.any(quota > counts):
        short = int(np.argmax(quota > counts))
        raise SplitError(
            f"class {short} has only {counts[short]} examples, "
            f"cannot draw {quota[short]} stratified labeled ones")
    return quota


def _chunks_per_class(counts: np.ndarray, total_chunks: int) -> np.ndarray:
    """Largest-remainder apportionment of chunks to classes."""
    total = counts.sum()
    exact = total_chunks * counts / total
    base = np.floor(exact).astype(np.int64)
    remainder = total_chunks - base.sum()
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:remainder]] += 1
    return base


def make_split(train: LabeledSet, spec: SplitSpec, num_classes: int = 10) -> DataSplit:
    """Partition a labeled training set per ``spec``; labels are discarded on
    every unlabeled part."""
    spec.validate(num_classes)
    n_total = len(train)
    n_labeled = int(np.floor(n_total * spec.gamma))
    m_server = int(np.floor(n_total * spec.beta))
    if n_labeled < 1:
        raise SplitError(f"gamma={spec.gamma} yields an empty labeled set for {n_total} examples")

    rng = rngs.derive_rng(spec.seed, rngs.SPLIT)
    perm = rng.permutation(n_total)
    labels_perm = train.labels[perm]

    if spec.stratify_labeled:
        counts = np.bincount(labels_perm, minlength=num_classes)
        quota = _stratified_quota(n_labeled, counts)
        take = np.zeros(n_total, dtype=bool)
        remaining = quota.copy()
        for pos, cls in enumerate(labels_perm):
            if remaining[cls] > 0:
                take[pos] = True
                remaining[cls] -= 1
        labeled_pos = np.flatnonzero(take)
    else:
        labeled_pos = np.arange(n_labeled)
    rest_pos = np.setdiff1d(np.arange(n_total), labeled_pos, assume_unique=True)

    labeled_idx = perm[labeled_pos]
    server_unlabeled_idx = perm[rest_pos[:m_server]]
    pool_pos = rest_pos[m_server:]
    pool_idx = perm[pool_pos]
    pool_labels = labels_perm[pool_pos]

    k = spec.num_clients
    if spec.regime == "iid":
        # Deal the class-sorted pool round-robin: per-class counts within a
        # shard and total shard sizes both end up within 1, and remainders
        # land on the lowest-indexed clients.
        order = np.argsort(pool_labels, kind="stable")
        shard_idx = [pool_idx[order[i::k]] for i in range(k)]
    else:
        shard_idx = _noniid_shards(pool_idx, pool_labels, spec, rng)

    return DataSplit(
        server_labeled=train.subset(labeled_idx),
        server_unlabeled=UnlabeledSet(train.images[server_unlabeled_idx]),
        client_shards=[UnlabeledSet(train.images[idx]) for idx in shard_idx],
        labeled_indices=labeled_idx,
        server_unlabeled_indices=server_unlabeled_idx,
        shard_indices=shard_idx,
    )


def _noniid_shards(pool_idx: np.ndarray, pool_labels: np.ndarray,
                   spec: SplitSpec, rng: np.random.Generator) -> list[np.ndarray]:
    k, cpc = spec.num_clients, spec.classes_per_client
    total_chunks = k * cpc
    if len(pool_idx) < total_chunks:
        raise SplitError(
            f"{len(pool_idx)} pooled examples cannot fill {total_chunks} non-IID chunks")
    counts = np.bincount(pool_labels, minlength=10)
    chunk_counts = _chunks_per_class(counts, total_chunks)
    if np.any((chunk_counts > 0) & (chunk_counts > counts)):
        cls = int(np.argmax((chunk_counts > 0) & (chunk_counts > counts)))
        raise SplitError(
            f"class {cls} has {counts[cls]} pooled examples but needs "
            f"{chunk_counts[cls]} non-empty chunks")
    if chunk_counts.max(initial=0) > k:
        cls = int(np.argmax(chunk_counts))
        raise SplitError(
            f"class {cls} would need {chunk_counts[cls]} chunks for {k} clients; "
            f"cannot keep classes within a shard distinct")

    # Single-class chunks, classes visited in a random order.  Round-robin
    # dealing of class-contiguous blocks of length <= k guarantees a client
    # never sees the same class twice.
    chunks: list[np.ndarray] = []
    for cls in rng.permutation(len(chunk_counts)):
        q = int(chunk_counts[cls])
        if q == 0:
            continue
        members = pool_idx[pool_labels == cls]
        chunks.extend(np.array_split(members, q))
    assignment = rng.permutation(k)  # random client relabeling
    shard_chunks: list[list[np.ndarray]] = [[] for _ in range(k)]
    for position, chunk in enumerate(chunks):
        shard_chunks[assignment[position % k]].append(chunk)
    return [np.concatenate(parts) for parts in shard_chunks]


def batch_iterator(examples, batch_size: int, epoch_seed: int):
    """Yield shuffled batches covering every example exactly once.

    The final partial batch is emitted; an empty input yields nothing.  The
    order is a pure function of ``epoch_seed``.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(examples)
    if n == 0:
        return
    order = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(epoch_seed)))).permutation(n)
    for start in range(0, n, batch_size):
        sel = order[start:start + batch_size]
        if hasattr(examples, "subset"):
            yield examples.subset(sel)
        elif isinstance(examples, np.ndarray):
            yield examples[sel]
        else:
            yield [examples[i] for i in sel]
