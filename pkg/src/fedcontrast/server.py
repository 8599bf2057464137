"""Server-side training session.

Each round the server trains the full online net (backbone + head) on its
labeled data, with the classification loss computed on both augmented views
and a consistency penalty tying online predictions to the EMA target's
predictions on the opposite view.  With server-side unlabeled data present,
those examples join the consistency term (they have no classification
term).  The total objective averages the two view assignments:

    L = (  [ce(view1) + consistency(view1 -> target(view2))]
         + [ce(view2) + consistency(view2 -> target(view1))] ) / 2

Gradients flow through the online branch only; the target branch is a
constant and is updated after each optimizer step by a ramped EMA of the
online parameters.  Both assignments share one forward/backward over the
concatenated views, with every loss term computed from its own row slice
and combined commutatively, so exchanging the views leaves the loss values
bitwise unchanged.

Optimizer state is per-session (velocity starts at zero each round); the
target net is re-copied from the freshly stitched online net at session
start unless ``persist_server_target`` keeps it across rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentPolicy, make_view_batch, normalize
from .datasets import LabeledSet, UnlabeledSet
from .errors import DataError, NonFiniteLossError
from .losses import consistency_loss_grad, cross_entropy_grad
from .models import ContrastiveNetwork, ContrastiveState, ema_decay_schedule
from .optim import OptimizerState, apply_gradients
from .parameters import ParameterSet, ema_blend_inplace
from .rngs import spawn_seed
from .splits import batch_iterator


@dataclass
class ServerBatch:
    """One training step's data: a labeled minibatch plus an optional
    unlabeled one (present only when the server holds unlabeled data)."""

    images: np.ndarray
    labels: np.ndarray
    unlabeled_images: np.ndarray | None = None


@dataclass
class ServerLossResult:
    total: float
    ce: float
    consistency: float
    grads: dict[str, np.ndarray]
    stat_updates: dict[str, np.ndarray]


@dataclass
class ServerSessionSummary:
    mean_ce: float
    mean_consistency: float
    mean_total: float
    steps: int


def server_loss_on_views(net: ContrastiveNetwork, online: ParameterSet, target: ParameterSet,
                         view1: np.ndarray, view2: np.ndarray, labels: np.ndarray,
                         unlabeled_view1: np.ndarray | None = None,
                         unlabeled_view2: np.ndarray | None = None,
                         *, rng=None, train: bool = True,
                         use_consistency: bool = True,
                         consistency_on_labeled: bool = True) -> ServerLossResult:
    """Symmetrized objective for fixed augmented views (both assignments).

    Both view assignments share one forward/backward over the concatenated
    batch; loss terms are computed per assignment from row slices and
    combined with commutative additions, so exchanging the views leaves
    every loss component bitwise unchanged.
    """
    n = len(labels)
    m = len(unlabeled_view1) if unlabeled_view1 is not None else 0
    # row layout: [view1 labeled | view2 labeled | view1 unlab | view2 unlab]
    parts = [view1, view2]
    if m:
        parts += [unlabeled_view1, unlabeled_view2]
    batch = np.concatenate(parts) if len(parts) > 1 else parts[0]

    y, bb_caches, bb_stats = net.backbone.forward(online.entries, batch, train=train, rng=rng)
    c, hd_caches, hd_stats = net.head.forward(online.entries, y, train=train, rng=rng)

    ce1, dce1 = cross_entropy_grad(c[:n], labels)
    ce2, dce2 = cross_entropy_grad(c[n:2 * n], labels)
    dc = np.zeros_like(c)
    dc[:n] = 0.5 * dce1
    dc[n:2 * n] = 0.5 * dce2

    cons1 = cons2 = 0.0
    want_consistency = use_consistency and (consistency_on_labeled or m > 0)
    if want_consistency:
        ty, _, _ = net.backbone.forward(target.entries, batch, train=train, rng=rng)
        tc, _, _ = net.head.forward(target.entries, ty, train=train, rng=rng)

        def rows(view: int) -> list[slice]:
            labeled = slice(0, n) if view == 1 else slice(n, 2 * n)
            unlabeled = slice(2 * n, 2 * n + m) if view == 1 else slice(2 * n + m, 2 * n + 2 * m)
            out = []
            if consistency_on_labeled:
                out.append(labeled)
            if m:
                out.append(unlabeled)
            return out

        def gather(matrix, slices):
            return matrix[slices[0]] if len(slices) == 1 else np.concatenate(
                [matrix[s] for s in slices])

        rows1, rows2 = rows(1), rows(2)
        cons1, dcons1 = consistency_loss_grad(gather(c, rows1), gather(tc, rows2))
        cons2, dcons2 = consistency_loss_grad(gather(c, rows2), gather(tc, rows1))
        for source, slices in ((dcons1, rows1), (dcons2, rows2)):
            offset = 0
            for s in slices:
                size = s.stop - s.start
                dc[s] += 0.5 * source[offset:offset + size]
                offset += size

    dy, head_grads = net.head.backward(online.entries, hd_caches, dc)
    _, backbone_grads = net.backbone.backward(online.entries, bb_caches, dy)
    total = ((ce1 + cons1) + (ce2 + cons2)) / 2.0
    return ServerLossResult(
        total=total,
        ce=(ce1 + ce2) / 2.0,
        consistency=(cons1 + cons2) / 2.0,
        grads={**backbone_grads, **head_grads},
        stat_updates={**bb_stats, **hd_stats},
    )


def server_loss(net: ContrastiveNetwork, state: ContrastiveState, batch: ServerBatch,
                policy: AugmentPolicy, rng, *, norm=None, train: bool = True,
                use_consistency: bool = True,
                consistency_on_labeled: bool = True) -> ServerLossResult:
    """Draw the two views for a batch and evaluate the symmetrized loss."""
    v1, v2 = make_view_batch(batch.images, policy, rng)
    u1 = u2 = None
    if batch.unlabeled_images is not None and len(batch.unlabeled_images):
        u1, u2 = make_view_batch(batch.unlabeled_images, policy, rng)
    if norm is not None:
        mean, std = norm
        v1, v2 = normalize(v1, mean, std), normalize(v2, mean, std)
        if u1 is not None:
            u1, u2 = normalize(u1, mean, std), normalize(u2, mean, std)
    return server_loss_on_views(
        net, state.online, state.target, v1, v2, batch.labels, u1, u2,
        rng=rng, train=train, use_consistency=use_consistency,
        consistency_on_labeled=consistency_on_labeled)


def _cycled_batches(data, batch_size: int, rng):
    while True:
        for batch in batch_iterator(data, batch_size, spawn_seed(rng)):
            yield batch


def server_train_session(net: ContrastiveNetwork, state: ContrastiveState,
                         labeled: LabeledSet, unlabeled: UnlabeledSet | None,
                         cfg, policy: AugmentPolicy, norm, session_rng,
                         sink=None, round_index: int = 0) -> ServerSessionSummary:
    """Run ``R_L`` labeled epochs of optimizer steps on the online net with
    per-step EMA updates of the target.  Mutates ``state`` in place and
    returns the loss summary."""
    if labeled is None or len(labeled) == 0:
        raise DataError("server session requires a non-empty labeled set")
    if not cfg.persist_server_target:
        state.target = state.online.copy()

    opt = OptimizerState(scheme=cfg.optimizer, lr=cfg.lr, momentum=cfg.momentum)
    use_unlabeled = (unlabeled is not None and len(unlabeled) > 0 and cfg.use_consistency)
    unlabeled_iter = None
    if use_unlabeled:
        unlabeled_iter = _cycled_batches(unlabeled, cfg.BS_U, session_rng)

    sums = np.zeros(3)
    steps = 0
    for _ in range(cfg.R_L):
        for batch in batch_iterator(labeled, cfg.BS_L, spawn_seed(session_rng)):
            unlabeled_images = next(unlabeled_iter).images if unlabeled_iter else None
            result = server_loss(
                net, state, ServerBatch(batch.images, batch.labels, unlabeled_images),
                policy, session_rng, norm=norm,
                use_consistency=cfg.use_consistency,
                consistency_on_labeled=cfg.consistency_on_labeled)
            if not np.isfinite(result.total):
                raise NonFiniteLossError(
                    f"server loss became non-finite at step {state.step}",
                    step=state.step,
                    components={"ce": result.ce, "consistency": result.consistency,
                                "total": result.total})
            apply_gradients(opt, state.online, result.grads)
            for name, value in result.stat_updates.items():
                state.online.entries[name][...] = value
            decay = ema_decay_schedule(state.step, cfg.tau)
            ema_blend_inplace(state.target, state.online, decay)
            state.step += 1
            steps += 1
            sums += (result.ce, result.consistency, result.total)
            if sink is not None:
                sink({"kind": "server_step", "round": round_index, "step": state.step,
                      "ce": result.ce, "consistency": result.consistency,
                      "total": result.total})
    return ServerSessionSummary(
        mean_ce=float(sums[0] / steps), mean_consistency=float(sums[1] / steps),
        mean_total=float(sums[2] / steps), steps=steps)
