"""Client-side local training session.

A client never sees labels or the classifier head.  Its online net is the
broadcast backbone stitched to the client's own persistent projector; its
target is a backbone-only EMA copy.  For each unlabeled batch the online
projection of one view regresses onto the target backbone's representation
of the other view (a constant: stop gradient), symmetrized over the two
view assignments:

    L = ( mean ||proj(b(view1)) - b_target(view2)||^2
        + mean ||proj(b(view2)) - b_target(view1)||^2 ) / 2

As on the server, the two assignments' terms are computed from row slices
of one fused pass and added commutatively, so swapping the views leaves
the loss bitwise unchanged.  After the session the updated backbone is
returned for aggregation while the projector is written back into the
shard; the head never appears here, which is asserted on entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentPolicy, make_view_batch, normalize
from .datasets import UnlabeledSet
from .errors import DataError, NonFiniteLossError, ParameterError
from .losses import (
    client_regression_loss_grad,
    l2_normalize_backward,
    l2_normalize_rows,
)
from .models import ContrastiveNetwork, ema_decay_schedule
from .optim import OptimizerState, apply_gradients
from .parameters import ParameterSet, ema_blend_inplace, extract_role, stitch
from .rngs import spawn_seed
from .splits import batch_iterator


@dataclass
class ClientShard:
    """A client's unlabeled data plus everything that persists between the
    rounds it is selected for: its projector, its private rng stream, and
    (optionally) its EMA target."""

    client_id: int
    data: UnlabeledSet
    rng: np.random.Generator = field(repr=False, default=None)
    projector: ParameterSet | None = None
    target_backbone: ParameterSet | None = None


@dataclass
class ClientSessionSummary:
    client_id: int
    mean_loss: float
    steps: int


def client_loss_on_views(net: ContrastiveNetwork, online: ParameterSet,
                         target_backbone: ParameterSet,
                         view1: np.ndarray, view2: np.ndarray, *, rng=None,
                         train: bool = True, normalize_projection: bool = False):
    """Symmetrized regression loss for fixed views.

    Returns ``(loss, grads, stat_updates)`` with gradients w.r.t. the online
    backbone+projector only; the target backbone is a constant.  One fused
    forward/backward covers both view assignments; the two loss terms come
    from row slices and are added commutatively, so swapping the views
    leaves the loss bitwise unchanged.
    """
    b = len(view1)
    batch = np.concatenate([view1, view2])
    y, bb_caches, bb_stats = net.backbone.forward(online.entries, batch, train=train, rng=rng)
    z, pj_caches, pj_stats = net.projector.forward(online.entries, y, train=train, rng=rng)
    zt, _, _ = net.backbone.forward(target_backbone.entries, batch, train=train, rng=rng)

    # online(view1) regresses onto target(view2) and vice versa
    target_rows = np.concatenate([zt[b:], zt[:b]])
    if normalize_projection:
        z_hat, norms = l2_normalize_rows(z)
        zt_hat, _ = l2_normalize_rows(target_rows)
        loss1, dz1_hat = client_regression_loss_grad(z_hat[:b], zt_hat[:b])
        loss2, dz2_hat = client_regression_loss_grad(z_hat[b:], zt_hat[b:])
        dz_hat = 0.5 * np.concatenate([dz1_hat, dz2_hat])
        dz = l2_normalize_backward(z, norms, z_hat, dz_hat)
    else:
        loss1, dz1 = client_regression_loss_grad(z[:b], target_rows[:b])
        loss2, dz2 = client_regression_loss_grad(z[b:], target_rows[b:])
        dz = 0.5 * np.concatenate([dz1, dz2])

    dy, proj_grads = net.projector.backward(online.entries, pj_caches, dz)
    _, backbone_grads = net.backbone.backward(online.entries, bb_caches, dy)
    loss = (loss1 + loss2) / 2.0
    return loss, {**backbone_grads, **proj_grads}, {**bb_stats, **pj_stats}


def client_loss(net: ContrastiveNetwork, online: ParameterSet, target_backbone: ParameterSet,
                images: np.ndarray, policy: AugmentPolicy, rng, *, norm=None,
                train: bool = True, normalize_projection: bool = False):
    """Draw a view pair per image and evaluate the symmetrized loss."""
    if len(images) == 0:
        raise DataError("client loss requires a non-empty batch")
    v1, v2 = make_view_batch(images, policy, rng)
    if norm is not None:
        mean, std = norm
        v1, v2 = normalize(v1, mean, std), normalize(v2, mean, std)
    return client_loss_on_views(
        net, online, target_backbone, v1, v2, rng=rng, train=train,
        normalize_projection=normalize_projection)


def ensure_projector(net: ContrastiveNetwork, shard: ClientShard, dtype) -> ParameterSet:
    """The shard's persistent projector, freshly initialized from the
    client's own stream on first contact."""
    if shard.projector is None:
        shard.projector = net.init_projector_params(shard.rng, dtype=dtype)
    return shard.projector


def client_train_session(net: ContrastiveNetwork, incoming_backbone: ParameterSet,
                         shard: ClientShard, cfg, policy: AugmentPolicy, norm,
                         session_rng, sink=None, round_index: int = 0,
                         global_step: int = 0):
    """One local training session; returns (updated backbone, summary).

    The incoming backbone is copied, so the broadcast payload is never
    aliased.  The projector is read from and written back to the shard; the
    EMA target is re-initialized from the incoming net unless
    ``persist_client_target`` carries it across selections.  The EMA ramp
    shares one clock with the server (``global_step`` plus the local step):
    early in training the target forgets the fast-improving online weights
    quickly, later it anchors the regression, which keeps the raw squared
    loss from feeding back on itself.
    """
    if incoming_backbone.present_roles() != {"backbone"}:
        raise ParameterError(
            f"client session expects a backbone-only parameter set, "
            f"got roles {sorted(incoming_backbone.present_roles())}")
    if len(shard.data) == 0:
        raise DataError(f"client {shard.client_id} has an empty shard")

    dtype = next(iter(incoming_backbone.entries.values())).dtype
    projector = ensure_projector(net, shard, dtype)
    online = stitch(incoming_backbone.copy(), projector.copy())
    assert "head" not in online.present_roles()

    if cfg.persist_client_target and shard.target_backbone is not None:
        target = shard.target_backbone.copy()
    else:
        target = extract_role(online, "backbone").copy()

    lr = cfg.client_lr if cfg.client_lr is not None else cfg.lr
    opt = OptimizerState(scheme=cfg.optimizer, lr=lr, momentum=cfg.momentum)
    loss_sum = 0.0
    steps = 0
    for _ in range(cfg.R_L):
        for batch in batch_iterator(shard.data, cfg.BS_U, spawn_seed(session_rng)):
            loss, grads, stats = client_loss(
                net, online, target, batch.images, policy, session_rng, norm=norm,
                normalize_projection=cfg.normalize_projection)
            if not np.isfinite(loss):
                raise NonFiniteLossError(
                    f"client {shard.client_id} loss became non-finite at local step {steps}",
                    step=steps, components={"regression": loss})
            apply_gradients(opt, online, grads)
            for name, value in stats.items():
                online.entries[name][...] = value
            decay = ema_decay_schedule(global_step + steps, cfg.mu)
            ema_blend_inplace(target, online, decay)
            steps += 1
            loss_sum += loss
            if sink is not None:
                sink({"kind": "client_step", "round": round_index,
                      "client_id": shard.client_id, "step": steps, "loss": loss})

    shard.projector = extract_role(online, "projector").copy()
    if cfg.persist_client_target:
        shard.target_backbone = target
    summary = ClientSessionSummary(
        client_id=shard.client_id,
        mean_loss=loss_sum / steps if steps else 0.0,
        steps=steps)
    return extract_role(online, "backbone"), summary
