"""Round orchestration: server session, client selection, backbone
broadcast, client sessions, aggregation, stitching.

Per round, in order: (1) the server trains on its labeled (and optional
unlabeled) data; (2) a uniform without-replacement subset of clients is
selected; (3) the online backbone is broadcast by value to each of them;
(4) each selected client runs its local session; (5) the returned backbones
are averaged (unweighted by default, shard-size weighted behind a flag);
(6) the average is stitched to the server's resident head as the new online
net.  Unselected clients are untouched; the head never leaves the server;
projectors never enter broadcast or upload payloads.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .augment import none_policy, strong_policy, weak_policy
from .client import ClientSessionSummary, ClientShard, client_train_session
from .config import ExperimentConfig
from .datasets import (
    CANONICAL,
    LabeledSet,
    UnlabeledSet,
    architecture_family,
)
from .errors import ParameterError
from .metrics import RoundReport
from .models import ArchitectureSpec, ContrastiveNetwork, ContrastiveState, init_state
from .parameters import ParameterSet, extract_role, mean_parameter_sets, stitch
from .server import server_train_session
from .splits import DataSplit


@dataclass
class FederationState:
    """Everything the orchestrator owns across rounds."""

    net: ContrastiveNetwork
    server: ContrastiveState
    server_labeled: LabeledSet
    server_unlabeled: UnlabeledSet | None
    shards: list[ClientShard]
    config: ExperimentConfig
    round_index: int = 0
    norm: tuple | None = None
    policy: object = field(default=None)


def select_clients(total: int, count: int, rng: np.random.Generator) -> list[int]:
    """``count`` distinct ids in [0, total), uniform without replacement."""
    if not 1 <= count <= total:
        raise ParameterError(f"cannot select {count} of {total} clients")
    return sorted(int(i) for i in rng.choice(total, size=count, replace=False))


def aggregate_backbones(backbones: list[ParameterSet],
                        weights: list[float] | None = None) -> ParameterSet:
    """Entrywise mean of backbone-only parameter sets."""
    if not backbones:
        raise ParameterError("aggregation requires at least one backbone")
    for ps in backbones:
        if ps.present_roles() - {"backbone"}:
            raise ParameterError(
                f"aggregation accepts backbone-role entries only, got {sorted(ps.present_roles())}")
    return mean_parameter_sets(backbones, weights)


def broadcast_backbone(server_online: ParameterSet) -> ParameterSet:
    """Value-copied backbone payload; contains no head or projector entry."""
    return extract_role(server_online, "backbone").copy()


def policy_for(cfg: ExperimentConfig):
    if cfg.augmentation == "none":
        return none_policy()
    if cfg.augmentation == "strong":
        return strong_policy(cfg.dataset)
    return weak_policy(cfg.dataset)


def build_federation(cfg: ExperimentConfig, split: DataSplit,
                     dtype=np.float32) -> FederationState:
    """Fresh federation over an existing data split."""
    arch = ArchitectureSpec(architecture_family(cfg.dataset), dropout_enabled=cfg.dropout)
    net = ContrastiveNetwork(arch)
    server = init_state(arch, cfg.seed, dtype=dtype)
    shards = [
        ClientShard(client_id=k, data=data,
                    rng=rngs.derive_rng(cfg.seed, rngs.CLIENT_STREAM, k))
        for k, data in enumerate(split.client_shards)
    ]
    descriptor = CANONICAL[cfg.dataset]
    return FederationState(
        net=net, server=server,
        server_labeled=split.server_labeled,
        server_unlabeled=split.server_unlabeled if len(split.server_unlabeled) else None,
        shards=shards, config=cfg, round_index=0,
        norm=(descriptor.channel_mean, descriptor.channel_std),
        policy=policy_for(cfg))


def run_round(fed: FederationState, sink=None) -> RoundReport:
    """Execute one full round and advance the federation state."""
    cfg = fed.config
    started = time.perf_counter()
    r = fed.round_index

    server_summary = server_train_session(
        fed.net, fed.server, fed.server_labeled, fed.server_unlabeled, cfg,
        fed.policy, fed.norm,
        session_rng=rngs.derive_rng(cfg.seed, rngs.SERVER_SESSION, r),
        sink=sink, round_index=r)

    selected = select_clients(cfg.K, cfg.B, rngs.derive_rng(cfg.seed, rngs.SELECTION, r))

    returned: list[ParameterSet] = []
    weights: list[float] = []
    client_summaries: list[ClientSessionSummary] = []
    for client_id in selected:
        shard = fed.shards[client_id]
        payload = broadcast_backbone(fed.server.online)
        backbone, summary = client_train_session(
            fed.net, payload, shard, cfg, fed.policy, fed.norm,
            session_rng=rngs.derive_rng(cfg.seed, rngs.CLIENT_SESSION, r, client_id),
            sink=sink, round_index=r, global_step=fed.server.step)
        returned.append(backbone)
        weights.append(float(len(shard.data)))
        client_summaries.append(summary)

    aggregated = aggregate_backbones(returned, weights if cfg.weighted_average else None)
    fed.server.online = stitch(aggregated, extract_role(fed.server.online, "head"))
    fed.round_index += 1

    return RoundReport(
        round_index=r,
        selected_clients=selected,
        server=server_summary,
        clients=client_summaries,
        duration_seconds=time.perf_counter() - started)
