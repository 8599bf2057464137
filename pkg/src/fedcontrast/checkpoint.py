"""Checkpoint archives for experiment runs.

A checkpoint is a single ``.npz`` holding every named tensor (keys in
lexicographic order) plus a JSON manifest: round index, server step
counter, role tags, per-shard rng stream states, and the resolved config
echo.  Restoring a checkpoint over the same config and data reproduces the
run's trajectory exactly, because every session stream is derived from
(seed, purpose, round, client) rather than consumed across rounds.

Key layout::

    server/online/<entry>      server/target/<entry>
    client/<k>/projector/<entry>
    client/<k>/target/<entry>  (only with persist_client_target)
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .client import ClientShard
from .config import ExperimentConfig, echo_config, parse_config
from .errors import ConfigError
from .federation import FederationState, build_federation
from .parameters import ParameterSet
from .rngs import generator_state, restore_generator
from .splits import DataSplit

FORMAT_VERSION = 1


def _flatten(prefix: str, params: ParameterSet, arrays: dict, roles: dict):
    for name, value in params.entries.items():
        key = f"{prefix}/{name}"
        arrays[key] = value
        roles[key] = params.roles[name]


def save_checkpoint(path, fed: FederationState) -> None:
    arrays: dict[str, np.ndarray] = {}
    roles: dict[str, str] = {}
    _flatten("server/online", fed.server.online, arrays, roles)
    _flatten("server/target", fed.server.target, arrays, roles)
    shard_meta = {}
    for shard in fed.shards:
        if shard.projector is not None:
            _flatten(f"client/{shard.client_id}/projector", shard.projector, arrays, roles)
        if shard.target_backbone is not None:
            _flatten(f"client/{shard.client_id}/target", shard.target_backbone, arrays, roles)
        shard_meta[str(shard.client_id)] = {"rng_state": generator_state(shard.rng)}
    manifest = {
        "format_version": FORMAT_VERSION,
        "round_index": fed.round_index,
        "server_step": fed.server.step,
        "roles": roles,
        "shards": shard_meta,
        "config": echo_config(fed.config),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = {key: arrays[key] for key in sorted(arrays)}
    ordered["__manifest__"] = np.frombuffer(
        json.dumps(manifest, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **ordered)


def _unflatten(prefix: str, arrays: dict, roles: dict) -> ParameterSet | None:
    entries = {}
    sub_roles = {}
    skip = len(prefix) + 1
    for key, value in arrays.items():
        if key.startswith(prefix + "/"):
            name = key[skip:]
            entries[name] = value.copy()
            sub_roles[name] = roles[key]
    if not entries:
        return None
    return ParameterSet(entries=entries, roles=sub_roles)


def load_checkpoint(path):
    """Return (manifest, arrays) from a checkpoint archive."""
    with np.load(path) as data:
        arrays = {key: data[key] for key in data.files if key != "__manifest__"}
        manifest = json.loads(bytes(data["__manifest__"]).decode())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format in {path}")
    return manifest, arrays


def restore_federation(path, cfg: ExperimentConfig, split: DataSplit) -> FederationState:
    """Rebuild a federation from a checkpoint over the same config/data."""
    import dataclasses

    manifest, arrays = load_checkpoint(path)
    stored = parse_config(overrides=dict(
        line.split(" = ", 1) for line in manifest["config"].strip().splitlines()))
    # extending/shortening the round horizon is the one legitimate difference
    if dataclasses.replace(stored, R_G=cfg.R_G) != cfg:
        raise ConfigError(
            "checkpoint was produced by a different configuration; "
            "refusing to resume")
    roles = manifest["roles"]
    fed = build_federation(cfg, split)
    fed.round_index = manifest["round_index"]
    fed.server.step = manifest["server_step"]
    fed.server.online = _unflatten("server/online", arrays, roles)
    fed.server.target = _unflatten("server/target", arrays, roles)
    for shard in fed.shards:
        meta = manifest["shards"].get(str(shard.client_id))
        if meta is None:
            continue
        shard.rng = restore_generator(meta["rng_state"])
        projector = _unflatten(f"client/{shard.client_id}/projector", arrays, roles)
        if projector is not None:
            shard.projector = projector
        target = _unflatten(f"client/{shard.client_id}/target", arrays, roles)
        if target is not None:
            shard.target_backbone = target
    return fed
