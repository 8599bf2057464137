"""End-to-end experiment execution and sweeps.

A run directory is self-describing: ``config.resolved`` (parseable echo of
the full configuration), ``metrics.csv``, ``checkpoint.npz`` (latest) and
``steps.jsonl`` (optional per-step loss records).  Given the directory
alone, a run can be resumed or re-plotted.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .checkpoint import restore_federation, save_checkpoint
from .config import ExperimentConfig, parse_config, write_config
from .datasets import CANONICAL, load_dataset
from .errors import ConfigError
from .evaluation import evaluate
from .federation import FederationState, build_federation, run_round
from .metrics import MetricsWriter, RoundReport
from .parameters import extract_role, stitch
from .splits import SplitSpec, make_split

log = logging.getLogger("fedcontrast")

CONFIG_ECHO = "config.resolved"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.npz"
STEPS_FILE = "steps.jsonl"


def split_spec_from(cfg: ExperimentConfig) -> SplitSpec:
    return SplitSpec(
        gamma=cfg.gamma, beta=cfg.beta, num_clients=cfg.K, regime=cfg.regime,
        classes_per_client=cfg.classes_per_client, seed=cfg.seed,
        stratify_labeled=cfg.stratify_labeled)


def load_experiment_data(cfg: ExperimentConfig):
    """Dataset (optionally truncated to a deterministic prefix) plus split."""
    train, test, descriptor = load_dataset(cfg.dataset, cfg.data_dir)
    if cfg.train_subset:
        train = train.subset(range(min(cfg.train_subset, len(train))))
    if cfg.test_subset:
        test = test.subset(range(min(cfg.test_subset, len(test))))
    split = make_split(train, split_spec_from(cfg), num_classes=descriptor.num_classes)
    return split, test, descriptor


def _evaluation_params(fed: FederationState):
    cfg = fed.config
    source = fed.server.target if cfg.eval_target_net else fed.server.online
    return stitch(extract_role(source, "backbone"), extract_role(source, "head"))


def run_experiment(cfg: ExperimentConfig, out_dir, resume: bool = False) -> list[RoundReport]:
    """Run (or resume) a full experiment; returns the per-round reports."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if resume:
        import dataclasses

        stored = parse_config(out / CONFIG_ECHO)
        if dataclasses.replace(stored, R_G=cfg.R_G) != cfg:
            raise ConfigError(f"{out / CONFIG_ECHO} does not match the requested config")
    write_config(cfg, out / CONFIG_ECHO)

    split, test, descriptor = load_experiment_data(cfg)

    checkpoint_path = out / CHECKPOINT_FILE
    if resume:
        if not checkpoint_path.exists():
            raise ConfigError(f"cannot resume: {checkpoint_path} missing")
        fed = restore_federation(checkpoint_path, cfg, split)
        writer = MetricsWriter(out / METRICS_FILE, resume_round=fed.round_index - 1)
        log.info("resumed at round %d", fed.round_index)
    else:
        fed = build_federation(cfg, split)
        writer = MetricsWriter(out / METRICS_FILE)

    steps_fh = open(out / STEPS_FILE, "a" if resume else "w") if cfg.log_steps else None

    def sink(record):
        if steps_fh is not None:
            steps_fh.write(json.dumps(record) + "\n")

    reports: list[RoundReport] = []
    try:
        if fed.round_index == 0:
            save_checkpoint(checkpoint_path, fed)  # initial state, supports R_G=0
        while fed.round_index < cfg.R_G:
            report = run_round(fed, sink=sink if cfg.log_steps else None)
            r = report.round_index
            is_last = fed.round_index >= cfg.R_G
            if (cfg.eval_every and (r + 1) % cfg.eval_every == 0) or is_last:
                report.accuracy = evaluate(
                    fed.net, _evaluation_params(fed), test, batch_size=cfg.BS_test,
                    norm=(descriptor.channel_mean, descriptor.channel_std))
            writer.write_round(report)
            reports.append(report)
            log.info("round %d: server loss %.4f%s (%.1fs)", r, report.server.mean_total,
                     f", accuracy {report.accuracy:.4f}" if report.accuracy is not None else "",
                     report.duration_seconds)
            if (cfg.checkpoint_every and (r + 1) % cfg.checkpoint_every == 0) or is_last:
                save_checkpoint(checkpoint_path, fed)
    finally:
        writer.close()
        if steps_fh is not None:
            steps_fh.close()
    return reports


def run_sweep(base: ExperimentConfig, axis: str, values, out_dir) -> Path:
    """One sub-run per value of ``axis``, sharing the base seed so only the
    swept knob varies.  Returns the sweep directory containing a summary."""
    import dataclasses

    if axis not in {f.name for f in dataclasses.fields(ExperimentConfig)}:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for value in values:
        overrides = {axis: str(value)}
        cfg = _override(base, overrides)
        sub_dir = out / f"{axis}={value}"
        reports = run_experiment(cfg, sub_dir)
        final_acc = next((r.accuracy for r in reversed(reports) if r.accuracy is not None), None)
        summary_rows.append((value, final_acc))
    with open(out / "summary.csv", "w") as fh:
        fh.write(f"{axis},final_accuracy\n")
        for value, acc in summary_rows:
            fh.write(f"{value},{'' if acc is None else repr(acc)}\n")
    return out


def _override(base: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    import dataclasses

    from .config import _coerce  # shared key coercion

    values = dataclasses.asdict(base)
    for key, raw in overrides.items():
        values[key] = _coerce(key, raw)
    return ExperimentConfig(**values).resolve()
