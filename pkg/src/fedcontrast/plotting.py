"""Accuracy-curve figures from metrics files.

One run yields a single accuracy-vs-round curve; a sweep directory yields an
overlay with one labeled curve per sub-run.  Uses the Agg backend so figures
render in headless environments.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .metrics import accuracy_curve  # noqa: E402

log = logging.getLogger("fedcontrast")


def _metrics_path(path: Path) -> Path:
    path = Path(path)
    return path / "metrics.csv" if path.is_dir() else path


def emit_plot(metrics, out_path) -> Path | None:
    """Accuracy-vs-round curve for one run; None (with a warning) if the
    metrics hold no accuracy rows."""
    rounds, accs = accuracy_curve(_metrics_path(metrics))
    if not rounds:
        log.warning("no accuracy rows in %s; skipping plot", metrics)
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rounds, [100 * a for a in accs], marker="", lw=1.5)
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy (%)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def emit_sweep_plot(sweep_dir, out_path) -> Path | None:
    """Overlay of accuracy curves for every sub-run of a sweep directory."""
    sweep_dir = Path(sweep_dir)
    curves = []
    for sub in sorted(p for p in sweep_dir.iterdir() if p.is_dir()):
        metrics = sub / "metrics.csv"
        if not metrics.exists():
            continue
        rounds, accs = accuracy_curve(metrics)
        if rounds:
            curves.append((sub.name, rounds, accs))
    if not curves:
        log.warning("no accuracy rows under %s; skipping plot", sweep_dir)
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rounds, accs in curves:
        ax.plot(rounds, [100 * a for a in accs], lw=1.5, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("test accuracy (%)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def emit_plots(path, out_path) -> Path | None:
    """Dispatch: sweep directories get an overlay, anything else one curve."""
    path = Path(path)
    if path.is_dir() and not (path / "metrics.csv").exists():
        return emit_sweep_plot(path, out_path)
    return emit_plot(path, out_path)
