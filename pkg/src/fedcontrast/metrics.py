"""Round reports and the append-only metrics CSV.

Schema: ``round,kind,client_id,value`` with one row per recorded quantity.
Kinds written per round: ``server_ce``, ``server_consistency``,
``server_loss`` (session means), ``client_loss`` (one row per selected
client, ordered by client id), and ``accuracy`` on evaluation rounds.
Values are emitted with ``repr`` so files from identical runs are
byte-identical; wall-clock durations live in the round reports and the log,
never in this file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

from .client import ClientSessionSummary
from .server import ServerSessionSummary

HEADER = ["round", "kind", "client_id", "value"]


@dataclass
class RoundReport:
    round_index: int
    selected_clients: list[int]
    server: ServerSessionSummary
    clients: list[ClientSessionSummary] = field(default_factory=list)
    accuracy: float | None = None
    duration_seconds: float = 0.0


class MetricsWriter:
    """Append-only CSV sink, flushed after every round."""

    def __init__(self, path, resume_round: int | None = None):
        self.path = Path(path)
        if resume_round is not None and self.path.exists():
            kept = [row for row in read_metrics(self.path) if row["round"] <= resume_round]
            with open(self.path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(HEADER)
                for row in kept:
                    writer.writerow([row["round"], row["kind"],
                                     "" if row["client_id"] is None else row["client_id"],
                                     repr(row["value"])])
            self._fh = open(self.path, "a", newline="")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
            self._fh.write(",".join(HEADER) + "\n")
            self._fh.flush()
        self._writer = csv.writer(self._fh)

    def add(self, round_index: int, kind: str, value: float, client_id: int | None = None):
        self._writer.writerow(
            [round_index, kind, "" if client_id is None else client_id, repr(float(value))])

    def write_round(self, report: RoundReport):
        r = report.round_index
        self.add(r, "server_ce", report.server.mean_ce)
        self.add(r, "server_consistency", report.server.mean_consistency)
        self.add(r, "server_loss", report.server.mean_total)
        for summary in sorted(report.clients, key=lambda s: s.client_id):
            self.add(r, "client_loss", summary.mean_loss, client_id=summary.client_id)
        if report.accuracy is not None:
            self.add(r, "accuracy", report.accuracy)
        self.flush()

    def flush(self):
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    """Parse a metrics CSV back into row dicts."""
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append({
                "round": int(record["round"]),
                "kind": record["kind"],
                "client_id": int(record["client_id"]) if record["client_id"] else None,
                "value": float(record["value"]),
            })
    return rows


def accuracy_curve(path) -> tuple[list[int], list[float]]:
    """(rounds, accuracies) extracted from a metrics file."""
    rounds, values = [], []
    for row in read_metrics(path):
        if row["kind"] == "accuracy":
            rounds.append(row["round"])
            values.append(row["value"])
    return rounds, values
