"""CSV and JSON output for run artifacts.

Floats are written with ``repr`` precision so a trace read back is
bit-identical to the one written, and identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .metrics import MetricsReport, compute_metrics
from .sim.runner import BELIEF_COLUMNS, TRUTH_COLUMNS, RunArtifacts

EVENT_COLUMNS = ("t", "robot_id", "update_kind", "innovation_norm", "trace_P_before", "trace_P_after", "peer_id")
_INT_COLUMNS = {"robot_id", "zu_active", "rel_update_peer", "peer_id"}


def _fmt(name: str, value) -> str:
    if name in _INT_COLUMNS:
        return str(int(value))
    if isinstance(value, str):
        return value
    return repr(float(value))


def write_table(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(c, v) for c, v in zip(columns, row)])


def read_table(path: Path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by :func:`write_table`."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = [[float(x) for x in row] for row in r]
    return header, np.array(data, dtype=float).reshape(-1, len(header))


def write_events(path: Path, records) -> None:
    rows = (
        (e.t, e.robot_id, e.update_kind, e.innovation_norm, e.trace_P_before, e.trace_P_after, e.peer_id)
        for e in records
    )
    write_table(path, EVENT_COLUMNS, rows)


def write_metrics(path: Path, report: MetricsReport, extra: dict | None = None) -> None:
    doc = {"robots": report.to_dict()}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_run(art: RunArtifacts, out_dir: Path) -> Path:
    """Write ``truth.csv``, ``robotN_belief.csv``, ``events.csv`` and ``metrics.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth_rows = (row for rid in sorted(art.truth) for row in art.truth[rid])
    write_table(out_dir / "truth.csv", TRUTH_COLUMNS, truth_rows)
    for rid in sorted(art.beliefs):
        write_table(out_dir / f"robot{rid}_belief.csv", BELIEF_COLUMNS, art.beliefs[rid])
    write_events(out_dir / "events.csv", art.events)
    extra = {
        "scenario": art.config.name,
        "seed": art.config.seed,
        "exchanges": [[float(t), int(a), int(b)] for t, a, b in art.exchanges],
        "zu_count": {str(rid): ag.zu_count for rid, ag in sorted(art.agents.items())},
    }
    write_metrics(out_dir / "metrics.json", art.metrics, extra)
    return out_dir


def metrics_from_dir(run_dir: Path, tol: float = 0.01) -> MetricsReport:
    """Recompute metrics from the CSV files of a written run."""
    run_dir = Path(run_dir)
    _, truth = read_table(run_dir / "truth.csv")
    beliefs, truths = {}, {}
    for p in sorted(run_dir.glob("robot*_belief.csv")):
        _, b = read_table(p)
        rid = int(b[0, 1])
        beliefs[rid] = (b[:, 0], b[:, 2:5])
        t = truth[truth[:, 1] == rid]
        truths[rid] = (t[:, 0], t[:, 2:5])
    return compute_metrics(beliefs, truths, tol=tol)
