"""Localization error statistics over time-aligned estimate and truth traces.

Per axis the error is ``estimate - truth``; ``rmse`` uses the signed error
and ``max``, ``median`` and ``std`` are taken over its magnitude. The 3-D
row uses the Euclidean norm of the position error.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyTrace

AXES = ("E", "N", "U")


@dataclass(frozen=True)
class ErrorStats:
    rmse: float
    max: float
    median: float
    std: float

    @classmethod
    def of(cls, err) -> ErrorStats:
        e = np.asarray(err, dtype=float).reshape(-1)
        if e.size == 0:
            raise EmptyTrace("no samples")
        mag = np.abs(e)
        return cls(
            float(np.sqrt(np.mean(e * e))),
            float(mag.max()),
            float(np.median(mag)),
            float(mag.std()),
        )


@dataclass(frozen=True)
class RobotMetrics:
    axes: dict
    d3: ErrorStats
    initial_horizontal_error: float
    final_horizontal_error: float

    @property
    def correction(self) -> float:
        return self.initial_horizontal_error - self.final_horizontal_error

    @property
    def improvement(self) -> float | None:
        """Percent of the initial horizontal error removed by the end of the run."""
        if self.initial_horizontal_error <= 0:
            return None
        return 100.0 * self.correction / self.initial_horizontal_error

    def to_dict(self) -> dict:
        d = {ax: asdict(s) for ax, s in self.axes.items()}
        d["3D"] = asdict(self.d3)
        d["initial_horizontal_error"] = self.initial_horizontal_error
        d["final_horizontal_error"] = self.final_horizontal_error
        d["correction"] = self.correction
        d["improvement"] = self.improvement
        return d


@dataclass(frozen=True)
class MetricsReport:
    robots: dict

    def __getitem__(self, rid: int) -> RobotMetrics:
        return self.robots[rid]

    def to_dict(self) -> dict:
        return {str(rid): m.to_dict() for rid, m in sorted(self.robots.items())}


def align(t_est, t_true, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour match of estimate times onto truth times within ``tol``."""
    t_est = np.asarray(t_est, dtype=float)
    t_true = np.asarray(t_true, dtype=float)
    if t_est.size == 0 or t_true.size == 0:
        raise EmptyTrace("cannot align an empty trace")
    order = np.argsort(t_true, kind="stable")
    ts = t_true[order]
    j = np.clip(np.searchsorted(ts, t_est), 1, len(ts) - 1) if len(ts) > 1 else np.zeros(len(t_est), dtype=int)
    if len(ts) > 1:
        left_closer = np.abs(t_est - ts[j - 1]) <= np.abs(ts[j] - t_est)
        j = np.where(left_closer, j - 1, j)
    ok = np.abs(ts[j] - t_est) <= tol
    if not np.any(ok):
        raise EmptyTrace("no samples align within tolerance")
    return np.nonzero(ok)[0], order[j[ok]]


def robot_metrics(r_est, r_true) -> RobotMetrics:
    e = np.asarray(r_est, dtype=float) - np.asarray(r_true, dtype=float)
    if e.ndim != 2 or e.shape[0] == 0:
        raise EmptyTrace("no samples")
    axes = {ax: ErrorStats.of(e[:, i]) for i, ax in enumerate(AXES)}
    d3 = ErrorStats.of(np.linalg.norm(e, axis=1))
    horiz = np.linalg.norm(e[:, :2], axis=1)
    return RobotMetrics(axes, d3, float(horiz[0]), float(horiz[-1]))


def compute_metrics(belief: dict, truth: dict, tol: float = 0.01) -> MetricsReport:
    """Metrics per robot from ``{robot_id: (t, r[N,3])}`` estimate and truth traces."""
    if not belief:
        raise EmptyTrace("no robots in trace")
    out = {}
    for rid, (t_est, r_est) in belief.items():
        t_true, r_true = truth[rid]
        i, j = align(t_est, t_true, tol)
        out[rid] = robot_metrics(np.asarray(r_est)[i], np.asarray(r_true)[j])
    return MetricsReport(out)


def ab_improvement(mean_without: float, mean_with: float) -> float:
    """Percent reduction of a mean error when a feature is switched on."""
    if mean_without <= 0:
        raise ValueError("baseline mean must be positive")
    return 100.0 * (mean_without - mean_with) / mean_without
