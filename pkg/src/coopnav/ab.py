"""Paired ZU on/off comparisons over several seeds.

Each seed runs twice with only the ZU flag of the chosen robots flipped.
Sensor streams are keyed by (seed, robot, sensor), so every other source
of randomness is identical between the two arms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import AXES, MetricsReport, ab_improvement
from .sim import ScenarioConfig, run_scenario

_STATS = ("rmse", "max", "median", "std")


@dataclass
class ABTrial:
    seed: int
    with_zu: MetricsReport
    without_zu: MetricsReport


@dataclass
class ABResult:
    zu_robots: list
    lost_robots: list
    trials: list

    def mean(self, arm: str, rid: int, axis: str, stat: str = "rmse") -> float:
        vals = []
        for tr in self.trials:
            m = getattr(tr, arm)[rid]
            s = m.d3 if axis == "3D" else m.axes[axis]
            vals.append(getattr(s, stat))
        return float(np.mean(vals))

    def summary(self) -> dict:
        """Per-robot mean statistics for both arms and the paired improvement."""
        robots = {}
        rids = sorted(self.trials[0].with_zu.robots)
        for rid in rids:
            entry = {"with_zu": {}, "without_zu": {}, "improvement": {}}
            for axis in (*AXES, "3D"):
                for stat in _STATS:
                    key = f"{axis}_{stat}"
                    on = self.mean("with_zu", rid, axis, stat)
                    off = self.mean("without_zu", rid, axis, stat)
                    entry["with_zu"][key] = on
                    entry["without_zu"][key] = off
                    entry["improvement"][key] = ab_improvement(off, on) if off > 0 else None
            robots[str(rid)] = entry
        lost = {}
        for rid in self.lost_robots:
            lost[str(rid)] = [
                {
                    "seed": tr.seed,
                    "initial_error": tr.with_zu[rid].initial_horizontal_error,
                    "final_error_with_zu": tr.with_zu[rid].final_horizontal_error,
                    "final_error_without_zu": tr.without_zu[rid].final_horizontal_error,
                    "correction_with_zu": tr.with_zu[rid].correction,
                    "improvement_with_zu": tr.with_zu[rid].improvement,
                    "improvement_without_zu": tr.without_zu[rid].improvement,
                }
                for tr in self.trials
            ]
        return {
            "zu_robots": self.zu_robots,
            "seeds": [tr.seed for tr in self.trials],
            "robots": robots,
            "lost_robots": lost,
        }


def zu_robot_ids(cfg: ScenarioConfig) -> list[int]:
    return [r.id for r in cfg.robots if r.zu_enabled]


def lost_robot_ids(cfg: ScenarioConfig) -> list[int]:
    return [r.id for r in cfg.robots if r.initial.position_error > 0]


def run_ab(cfg: ScenarioConfig, n_trials: int, robots=None, on_trial=None) -> ABResult:
    """Run seeds ``cfg.seed .. cfg.seed + n_trials - 1`` with ZU on and off.

    ``on_trial(seed, artifacts_on, artifacts_off)`` is called after each
    pair, which lets callers write traces without keeping them in memory.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    targets = list(robots) if robots is not None else zu_robot_ids(cfg)
    trials = []
    for seed in range(cfg.seed, cfg.seed + n_trials):
        base = cfg.with_seed(seed)
        on = run_scenario(base.with_zu(True, robots=targets))
        off = run_scenario(base.with_zu(False, robots=targets))
        if on_trial is not None:
            on_trial(seed, on, off)
        trials.append(ABTrial(seed, on.metrics, off.metrics))
    return ABResult(targets, lost_robot_ids(cfg), trials)
