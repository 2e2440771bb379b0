"""Static figures for a finished run: error and ENU position against time."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import AXES, align  # noqa: E402
from .sim.runner import RunArtifacts  # noqa: E402


def _aligned(art: RunArtifacts, rid: int):
    B, T = art.beliefs[rid], art.truth[rid]
    i, j = align(B[:, 0], T[:, 0], 0.5 / art.config.sensor.imu.rate)
    return B[i], T[j]


def plot_errors(art: RunArtifacts, rid: int, path: Path) -> None:
    B, T = _aligned(art, rid)
    t = B[:, 0]
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
    for k, (ax, name) in enumerate(zip(axes, AXES)):
        err = B[:, 2 + k] - T[:, 2 + k]
        bound = 3.0 * np.sqrt(np.maximum(B[:, 11 + k], 0.0))
        ax.plot(t, err, lw=1.0, label="error")
        ax.plot(t, bound, "r--", lw=0.8, label="±3σ")
        ax.plot(t, -bound, "r--", lw=0.8)
        ax.set_ylabel(f"{name} error [m]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right")
    axes[-1].set_xlabel("time [s]")
    fig.suptitle(f"{art.config.name}: robot {rid} position error")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_enu(art: RunArtifacts, rid: int, path: Path) -> None:
    B, T = _aligned(art, rid)
    t = B[:, 0]
    fig, axes = plt.subplots(3, 1, sharex=True, figsize=(8, 7))
    for k, (ax, name) in enumerate(zip(axes, AXES)):
        sig3 = 3.0 * np.sqrt(np.maximum(B[:, 11 + k], 0.0))
        ax.plot(t, T[:, 2 + k], "k", lw=1.0, label="truth")
        ax.plot(t, B[:, 2 + k], lw=1.0, label="estimate")
        ax.fill_between(t, B[:, 2 + k] - sig3, B[:, 2 + k] + sig3, alpha=0.2, label="±3σ")
        ax.set_ylabel(f"{name} [m]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="upper right")
    axes[-1].set_xlabel("time [s]")
    fig.suptitle(f"{art.config.name}: robot {rid} position")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def write_plots(art: RunArtifacts, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rid in sorted(art.beliefs):
        for kind, fn in (("error", plot_errors), ("enu", plot_enu)):
            p = out_dir / f"robot{rid}_{kind}.png"
            fn(art, rid, p)
            written.append(p)
    return written
