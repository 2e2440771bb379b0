"""Command-line front end.

``coopnav run`` executes a scenario (optionally as a ZU on/off A/B pair over
several seeds) and writes traces, metrics and plots under
``<out>/<scenario>/<seed>/``. ``coopnav metrics`` recomputes the metrics of
a written run from its CSV files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .ab import run_ab, zu_robot_ids
from .errors import CoopNavError, ConfigError
from .io import metrics_from_dir, write_run
from .metrics import AXES, MetricsReport
from .sim import load_config, run_scenario

log = logging.getLogger("coopnav")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopnav", description="Decentralized cooperative localization simulator.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write traces")
    run.add_argument("--scenario", required=True, help="built-in name (cave, indoor) or YAML file")
    run.add_argument("--seed", type=int, default=None, help="first seed (default: the scenario's)")
    run.add_argument("--trials", type=int, default=1, help="number of consecutive seeds")
    run.add_argument("--zu", choices=("on", "off", "ab"), default="on",
                     help="ZU on the scenario's ZU robots, off, or both as a paired comparison")
    run.add_argument("--out", type=Path, default=Path("out"), help="output root directory")
    run.add_argument("--plots", type=_on_off, default=True, metavar="{on,off}", help="write PNG figures")

    met = sub.add_parser("metrics", help="recompute metrics from a written run directory")
    met.add_argument("run_dir", type=Path)
    met.add_argument("--json", action="store_true", help="print JSON instead of a table")
    return p


def format_report(report: MetricsReport) -> str:
    lines = [f"{'robot':>5} {'axis':>4} {'rmse':>10} {'max':>10} {'median':>10} {'std':>10}"]
    for rid, m in sorted(report.robots.items()):
        for name in (*AXES, "3D"):
            s = m.d3 if name == "3D" else m.axes[name]
            lines.append(f"{rid:>5} {name:>4} {s.rmse:10.4f} {s.max:10.4f} {s.median:10.4f} {s.std:10.4f}")
        if m.improvement is not None:
            lines.append(
                f"{rid:>5} horizontal error {m.initial_horizontal_error:.3f} -> {m.final_horizontal_error:.3f} m"
                f" (correction {m.correction:.3f} m, improvement {m.improvement:.1f}%)"
            )
    return "\n".join(lines)


def _write(art, out_dir: Path, plots: bool) -> None:
    write_run(art, out_dir)
    if plots:
        from .plots import write_plots

        write_plots(art, out_dir / "plots")


def cmd_run(args) -> int:
    cfg = load_config(args.scenario)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.trials < 1:
        raise ConfigError([("--trials", "must be at least 1")])
    root = args.out / cfg.name
    if args.zu == "ab":
        def keep(seed, on, off):
            _write(on, root / str(seed) / "zu_on", args.plots)
            _write(off, root / str(seed) / "zu_off", args.plots)
            print(f"seed {seed}: ZU on")
            print(format_report(on.metrics))
            print(f"seed {seed}: ZU off")
            print(format_report(off.metrics))

        result = run_ab(cfg, args.trials, on_trial=keep)
        summary = result.summary()
        root.mkdir(parents=True, exist_ok=True)
        (root / "ab_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        for rid in result.zu_robots:
            imp = summary["robots"][str(rid)]["improvement"]
            print(f"robot {rid}: 3D RMSE improvement {imp['3D_rmse']:.1f}%, Up RMSE improvement {imp['U_rmse']:.1f}%")
        return 0
    zu = args.zu == "on"
    targets = zu_robot_ids(cfg)
    for seed in range(cfg.seed, cfg.seed + args.trials):
        art = run_scenario(cfg.with_seed(seed).with_zu(zu, robots=targets))
        _write(art, root / str(seed), args.plots)
        print(f"seed {seed}")
        print(format_report(art.metrics))
    return 0


def cmd_metrics(args) -> int:
    report = metrics_from_dir(args.run_dir)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    else:
        print(format_report(report))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_metrics(args)
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error at {path}: {msg}", file=sys.stderr)
        return 2
    except (CoopNavError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
