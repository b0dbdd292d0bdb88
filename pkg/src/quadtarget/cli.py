"""Command-line front end.

    quadtarget simulate --config sim-case1 --controller eer --out runs/
    quadtarget bench    --config sim-case1 --controllers eer,bvp,gpm --reps 3 --out runs/
    quadtarget selfcheck

``--config`` accepts a YAML path or the name of a shipped config. Exit codes:
0 success, 1 configuration error, 2 crash-flagged run (simulate) or failed
check (selfcheck). ``QUADTARGET_VERBOSITY`` (quiet, info, debug) sets the
log level; stdout lines begin with a versioned tag.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import platform
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from quadtarget import __version__
from quadtarget.config import ConfigFile, dump_config, resolve_config
from quadtarget.errors import ConfigurationError, MetricsError
from quadtarget.selfcheck import run_selfcheck
from quadtarget.simulator import (
    CONTROLLERS,
    BenchmarkTable,
    benchmark_controllers,
    compute_metrics,
    replay_latency,
    run_closed_loop,
)

log = logging.getLogger("quadtarget")
REPORT_TAG = "quadtarget/1"
EXIT_OK, EXIT_CONFIG, EXIT_CRASH = 0, 1, 2
VERBOSITY_ENV = "QUADTARGET_VERBOSITY"


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get(VERBOSITY_ENV, "quiet").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _report(*fields) -> None:
    print(REPORT_TAG, *fields)


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` next to ``path`` and rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
    }


def build_manifest(cfg: ConfigFile, command: str, outputs: dict[str, str], extra: dict | None = None) -> dict:
    return {
        "tool": "quadtarget",
        "version": __version__,
        "command": command,
        "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "machine": machine_descriptor(),
        "config": cfg.model_dump(mode="json"),
        "config_yaml": dump_config(cfg),
        "outputs": outputs,
        **(extra or {}),
    }


def cmd_simulate(config: str, controller: str, out: str) -> int:
    cfg = resolve_config(config)
    scenario = cfg.to_scenario(controller)
    out_dir = Path(out)
    stem = f"{scenario.name}_{controller}"
    paths = {"trace": f"{stem}_trace.csv", "metrics": f"{stem}_metrics.json"}
    manifest_name = f"{stem}_manifest.json"
    log.info("simulating %s with %s", scenario.name, controller)

    trace = run_closed_loop(scenario)
    try:
        metrics = compute_metrics(trace, scenario.window).as_dict()
    except MetricsError as exc:
        metrics = {"error": str(exc), "crashed": trace.crashed, "crash_time": trace.crash_time}
    metrics["records"] = len(trace)

    manifest = build_manifest(cfg, "simulate", paths, {"controller": controller})
    atomic_write(out_dir / paths["trace"], _trace_text(trace, manifest_name))
    atomic_write(out_dir / paths["metrics"], json.dumps(metrics, indent=2) + "\n")
    atomic_write(out_dir / manifest_name, json.dumps(manifest, indent=2) + "\n")

    fields = [f"status={'crash' if trace.crashed else 'ok'}", f"records={len(trace)}"]
    fields += [f"{k}={metrics[k]:.6g}" for k in ("mae_dx", "mae_dy", "mae_dz", "mean_compute_ms")
               if isinstance(metrics.get(k), float)]
    if trace.crashed:
        fields.append(f"crash_time={trace.crash_time:.3f}")
    _report("simulate", scenario.name, controller, *fields)
    return EXIT_CRASH if trace.crashed else EXIT_OK


def _trace_text(trace, manifest_name: str) -> str:
    buf = io.StringIO()
    trace.to_csv(buf, manifest=manifest_name)
    return buf.getvalue()


def cmd_bench(config: str, controllers: list[str], reps: int, out: str, mode: str = "closed-loop",
              steps: int = 500, per_run: bool = False) -> int:
    cfg = resolve_config(config)
    scenario = cfg.to_scenario()
    if mode == "replay":
        table = replay_latency(scenario, controllers, steps=steps)
    else:
        table = benchmark_controllers(scenario, controllers, reps)
    out_dir = Path(out)
    name = f"{scenario.name}_bench.csv"
    manifest_name = f"{scenario.name}_bench_manifest.json"
    atomic_write(out_dir / name, _table_text(table, manifest_name, per_run))
    manifest = build_manifest(cfg, "bench", {"table": name},
                              {"controllers": controllers, "repetitions": reps, "mode": mode})
    atomic_write(out_dir / manifest_name, json.dumps(manifest, indent=2) + "\n")
    for ctl, stats in table.summary().items():
        _report("bench", scenario.name, ctl, f"mean_ms={stats.mean_ms:.4g}", f"median_ms={stats.median_ms:.4g}",
                f"p99_ms={stats.p99_ms:.4g}")
    _report("bench", scenario.name, "ordering=" + "<".join(table.ordering()))
    return EXIT_OK


def _table_text(table: BenchmarkTable, manifest_name: str, per_run: bool) -> str:
    buf = io.StringIO()
    table.to_csv(buf, manifest=manifest_name, per_run=per_run)
    return buf.getvalue()


def cmd_selfcheck(perturb_gain: float = 0.0) -> int:
    results = run_selfcheck(perturb_gain)
    for r in results:
        _report("selfcheck", r.line())
    ok = all(r.passed for r in results)
    _report("selfcheck", f"summary {sum(r.passed for r in results)}/{len(results)} passed")
    return EXIT_OK if ok else EXIT_CRASH


def _controller_list(text: str) -> list[str]:
    names = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in names if c not in CONTROLLERS]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"controllers must be a comma list from {', '.join(CONTROLLERS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadtarget", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop simulation")
    p.add_argument("--config", required=True, help="YAML path or shipped name (sim-case1 ...)")
    p.add_argument("--controller", choices=CONTROLLERS, default=None,
                   help="controller (default: the config's scenario.controller)")
    p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("bench", help="compare controllers on one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--controllers", type=_controller_list, default=["eer", "bvp", "gpm"],
                   help="comma-separated list (default: eer,bvp,gpm)")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--out", default="runs")
    p.add_argument("--mode", choices=("closed-loop", "replay"), default="closed-loop",
                   help="closed-loop runs, or timing on a fixed replayed state sequence")
    p.add_argument("--steps", type=int, default=500, help="replay length (replay mode)")
    p.add_argument("--per-run", action="store_true", help="one table row per repetition")

    p = sub.add_parser("selfcheck", help="run the numerical oracle suite")
    p.add_argument("--perturb-gain", type=float, default=0.0, help=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            controller = args.controller or resolve_config(args.config).scenario.controller
            return cmd_simulate(args.config, controller, args.out)
        if args.command == "bench":
            if args.reps < 1:
                raise ConfigurationError("--reps must be >= 1", key="reps")
            return cmd_bench(args.config, args.controllers, args.reps, args.out, args.mode, args.steps,
                             args.per_run)
        return cmd_selfcheck(args.perturb_gain)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
