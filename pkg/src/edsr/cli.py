"""Command-line front end: run, compare, sweep and validate-config."""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import MODES, ConfigError, ScenarioConfig, load_config_dict, parse_config
from .constraints import CAVS, PAIR_NAMES
from .sim import ABORTED, RunSummary, TrajectoryLog, run_simulation

log = logging.getLogger("edsr")

EXIT_OK, EXIT_ERROR, EXIT_ABORTED = 0, 1, 2
SWEEP_SUMMARY_COLUMNS = (
    ["termination_reason", "end_time", "completion_time", "sample_count", "event_count",
     "qp_infeasible_count", "anomaly_count"]
    + [f"min_{name}" for name in PAIR_NAMES]
    + [f"first_violation_{name}" for name in PAIR_NAMES]
    + [f"max_abs_eps_{name}" for name in CAVS]
    + ["safe"]
)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1, like every other configuration problem."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# serialisation


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, "dtype"):
        x = float(value)
        return format(x, ".9g") if math.isfinite(x) else str(x)
    return str(value)


def trajectory_csv(traj: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(traj.columns)
    for row in traj.rows:
        w.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def summary_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=False) + "\n"


def atomic_write(path: Path, text: str) -> None:
    """Write through a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_run(out: Path, traj: TrajectoryLog, summary: RunSummary) -> None:
    atomic_write(out / "trajectory.csv", trajectory_csv(traj))
    atomic_write(out / "summary.json", summary_json(summary))


def exit_code(summary: RunSummary) -> int:
    return EXIT_ABORTED if summary.termination_reason == ABORTED else EXIT_OK


# ---------------------------------------------------------------------------
# commands


def _load(args) -> ScenarioConfig:
    return parse_config(args.config)


def run_command(args) -> int:
    cfg = _load(args)
    traj, summary = run_simulation(cfg, args.seed, args.mode, args.run_to_horizon, args.verbose_qp)
    write_run(Path(args.out), traj, summary)
    print(f"{args.mode or cfg.mode} seed={args.seed}: {summary.termination_reason} "
          f"at t={summary.end_time:.2f} s, safe={summary.safe}")
    return exit_code(summary)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.3f}"
    return str(x)


def summary_table(summaries: dict[str, RunSummary]) -> str:
    names = list(summaries)
    lines = [("metric", *names)]
    first = summaries[names[0]]
    for field in ("termination_reason", "completion_time", "end_time", "event_count",
                  "sample_count", "qp_infeasible_count", "safe"):
        lines.append((field, *(_fmt(getattr(summaries[n], field)) for n in names)))
    for pair in first.min_barrier:
        lines.append((f"min {pair}", *(_fmt(summaries[n].min_barrier[pair]) for n in names)))
    for cav in first.max_abs_eps:
        lines.append((f"max |eps_{cav}|", *(_fmt(summaries[n].max_abs_eps[cav]) for n in names)))
    widths = [max(len(row[k]) for row in lines) for k in range(len(lines[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                     for row in lines)


def compare_command(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    summaries = {}
    for mode in ("edsr", "baseline"):
        traj, summary = run_simulation(cfg, args.seed, mode, args.run_to_horizon, args.verbose_qp)
        write_run(out / mode, traj, summary)
        summaries[mode] = summary
    print(summary_table(summaries))
    return max(exit_code(s) for s in summaries.values())


def load_sweep_spec(path) -> tuple[list[str], list[int], dict[str, list]]:
    """Read ``{"modes": [...], "seeds": [...], "grid": {"dotted.path[,other.path]": [values]}}``."""
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc.msg})"]) from None
    if not isinstance(spec, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    problems = [f"{path}: unknown key {k!r}" for k in spec if k not in ("modes", "seeds", "grid")]
    modes = spec.get("modes", ["edsr"])
    seeds = spec.get("seeds", [0])
    grid = spec.get("grid", {})
    if not isinstance(modes, list) or not modes or any(m not in MODES for m in modes):
        problems.append(f"{path}: modes must be a non-empty list drawn from {MODES}")
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        problems.append(f"{path}: seeds must be a non-empty list of integers")
    if not isinstance(grid, dict) or not grid:
        problems.append(f"{path}: grid must list at least one parameter")
    elif any(not isinstance(v, list) or not v for v in grid.values()):
        problems.append(f"{path}: every grid parameter needs a non-empty list of values")
    if problems:
        raise ConfigError(problems)
    return modes, seeds, grid


def _cells(cfg: ScenarioConfig, grid: dict[str, list]) -> list[tuple[dict, ScenarioConfig]]:
    keys = list(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        changes = {}
        for key, value in zip(keys, values):
            for path in key.split(","):
                changes[path.strip()] = value
        cells.append((dict(zip(keys, values)), cfg.with_overrides(**changes)))
    return cells


def _sweep_job(job):
    idx, params, cfg_data, mode, seed, out_dir, horizon = job
    cfg = load_config_dict(cfg_data)
    traj, summary = run_simulation(cfg, seed, mode, horizon)
    write_run(Path(out_dir) / f"cell{idx:03d}_{mode}_seed{seed}", traj, summary)
    return idx, params, mode, seed, summary


def _sweep_row(params, mode, seed, summary: RunSummary, idx: int) -> list:
    s = summary
    row = [idx, mode, seed, *params.values(), s.termination_reason, s.end_time, s.completion_time,
           s.sample_count, s.event_count, s.qp_infeasible_count, s.anomaly_count]
    row += [s.min_barrier[p] for p in PAIR_NAMES]
    row += [s.first_violation_time[p] for p in PAIR_NAMES]
    row += [s.max_abs_eps[c] for c in CAVS]
    row.append(s.safe)
    return row


def sweep_command(args) -> int:
    cfg = _load(args)
    modes, seeds, grid = load_sweep_spec(args.grid)
    cells = _cells(cfg, grid)
    out = Path(args.out)
    jobs = [(idx, params, c.model_dump(mode="json"), mode, seed, str(out / "runs"), args.run_to_horizon)
            for idx, (params, c) in enumerate(cells) for mode in modes for seed in seeds]
    workers = args.jobs or os.cpu_count() or 1
    if workers == 1:
        results = [_sweep_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "mode", "seed", *grid.keys(), *SWEEP_SUMMARY_COLUMNS])
    for idx, params, mode, seed, summary in results:
        w.writerow([format_cell(v) for v in _sweep_row(params, mode, seed, summary, idx)])
    atomic_write(out / "sweep.csv", buf.getvalue())
    unsafe = sum(not r[4].safe for r in results)
    print(f"{len(results)} runs over {len(cells)} cells, {unsafe} unsafe; wrote {out / 'sweep.csv'}")
    return EXIT_OK


def validate_command(args) -> int:
    cfg = _load(args)
    print(f"{args.config}: ok (mode {cfg.mode}, T_f {cfg.T_f} s, T_s {cfg.T_s} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edsr", description="Event-driven safe and resilient lane-change simulator.")
    parser.add_argument("--log-level", default="WARNING", help="Python logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, with_out=True):
        p.add_argument("--config", required=True, help="scenario JSON file")
        if with_out:
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--out", default="out", help="output directory")
            p.add_argument("--run-to-horizon", action="store_true",
                           help="keep simulating after B completes the lane change")

    p = sub.add_parser("run", help="simulate one scenario")
    common(p)
    p.add_argument("--mode", choices=MODES, default=None, help="override the config's mode")
    p.add_argument("--verbose-qp", action="store_true", help="log per-solve QP diagnostics")
    p.set_defaults(func=run_command)

    p = sub.add_parser("compare", help="run edsr and baseline on identical seeds and attacks")
    common(p)
    p.add_argument("--verbose-qp", action="store_true")
    p.set_defaults(func=compare_command)

    p = sub.add_parser("sweep", help="run a parameter grid")
    common(p)
    p.add_argument("--grid", required=True, help="sweep spec JSON (modes, seeds, grid)")
    p.add_argument("--jobs", type=int, default=0, help="worker processes (default: CPU count)")
    p.set_defaults(func=sweep_command)

    p = sub.add_parser("validate-config", help="check a scenario file and exit")
    common(p, with_out=False)
    p.set_defaults(func=validate_command)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
