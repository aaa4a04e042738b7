"""Shared fixtures: default scenario and cached 20-seed batches."""
from __future__ import annotations

import logging
import time
from functools import lru_cache

import numpy as np
import pytest

from edsr.config import default_config
from edsr.events import TriggerState, record_event, should_trigger
from edsr.sim import run_simulation

N_SEEDS = 20
ACCEPTANCE_LINES: list[str] = []


@lru_cache(maxsize=None)
def batch(mode: str, verbose_qp: bool = False):
    """20 seeds of the default scenario; returns (runs, wall seconds)."""
    cfg = default_config()
    logging.disable(logging.WARNING)
    try:
        t0 = time.perf_counter()
        runs = [run_simulation(cfg, seed, mode, verbose_qp=verbose_qp) for seed in range(N_SEEDS)]
        elapsed = time.perf_counter() - t0
    finally:
        logging.disable(logging.NOTSET)
    return runs, elapsed


@pytest.fixture(scope="session")
def cfg():
    return default_config()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def replay(runs, bounds):
    """Event counts of a trigger driven by recorded signals instead of the live loop."""
    counts = []
    for traj, _ in runs:
        trig = TriggerState(bounds)
        cols = {c: traj.column(c) for c in traj.columns if c != "qp_active_origins"}
        n_fired = 0
        for k in range(len(traj)):
            e = np.array([cols[f"e_{c}"][k] for c in ("x", "y", "theta", "v")])
            ed = np.array([cols[f"edot_{c}"][k] for c in ("x", "y", "theta", "v")])
            st_ = {n: np.array([cols[f"{c}_{n}"][k] for c in ("x", "y", "theta", "v")]) for n in "AB"}
            xbar = np.array([cols[f"{c}bar_H"][k] for c in ("x", "y", "theta", "v")])
            fired, _ = should_trigger(e, ed, st_, xbar, trig)
            if fired:
                n_fired += 1
                record_event(trig, k * 0.05, st_, xbar)
        counts.append(n_fired)
    return counts
