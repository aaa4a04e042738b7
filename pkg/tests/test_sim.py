import math

import numpy as np
import pytest

from edsr.attacks import eu_fdi_signal
from edsr.config import default_config
from edsr.sim import (
    ABORTED, BASE_COLUMNS, COMPLETED, RUNNING, TIMEOUT, VERBOSE_QP_COLUMNS, TrajectoryLog,
    check_termination, compute_metrics, run_simulation,
)
from conftest import batch


@pytest.fixture(scope="module")
def short_cfg():
    return default_config().with_overrides(T_f=3.0)


def test_termination_gate(cfg):
    assert check_termination([0, 3.8, 0, 30], cfg, 1.0) == COMPLETED
    assert check_termination([0, 0.0, 0, 30], cfg, 15.0) == TIMEOUT
    assert check_termination([0, 3.9, 0.3, 30], cfg, 1.0) == RUNNING


def test_log_shape_and_time(short_cfg):
    traj, summary = run_simulation(short_cfg, 0, "edsr", run_to_horizon=True)
    t = traj.column("t")
    assert traj.columns == list(BASE_COLUMNS)
    assert len(traj) == math.floor((t[-1] - t[0]) / short_cfg.T_s + 1e-9) + 1
    assert np.all(np.diff(t) > 0)
    assert summary.sample_count == len(traj)


def test_verbose_columns(short_cfg):
    traj, _ = run_simulation(short_cfg, 0, "edsr", verbose_qp=True)
    assert traj.columns[-len(VERBOSE_QP_COLUMNS):] == VERBOSE_QP_COLUMNS


def test_log_completeness(short_cfg):
    traj, summary = run_simulation(short_cfg, 1, "baseline", verbose_qp=True)
    attacks = {"A": short_cfg.attacks.A.params(), "B": short_cfg.attacks.B.params()}
    for k in range(len(traj)):
        r = traj.row(k)
        for n in "AB":
            assert r[f"gamma_{n}"] == eu_fdi_signal(r["t"], attacks[n])
            assert r[f"u_corrupted_{n}"] == pytest.approx(r[f"u_commanded_{n}"] + r[f"gamma_{n}"])
        assert (r["qp_status"] >= 0) == bool(r["event"])
    events = traj.column("event")
    assert np.array_equal(np.cumsum(events), traj.column("event_count"))
    assert summary.event_count == int(events.sum())
    assert traj.row(0)["event_reason"] & 1


def test_nominal_has_no_attack(short_cfg):
    traj, _ = run_simulation(short_cfg, 2, "nominal")
    for n in "AB":
        assert np.all(traj.column(f"gamma_{n}") == 0) and np.all(traj.column(f"gamma_hat_{n}") == 0)


def test_baseline_and_nominal_identical_without_attack(short_cfg):
    off = short_cfg.with_overrides(**{"attacks.A.enabled": False, "attacks.B.enabled": False})
    a, _ = run_simulation(off, 3, "baseline")
    b, _ = run_simulation(off, 3, "nominal")
    assert a.rows == b.rows


def test_compensator_only_in_edsr(short_cfg):
    traj, _ = run_simulation(short_cfg, 0, "baseline")
    assert np.all(traj.column("rho_hat_B") == 0)
    traj, _ = run_simulation(short_cfg, 0, "edsr")
    assert np.all(np.diff(traj.column("rho_hat_B")) >= 0) and traj.column("rho_hat_B")[-1] > 0


def test_deterministic(short_cfg):
    a, sa = run_simulation(short_cfg, 9, "edsr")
    b, sb = run_simulation(short_cfg, 9, "edsr")
    assert a.rows == b.rows and sa == sb
    c, _ = run_simulation(short_cfg, 10, "edsr")
    assert c.rows != a.rows


def test_random_streams_are_separate(short_cfg):
    calm = short_cfg.with_overrides(**{"hdv.disturbance": (0.0, 0.0, 0.0, 0.0)})
    a, _ = run_simulation(short_cfg, 4, "nominal")
    b, _ = run_simulation(calm, 4, "nominal")
    # the HDV's random acceleration draws don't move when disturbances change
    assert np.array_equal(a.column("u_H"), b.column("u_H"))


def test_brake_fallback_runs(short_cfg):
    cfg = short_cfg.with_overrides(**{"qp.fallback": "brake"})
    traj, summary = run_simulation(cfg, 0, "edsr")
    assert summary.termination_reason in (COMPLETED, TIMEOUT, ABORTED)


def test_unknown_mode_rejected(short_cfg):
    with pytest.raises(ValueError):
        run_simulation(short_cfg, 0, "chaos")


def test_metrics_single_row():
    cols = list(BASE_COLUMNS)
    row = [0.0] * len(cols)
    for k, c in enumerate(cols):
        if c.startswith("b_"):
            row[k] = 2.0
    row[cols.index("eps_B")] = -5.0
    row[cols.index("event")] = 1
    s = compute_metrics(TrajectoryLog(cols, [row]))
    assert s.sample_count == 1 and s.event_count == 1 and s.safe
    assert s.max_abs_eps["B"] == 5.0 and all(v == 2.0 for v in s.min_barrier.values())
    with pytest.raises(ValueError):
        compute_metrics(TrajectoryLog(cols, []))


def test_nominal_runs_are_safe():
    runs, _ = batch("nominal")
    assert all(s.safe for _, s in runs)
    assert all(s.completion_time is None or s.completion_time <= 15.0 for _, s in runs)


def test_nominal_runs_complete():
    # module example: attack-free lane change finishes on every seed
    runs, _ = batch("nominal")
    done = [s.completion_time is not None for _, s in runs]
    assert all(done), f"{sum(done)}/{len(done)} nominal runs completed"

