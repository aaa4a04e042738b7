"""Closed-loop lane-change simulation.

One call to :func:`run_simulation` steps the four vehicles on the sampling
grid, fires events, solves the QP, runs the attack compensator and records
everything in a :class:`TrajectoryLog`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import eu_fdi_signal
from .config import ScenarioConfig
from .constraints import (
    CAVS, N_VARS, PAIR_NAMES, ClfSpec, clf_row, constraint_terms, robust_cbf_rows, true_pair_values,
)
from .dynamics import (
    NonFiniteStateError, cav_derivative, clamp_input, hdv_true_derivative, integrate_step,
    sample_disturbance,
)
from .events import TriggerState, advance_reference, reason_mask, record_event, should_trigger
from .hdv import HdvEstimate, observe, propagate, reset_and_adapt
from .qp import INFEASIBLE, OPTIMAL, STATUS_CODES, DualActiveSetSolver
from .resilient import CompensatorState

log = logging.getLogger(__name__)

# substream labels; fixed so toggling one stream never shifts another
HDV_INPUT_STREAM = 1
HDV_DISTURBANCE_STREAM = 2

RUNNING, COMPLETED, TIMEOUT, ABORTED = "running", "completed", "timeout", "aborted"
SPEED_FLOOR_FRACTION = 0.5


def _state_cols(prefix, suffix):
    return [f"{prefix}{k}{suffix}" for k in ("x", "y", "theta", "v")]


BASE_COLUMNS = (
    ["t"]
    + [c for n in ("A", "B", "H", "U") for c in _state_cols("", f"_{n}")]
    + _state_cols("", "bar_H")
    + ["h_x", "h_y", "h_theta", "h_v"]
    + ["e_x", "e_y", "e_theta", "e_v", "edot_x", "edot_y", "edot_theta", "edot_v"]
    + list(PAIR_NAMES)
    + ["event", "event_reason", "event_count", "qp_status"]
    + [f"{c}_{n}" for n in CAVS for c in (
        "u_s", "phi", "eps", "gamma_hat", "rho_hat", "u_commanded", "u_corrupted", "gamma")]
    + ["u_H", "phi_H", "delta_1", "delta_2", "delta_3", "delta_4", "anomaly"]
)
VERBOSE_QP_COLUMNS = ["qp_iterations", "qp_residual", "qp_active_rows", "qp_active_origins"]


@dataclass
class TrajectoryLog:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def row(self, idx: int) -> dict:
        return dict(zip(self.columns, self.rows[idx]))


@dataclass
class RunSummary:
    termination_reason: str
    end_time: float
    completion_time: float | None
    sample_count: int
    event_count: int
    qp_infeasible_count: int
    anomaly_count: int
    min_barrier: dict[str, float]
    first_violation_time: dict[str, float | None]
    max_abs_eps: dict[str, float]
    safe: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_termination(state_b, cfg: ScenarioConfig, t: float) -> str:
    y, th = state_b[1], state_b[2]
    if abs(y - cfg.lane_width) <= cfg.sigma and abs(th) <= cfg.heading_gate:
        return COMPLETED
    if t >= cfg.T_f - 1e-9:
        return TIMEOUT
    return RUNNING


def _hdv_policy(cfg: ScenarioConfig, rng: np.random.Generator, state, lane_y: float):
    hdv = cfg.hdv
    u_noise = rng.uniform(*hdv.u_range)
    phi_noise = rng.uniform(*hdv.phi_range)
    if hdv.policy == "uniform":
        return u_noise, phi_noise
    phi = -hdv.k_y * (state[1] - lane_y) - hdv.k_theta * state[2] + hdv.steer_noise * phi_noise
    return u_noise, min(max(phi, hdv.phi_range[0]), hdv.phi_range[1])


class EventController:
    """Builds and solves the event QP for the two CAVs."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.ctx = cfg.context()
        self.bounds = cfg.bounds()
        self.barriers = cfg.barriers()
        self.limits = cfg.input_limits()
        q = cfg.qp
        self.solver = DualActiveSetSolver(q.tol, q.max_iter)
        l = cfg.lane_width
        c3 = cfg.clf.c3
        self.clfs = [ClfSpec(1, cfg.v_d, c3, q.p[0]), ClfSpec(2, cfg.v_d, c3, q.p[1]),
                     ClfSpec(3, l, c3, q.p[2]), ClfSpec(4, l, c3, q.p[3])]
        self.G = 2.0 * np.diag([q.alpha_u[0], q.eps_phi, q.alpha_u[1], q.eps_phi, *q.p])
        lim = self.limits
        lo = np.array([lim.u_min, lim.phi_min, lim.u_min, lim.phi_min, 0, 0, 0, 0], float)
        hi = np.array([lim.u_max, lim.phi_max, lim.u_max, lim.phi_max])
        self._box = (lo[:4], hi)
        self._bound_C = np.vstack([np.eye(N_VARS), -np.eye(N_VARS)[:4]])
        self._bound_d = np.concatenate([lo, -hi])

    def assemble(self, states, est: HdvEstimate):
        """Stack every constraint as ``C z >= d``; ``origins`` names each row."""
        blocks_C, blocks_d, origins = [], [], []
        for spec in self.barriers:
            if self.cfg.robust_mode == "corners":
                margin, lg, _ = constraint_terms(spec, states, est, self.ctx, self.bounds)
                C = np.zeros((len(margin), N_VARS))
                C[:, :4] = lg
                blocks_C.append(C)
                blocks_d.append(-margin)
                origins.extend([spec.name] * len(margin))
            else:
                for row in robust_cbf_rows(spec, states, est, self.ctx, self.bounds,
                                           "collapsed", self._box):
                    blocks_C.append(row.coeffs[None, :])
                    blocks_d.append(np.array([row.rhs]))
                    origins.append(spec.name)
        for spec in self.clfs:
            c, r = clf_row(spec, states).as_geq()
            blocks_C.append(c[None, :])
            blocks_d.append(np.array([r]))
            origins.append(spec.name)
        blocks_C.append(self._bound_C)
        blocks_d.append(self._bound_d)
        origins.extend(["bound"] * len(self._bound_d))
        return np.vstack(blocks_C), np.concatenate(blocks_d), origins

    def solve(self, states, est):
        C, d, origins = self.assemble(states, est)
        sol = self.solver.solve_arrays(self.G, np.zeros(N_VARS), C, d)
        return sol, origins


def run_simulation(cfg: ScenarioConfig, seed: int = 0, mode: str | None = None,
                   run_to_horizon: bool = False, verbose_qp: bool = False):
    """Simulate one scenario; returns ``(TrajectoryLog, RunSummary)``."""
    mode = mode or cfg.mode
    if mode not in ("edsr", "baseline", "nominal"):
        raise ValueError(f"unknown mode {mode!r}")
    Ts, sub = cfg.T_s, cfg.substeps
    params = cfg.vehicle_params()
    limits = cfg.input_limits()
    ranges = cfg.disturbance_ranges()
    heading_model = cfg.hdv.heading_model
    controller = EventController(cfg)
    attacks = {"A": cfg.attacks.A.params(), "B": cfg.attacks.B.params()}
    attack_on = mode != "nominal"
    comp = {
        n: CompensatorState(cfg.compensator.alpha[k], cfg.compensator.c[k], enabled=mode == "edsr")
        for k, n in enumerate(CAVS)
    }
    rng_in = np.random.default_rng([seed, HDV_INPUT_STREAM])
    rng_dist = np.random.default_rng([seed, HDV_DISTURBANCE_STREAM])

    states = {k: np.array(v, dtype=float) for k, v in cfg.initial_states.items()}
    states["U"][3] = cfg.v_U
    states["U"][2] = 0.0
    lane_y_H = states["H"][1]
    est = HdvEstimate.from_state(states["H"])
    trig = TriggerState(controller.bounds, drift_reference=cfg.drift_reference)
    held = np.zeros(N_VARS)
    floor = SPEED_FLOOR_FRACTION * limits.v_min

    columns = list(BASE_COLUMNS) + (VERBOSE_QP_COLUMNS if verbose_qp else [])
    traj = TrajectoryLog(columns)
    infeasible = anomalies = 0
    completion_time = None
    reason = RUNNING
    n_steps = int(math.floor(cfg.T_f / Ts + 1e-9))

    for k in range(n_steps + 1):
        t = k * Ts
        u_H, phi_H = _hdv_policy(cfg, rng_in, states["H"], lane_y_H)
        dist = sample_disturbance(rng_dist, ranges)
        if k > 0:
            observe(est, states["H"], Ts, cfg.hdv.rate_after_reset == "zero")

        fired, reasons = should_trigger(est.e, est.e_dot, states, est.xbar, trig)
        qp_status, qp_info = "", None
        if fired:
            rate = est.e_dot_step if cfg.hdv.adapt_rate == "step" else est.e_dot
            est = reset_and_adapt(est, states["H"], rate)
            sol, origins = controller.solve(states, est)
            qp_status = sol.status
            if sol.status == OPTIMAL:
                held = sol.values.copy()
            else:
                infeasible += 1
                log.debug("t=%.2f QP %s", t, sol.status)
                if cfg.qp.fallback == "brake":
                    held = np.zeros(N_VARS)
                    held[0] = held[2] = limits.u_min
            qp_info = (sol.iterations, sol.kkt_residual, len(sol.active),
                       "|".join(sorted({origins[i] for i in sol.active if origins[i] != "bound"})))
            record_event(trig, t, states, est.xbar)

        row_inputs = {}
        applied = {}
        for n in CAVS:
            u_s, phi = held[0 if n == "A" else 2], held[1 if n == "A" else 3]
            eps = states[n][3] - cfg.v_d
            cs = comp[n]
            gamma_hat = cs.gamma_hat(eps, t)
            rho = cs.rho_hat
            cmd = clamp_input((u_s - gamma_hat, phi), limits)
            gamma = eu_fdi_signal(t, attacks[n]) if attack_on else 0.0
            u_bar = cmd.u + gamma
            if cfg.saturate_corrupted_input:
                u_bar = min(max(u_bar, limits.u_min), limits.u_max)
            cs.update(eps, Ts)
            applied[n] = (u_bar, cmd.phi)
            row_inputs[n] = (u_s, cmd.phi, eps, gamma_hat, rho, cmd.u, u_bar, gamma)

        bvals = true_pair_values(states, controller.ctx)
        row = [t]
        for n in ("A", "B", "H", "U"):
            row.extend(states[n].tolist())
        row.extend(est.xbar.tolist())
        row.extend(est.h.tolist())
        row.extend(est.e.tolist())
        row.extend(est.e_dot.tolist())
        row.extend(bvals[p] for p in PAIR_NAMES)
        row.extend([int(fired), reason_mask(reasons) if fired else 0, trig.events,
                     STATUS_CODES.get(qp_status, -1)])
        for n in CAVS:
            row.extend(row_inputs[n])
        row.extend([u_H, phi_H, *held[4:].tolist(), 0])
        if verbose_qp:
            row.extend(qp_info if qp_info else (0, 0.0, 0, ""))
        traj.rows.append(row)

        status = check_termination(states["B"], cfg, t)
        if status == COMPLETED and completion_time is None:
            completion_time = t
        if status == TIMEOUT or (completion_time is not None and not run_to_horizon):
            reason = COMPLETED if completion_time is not None else TIMEOUT
            break
        if k == n_steps:
            reason = COMPLETED if completion_time is not None else TIMEOUT
            break

        try:
            new = {}
            for n in CAVS:
                xi = applied[n]
                new[n] = integrate_step(states[n], lambda s, xi=xi, p=params[n]: cav_derivative(s, xi, p),
                                        Ts, sub)
                if new[n][3] < floor:
                    new[n][3] = floor
                    anomalies += 1
                    traj.rows[-1][-1 if not verbose_qp else -1 - len(VERBOSE_QP_COLUMNS)] = 1
                    raise NonFiniteStateError(f"speed of {n} hit the floor {floor} m/s at t={t:.2f}")
            new["H"] = integrate_step(
                states["H"],
                lambda s: hdv_true_derivative(s, (u_H, phi_H), dist, params["H"]), Ts, sub)
            vU = states["U"][3]
            new["U"] = states["U"] + Ts * np.array([vU, 0.0, 0.0, 0.0])
            propagate(est, params["H"], Ts, sub, heading_model)
            if not np.all(np.isfinite(est.xbar)):
                raise NonFiniteStateError("HDV estimate diverged")
        except NonFiniteStateError as exc:
            log.info("run aborted: %s", exc)
            reason = ABORTED
            break
        coast = cfg.drift_reference == "coasting"
        advance_reference(trig, lambda n, s: integrate_step(
            s, lambda z, n=n: cav_derivative(
                z, (0.0, 0.0) if coast else (held[0 if n == "A" else 2], held[1 if n == "A" else 3]),
                params[n]), Ts, sub))
        states.update(new)

    summary = compute_metrics(traj, cfg, reason=reason, completion_time=completion_time,
                              infeasible=infeasible, anomalies=anomalies)
    return traj, summary


def compute_metrics(traj: TrajectoryLog, cfg: ScenarioConfig | None = None, reason: str | None = None,
                    completion_time: float | None = None, infeasible: int | None = None,
                    anomalies: int | None = None) -> RunSummary:
    """Summarise a trajectory log.

    Values not recoverable from the log alone (termination reason when the
    run ended early) are passed in by the simulator; otherwise they are
    inferred from the rows.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory log")
    t = traj.column("t")
    min_b, first_neg = {}, {}
    for p in PAIR_NAMES:
        b = traj.column(p)
        min_b[p] = float(np.nanmin(b))
        neg = np.nonzero(b < 0)[0]
        first_neg[p] = float(t[neg[0]]) if len(neg) else None
    max_eps = {n: float(np.max(np.abs(traj.column(f"eps_{n}")))) for n in CAVS}
    status = traj.column("qp_status")
    events = int(traj.column("event").sum())
    if infeasible is None:
        infeasible = int(np.sum(status == STATUS_CODES[INFEASIBLE]))
    if anomalies is None:
        anomalies = int(traj.column("anomaly").sum())
    if reason is None:
        reason = COMPLETED if completion_time is not None else (
            TIMEOUT if cfg is not None and t[-1] >= cfg.T_f - 1e-9 else RUNNING)
    return RunSummary(
        termination_reason=reason,
        end_time=float(t[-1]),
        completion_time=completion_time,
        sample_count=len(traj),
        event_count=events,
        qp_infeasible_count=int(infeasible),
        anomaly_count=int(anomalies),
        min_barrier=min_b,
        first_violation_time=first_neg,
        max_abs_eps=max_eps,
        safe=all(v >= 0 for v in min_b.values()),
    )
