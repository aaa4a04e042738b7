"""Barrier and Lyapunov functions and their affine-in-input constraint rows.

Vehicles are addressed by name (``"A"``, ``"B"``, ``"H"``, ``"U"``); the
joint state is a mapping name -> ``[x, y, theta, v]``.  The QP decision
vector has the fixed layout of :data:`DECISION_VARS`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dynamics import InputLimits, VehicleParams
from .hdv import HdvEstimate, estimate_derivative

DECISION_VARS = ("u_A", "phi_A", "u_B", "phi_B", "delta_1", "delta_2", "delta_3", "delta_4")
N_VARS = len(DECISION_VARS)
CAVS = ("A", "B")
VEHICLES = ("A", "B", "H", "U")
U_COL = {"A": 0, "B": 2}
PHI_COL = {"A": 1, "B": 3}
PAIRS = tuple((i, j) for i in CAVS for j in VEHICLES if j != i)
PAIR_NAMES = tuple(f"b_{i}{j}" for i, j in PAIRS)

KINDS = ("pair", "lateral_lower", "lateral_upper", "speed_lower", "speed_upper")
ROBUST_MODES = ("corners", "collapsed")
MAX_ROWS_PER_CONSTRAINT = 32


class ConstraintDomainError(ValueError):
    """Barrier evaluated where it is undefined (non-positive speed)."""


@dataclass(frozen=True)
class BarrierSpec:
    kind: str
    i: str
    j: str | None = None
    gain: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.gain <= 0:
            raise ValueError("class-K gain must be positive")
        if self.i not in CAVS:
            raise ValueError(f"barrier owner must be a CAV, got {self.i!r}")
        if self.kind == "pair":
            if self.j not in VEHICLES or self.j == self.i:
                raise ValueError(f"invalid pair ({self.i}, {self.j})")

    @property
    def name(self) -> str:
        if self.kind == "pair":
            return f"b_{self.i}{self.j}"
        return f"{self.kind}_{self.i}"

    def alpha(self, b):
        return self.gain * b


@dataclass(frozen=True)
class ClfSpec:
    index: int
    target: float
    rate: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        if self.index not in (1, 2, 3, 4):
            raise ValueError("CLF index must be 1..4")
        if self.rate <= 0 or self.weight < 0:
            raise ValueError("CLF rate must be > 0 and weight >= 0")

    @property
    def vehicle(self) -> str:
        return "B" if self.index in (1, 3) else "A"

    @property
    def channel(self) -> str:
        return "longitudinal" if self.index in (1, 2) else "lateral"

    @property
    def name(self) -> str:
        return f"V{self.index}"


@dataclass
class ConstraintRow:
    coeffs: np.ndarray
    rhs: float
    sense: str
    origin: str
    corner_id: int = 0

    def satisfied(self, z, tol: float = 1e-9) -> bool:
        lhs = float(np.dot(self.coeffs, z))
        return lhs >= self.rhs - tol if self.sense == ">=" else lhs <= self.rhs + tol

    def as_geq(self) -> tuple[np.ndarray, float]:
        if self.sense == ">=":
            return self.coeffs, self.rhs
        return -self.coeffs, -self.rhs


@dataclass(frozen=True)
class UncertaintyBounds:
    w: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.1, 0.1, 1.0]))
    nu: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.2, 0.1, 1.0]))
    s: Mapping[str, np.ndarray] = field(default_factory=lambda: {
        k: np.array([0.01, 0.005, 0.01, 1.0]) for k in VEHICLES})

    def __post_init__(self):
        arrays = [np.asarray(self.w), np.asarray(self.nu), *map(np.asarray, self.s.values())]
        for arr in arrays:
            if arr.shape != (4,) or np.any(arr < 0) or np.any(np.isnan(arr)):
                raise ValueError("uncertainty bounds must be 4-vectors of non-negative numbers")

    @classmethod
    def zero(cls) -> "UncertaintyBounds":
        return cls(np.zeros(4), np.zeros(4), {k: np.zeros(4) for k in VEHICLES})

    @classmethod
    def uniform(cls, value: float) -> "UncertaintyBounds":
        full = np.full(4, float(value))
        return cls(full.copy(), full.copy(), {k: full.copy() for k in VEHICLES})

    def drift(self, name: str) -> np.ndarray:
        return np.asarray(self.s.get(name, np.zeros(4)), dtype=float)


@dataclass(frozen=True)
class ConstraintContext:
    """Everything besides states that the rows depend on."""

    lane_width: float = 4.0
    limits: InputLimits = field(default_factory=InputLimits)
    params: Mapping[str, VehicleParams] = field(
        default_factory=lambda: {k: VehicleParams() for k in VEHICLES})
    heading_model: str = "as_written"
    # widen the HDV's planar velocity by the error-rate bound nu in HDV pairs
    robust_rate: bool = False

    def p(self, name: str) -> VehicleParams:
        return self.params[name]


# ---------------------------------------------------------------------------
# values and gradients


def _pair_value(dx, dy, v, a, b):
    return dx * dx / (a * v) ** 2 + dy * dy / (b * v) ** 2 - 1.0


def barrier_value(spec: BarrierSpec, states: Mapping[str, np.ndarray], ctx: ConstraintContext) -> float:
    si = np.asarray(states[spec.i], dtype=float)
    if spec.kind == "pair":
        sj = np.asarray(states[spec.j], dtype=float)
        if si[3] <= 0:
            raise ConstraintDomainError(f"speed of {spec.i} must be positive, got {si[3]}")
        pi = ctx.p(spec.i)
        return float(_pair_value(sj[0] - si[0], sj[1] - si[1], si[3], pi.a, pi.b))
    l = ctx.lane_width
    if spec.kind == "lateral_lower":
        return float(si[1] + l / 2)
    if spec.kind == "lateral_upper":
        return float(1.5 * l - si[1])
    if spec.kind == "speed_lower":
        return float(si[3] - ctx.limits.v_min)
    return float(ctx.limits.v_max - si[3])


def barrier_gradient(spec: BarrierSpec, states, ctx: ConstraintContext) -> dict[str, np.ndarray]:
    """Partials of the barrier w.r.t. every state entry of every vehicle."""
    grad = {k: np.zeros(4) for k in states}
    grad.setdefault(spec.i, np.zeros(4))
    si = np.asarray(states[spec.i], dtype=float)
    if spec.kind == "pair":
        sj = np.asarray(states[spec.j], dtype=float)
        v = si[3]
        if v <= 0:
            raise ConstraintDomainError(f"speed of {spec.i} must be positive, got {v}")
        pi = ctx.p(spec.i)
        dx, dy = sj[0] - si[0], sj[1] - si[1]
        ax2, by2 = (pi.a * v) ** 2, (pi.b * v) ** 2
        gx, gy = 2 * dx / ax2, 2 * dy / by2
        grad.setdefault(spec.j, np.zeros(4))
        grad[spec.i][0] -= gx
        grad[spec.i][1] -= gy
        grad[spec.i][3] = -2 * (dx * dx / (pi.a ** 2 * v ** 3) + dy * dy / (pi.b ** 2 * v ** 3))
        grad[spec.j][0] += gx
        grad[spec.j][1] += gy
    elif spec.kind == "lateral_lower":
        grad[spec.i][1] = 1.0
    elif spec.kind == "lateral_upper":
        grad[spec.i][1] = -1.0
    elif spec.kind == "speed_lower":
        grad[spec.i][3] = 1.0
    else:
        grad[spec.i][3] = -1.0
    return grad


# ---------------------------------------------------------------------------
# vectorised Lie derivatives over candidate points


def _hdv_rate(est: HdvEstimate, ctx: ConstraintContext) -> np.ndarray:
    return estimate_derivative(est, ctx.p("H"), ctx.heading_model) + est.e_dot


def _other_rate(name, states, est, ctx):
    """Drift of a non-owner vehicle: CAV/U by the nominal model, H by the estimate."""
    if name == "H":
        return _hdv_rate(est, ctx)
    th, v = states[name][2], states[name][3]
    return np.array([v * math.cos(th), v * math.sin(th), 0.0, 0.0])


def _pair_terms(spec, ctx, si, sj, rate_j, dx, dy, v, rate_half=None):
    """(L_f b + alpha(b), L_g b) for a pair barrier at arrays of (dx, dy, v_i).

    Returns the margin array and a coefficient matrix over the 4 input columns.
    ``rate_half`` widens the partner's planar velocity to ``rate_j +/- rate_half``;
    the margin is then the worst case over that box.
    """
    # a handful of candidates: scalar arithmetic beats numpy call overhead
    pi = ctx.p(spec.i)
    a2, b2 = pi.a * pi.a, pi.b * pi.b
    th = float(si[2])
    c, sn = math.cos(th), math.sin(th)
    rjx, rjy = float(rate_j[0]), float(rate_j[1])
    hx, hy = (0.0, 0.0) if rate_half is None else (float(rate_half[0]), float(rate_half[1]))
    j_phi = 0.0, 0.0
    if spec.j in CAVS:
        thj, vj = float(sj[2]), float(sj[3])
        j_phi = -vj * math.sin(thj), vj * math.cos(thj)
    k = spec.gain
    ui, pi_col = U_COL[spec.i], PHI_COL[spec.i]
    pj_col = PHI_COL.get(spec.j)
    margin, vals, lg = [], [], []
    for x, y, w in zip(np.ravel(dx).tolist(), np.ravel(dy).tolist(), np.ravel(v).tolist()):
        ax2, by2 = a2 * w * w, b2 * w * w
        gx, gy = 2 * x / ax2, 2 * y / by2
        bv = x * x / ax2 + y * y / by2 - 1.0
        lf = -gx * w * c - gy * w * sn + gx * rjx + gy * rjy - abs(gx) * hx - abs(gy) * hy
        margin.append(lf + k * bv)
        vals.append(bv)
        row = [0.0, 0.0, 0.0, 0.0]
        row[ui] = -2.0 * (bv + 1.0) / w
        row[pi_col] = gx * w * sn - gy * w * c
        if pj_col is not None:
            row[pj_col] += gx * j_phi[0] + gy * j_phi[1]
        lg.append(row)
    margin, lg, vals = np.array(margin), np.array(lg).reshape(-1, 4), np.array(vals)
    return margin, lg, vals


def _box_terms(spec, ctx, y, th, v):
    """(margin, L_g, b) for lateral/speed barriers at arrays of own (y, theta, v)."""
    l = ctx.lane_width
    y, th, v = np.asarray(y, float), np.asarray(th, float), np.asarray(v, float)
    n = max(y.size, th.size, v.size)
    lg = np.zeros((n, 4))
    if spec.kind == "speed_lower":
        b = v - ctx.limits.v_min
        lf = 0.0
        lg[:, U_COL[spec.i]] = 1.0
    elif spec.kind == "speed_upper":
        b = ctx.limits.v_max - v
        lf = 0.0
        lg[:, U_COL[spec.i]] = -1.0
    else:
        sign = 1.0 if spec.kind == "lateral_lower" else -1.0
        b = y + l / 2 if sign > 0 else 1.5 * l - y
        lf = sign * v * np.sin(th)
        lg[:, PHI_COL[spec.i]] = sign * v * np.cos(th)
    b = b + np.zeros(n)
    return lf + spec.gain * b, lg, b


def _clip(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def _axis_candidates(center: float, radius: float, k: float, drift: float, r: float) -> list[float]:
    """Interval ends plus the interior minimiser of ``k d^2 + 2 d drift - 2 r |d|``."""
    if radius == 0:
        return [center]
    lo, hi = center - radius, center + radius
    best, f_best = lo, math.inf
    pts = [lo, hi, _clip(-(drift - r) / k, lo, hi), _clip(-(drift + r) / k, lo, hi)]
    if lo < 0 < hi:
        pts.append(0.0)
    for d in pts:
        f = k * d * d + 2 * d * drift - 2 * r * abs(d)
        if f < f_best:
            best, f_best = d, f
    if best == lo or best == hi:
        return [lo, hi]
    return [lo, best, hi]


def _pair_candidates(spec, ctx, si, sj, rate_j, half, rate_half=None):
    """Candidate points (dx, dy, v_i) covering the uncertainty box of a pair.

    ``half`` holds half-widths for (x_i, y_i, v_i, x_j, y_j).  The barrier
    only sees x and y through their differences, so the box collapses to an
    interval in each of dx, dy, v_i.  For fixed v_i the margin separates
    into a 1-D function of dx plus one of dy, so besides the interval ends
    the exact minimiser along each axis is a candidate; v_i gets its ends
    plus the stationary point of the margin at the nominal offsets.
    """
    pi = ctx.p(spec.i)
    dx0, dy0, v0 = float(sj[0] - si[0]), float(sj[1] - si[1]), float(si[3])
    rx, ry, rv = float(half[0] + half[3]), float(half[1] + half[4]), float(half[2])
    if rx == 0 and ry == 0 and rv == 0:
        return np.array([dx0]), np.array([dy0]), np.array([v0])
    th = float(si[2])
    c, sn = math.cos(th), math.sin(th)
    k = spec.gain
    hx, hy = (0.0, 0.0) if rate_half is None else (float(rate_half[0]), float(rate_half[1]))
    a2, b2 = pi.a ** 2, pi.b ** 2
    rjx, rjy = float(rate_j[0]), float(rate_j[1])

    v_cands = [v0 - rv, v0 + rv] if rv > 0 else [v0]
    if rv > 0:
        # margin(v) = P / v^2 + Q / v at the nominal offsets
        P = (k * (dx0 * dx0 / a2 + dy0 * dy0 / b2)
             + 2 * (dx0 * rjx - abs(dx0) * hx) / a2
             + 2 * (dy0 * rjy - abs(dy0) * hy) / b2)
        Q = -2 * (dx0 * c / a2 + dy0 * sn / b2)
        if Q != 0:
            v_star = -2 * P / Q
            if v0 - rv < v_star < v0 + rv:
                v_cands.append(v_star)
    dxs, dys, vs = [], [], []
    for v in v_cands:
        xs = _axis_candidates(dx0, rx, k, rjx - v * c, hx)
        ys = _axis_candidates(dy0, ry, k, rjy - v * sn, hy)
        for dx in xs:
            for dy in ys:
                dxs.append(dx)
                dys.append(dy)
                vs.append(v)
    return np.array(dxs), np.array(dys), np.array(vs)


def _half_widths(spec, bounds: UncertaintyBounds | None):
    """Half-widths (x_i, y_i, v_i, x_j, y_j) for a pair barrier."""
    if bounds is None:
        return np.zeros(5)
    si = bounds.drift(spec.i)
    if spec.j == "H":
        sj = np.asarray(bounds.w, dtype=float) + bounds.drift("H")
    else:
        sj = bounds.drift(spec.j)
    return np.array([si[0], si[1], si[3], sj[0], sj[1]])


def constraint_terms(spec: BarrierSpec, states, est: HdvEstimate | None, ctx: ConstraintContext,
                     bounds: UncertaintyBounds | None = None):
    """Margins ``L_f b + alpha(b)``, input gains ``L_g b`` and values ``b`` at every candidate.

    With ``bounds=None`` (or all-zero bounds) a single nominal point is used.
    For pairs involving the HDV the partner position is the estimate plus
    the measured error, and its velocity is the model drift plus the
    measured error rate.
    """
    si = np.asarray(states[spec.i], dtype=float)
    if si[3] <= 0:
        raise ConstraintDomainError(f"speed of {spec.i} must be positive, got {si[3]}")
    if spec.kind == "pair":
        if spec.j == "H":
            if est is None:
                raise ValueError("HDV pair barriers need an HdvEstimate")
            sj = est.xbar + est.e
        else:
            sj = np.asarray(states[spec.j], dtype=float)
        rate_j = _other_rate(spec.j, states, est, ctx)
        half = _half_widths(spec, bounds)
        rate_half = None
        if spec.j == "H" and ctx.robust_rate and bounds is not None:
            rate_half = np.asarray(bounds.nu, dtype=float)[:2]
        dx, dy, v = _pair_candidates(spec, ctx, si, sj, rate_j, half, rate_half)
        if np.any(v <= 0):
            raise ConstraintDomainError("uncertainty box reaches non-positive speed")
        return _pair_terms(spec, ctx, si, sj, rate_j, dx, dy, v, rate_half)
    return _box_corners(spec, ctx, si, bounds)


def _box_corners(spec, ctx, si, bounds):
    """Lateral/speed terms at every corner of the own-state drift box."""
    d = bounds.drift(spec.i) if bounds is not None else np.zeros(4)
    y, th, v = float(si[1]), float(si[2]), float(si[3])
    vs = sorted({v - d[3], v + d[3]})
    l = ctx.lane_width
    if spec.kind.startswith("speed"):
        b = np.array(vs) - ctx.limits.v_min if spec.kind == "speed_lower" else ctx.limits.v_max - np.array(vs)
        lg = np.zeros((len(vs), 4))
        lg[:, U_COL[spec.i]] = 1.0 if spec.kind == "speed_lower" else -1.0
        return spec.gain * b, lg, b
    ys = sorted({y - d[1], y + d[1]})
    ths = sorted({th - d[2], th + d[2]})
    sign = 1.0 if spec.kind == "lateral_lower" else -1.0
    margin, phi, vals = [], [], []
    for yc in ys:
        bc = yc + l / 2 if sign > 0 else 1.5 * l - yc
        for tc in ths:
            s_t, c_t = math.sin(tc), math.cos(tc)
            for vc in vs:
                margin.append(sign * vc * s_t + spec.gain * bc)
                phi.append(sign * vc * c_t)
                vals.append(bc)
    lg = np.zeros((len(margin), 4))
    lg[:, PHI_COL[spec.i]] = phi
    return np.array(margin), lg, np.array(vals)


def _rows_from_terms(spec, margin, lg, start_id=0):
    rows = []
    for k in range(len(margin)):
        coeffs = np.zeros(N_VARS)
        coeffs[:4] = lg[k]
        rows.append(ConstraintRow(coeffs, float(-margin[k]), ">=", spec.name, start_id + k))
    return rows


def cbf_row(spec: BarrierSpec, states, est: HdvEstimate | None, ctx: ConstraintContext) -> ConstraintRow:
    margin, lg, _ = constraint_terms(spec, states, est, ctx, None)
    return _rows_from_terms(spec, margin, lg)[0]


def robust_cbf_rows(spec: BarrierSpec, states, est: HdvEstimate | None, ctx: ConstraintContext,
                    bounds: UncertaintyBounds, mode: str = "corners",
                    input_box: tuple[np.ndarray, np.ndarray] | None = None) -> list[ConstraintRow]:
    """Robustified rows over the uncertainty box of ``spec``.

    ``corners`` emits one row per candidate point; ``collapsed`` emits a
    single row whose drift is the minimum margin and whose input gains are
    the worst case given the sign of each input's admissible interval.
    """
    if mode not in ROBUST_MODES:
        raise ValueError(f"robust mode must be one of {ROBUST_MODES}")
    margin, lg, _ = constraint_terms(spec, states, est, ctx, bounds)
    if len(margin) > MAX_ROWS_PER_CONSTRAINT:
        raise ValueError(f"{spec.name}: {len(margin)} candidate rows exceed the cap "
                         f"of {MAX_ROWS_PER_CONSTRAINT}")
    if mode == "corners" or len(margin) == 1:
        return _rows_from_terms(spec, margin, lg)
    lo, hi = input_box if input_box is not None else (np.full(4, -1.0), np.full(4, 1.0))
    worst = int(np.argmin(margin))
    gains = lg[worst].copy()
    for col in range(4):
        if lo[col] >= 0:
            gains[col] = lg[:, col].min()
        elif hi[col] <= 0:
            gains[col] = lg[:, col].max()
    coeffs = np.zeros(N_VARS)
    coeffs[:4] = gains
    return [ConstraintRow(coeffs, float(-margin.min()), ">=", spec.name, 0)]


def robust_margin_min(spec, states, est, ctx, bounds) -> float:
    """Smallest ``L_f b + alpha(b)`` over the robustification candidates."""
    margin, _, _ = constraint_terms(spec, states, est, ctx, bounds)
    return float(margin.min())


# ---------------------------------------------------------------------------
# CLF rows


def clf_value(spec: ClfSpec, states) -> float:
    s = np.asarray(states[spec.vehicle], dtype=float)
    err = s[3] - spec.target if spec.channel == "longitudinal" else s[1] - spec.target
    return float(err * err)


def clf_row(spec: ClfSpec, states) -> ConstraintRow:
    """``L_f V + L_g V xi + c3 V <= delta_j`` with the delta folded into coeffs."""
    s = np.asarray(states[spec.vehicle], dtype=float)
    coeffs = np.zeros(N_VARS)
    coeffs[3 + spec.index] = -1.0
    if spec.channel == "longitudinal":
        err = s[3] - spec.target
        lf = 0.0
        coeffs[U_COL[spec.vehicle]] = 2 * err
    else:
        err = s[1] - spec.target
        th, v = s[2], s[3]
        lf = 2 * err * v * math.sin(th)
        coeffs[PHI_COL[spec.vehicle]] = 2 * err * v * math.cos(th)
    return ConstraintRow(coeffs, -(lf + spec.rate * err * err), "<=", spec.name, 0)


def clf_lie(spec: ClfSpec, states) -> tuple[float, np.ndarray]:
    """(L_f V, L_g V over the 4 input columns) for gradient checks."""
    row = clf_row(spec, states)
    lf = -row.rhs - spec.rate * clf_value(spec, states)
    return lf, row.coeffs[:4].copy()


def default_barriers(gains: Mapping[str, float] | None = None) -> list[BarrierSpec]:
    """Every pair, lateral and speed barrier of the two-CAV scenario."""
    gains = dict(gains or {})
    out = []
    for i, j in PAIRS:
        out.append(BarrierSpec("pair", i, j, gains.get("pair", 1.0)))
    for i in CAVS:
        out.append(BarrierSpec("lateral_lower", i, gain=gains.get("lateral", 1.0)))
        out.append(BarrierSpec("lateral_upper", i, gain=gains.get("lateral", 1.0)))
        out.append(BarrierSpec("speed_lower", i, gain=gains.get("speed", 1.0)))
        out.append(BarrierSpec("speed_upper", i, gain=gains.get("speed", 1.0)))
    return out


def true_pair_values(states, ctx: ConstraintContext) -> dict[str, float]:
    """Barrier values of every pair at the true states (for logging)."""
    out = {}
    for i, j in PAIRS:
        si, sj = states[i], states[j]
        p = ctx.p(i)
        v = si[3]
        out[f"b_{i}{j}"] = ((sj[0] - si[0]) ** 2 / (p.a * v) ** 2
                            + (sj[1] - si[1]) ** 2 / (p.b * v) ** 2 - 1.0) if v > 0 else float("nan")
    return out
