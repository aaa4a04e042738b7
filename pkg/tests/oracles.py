"""Independent reference computations used by the tests.

Nothing here calls into the constraint or QP code under test; the oracles
only reuse the plain barrier value and the vehicle model.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from edsr.constraints import PHI_COL, U_COL, barrier_value
from edsr.dynamics import cav_derivative
from edsr.hdv import estimate_derivative


def fd_gradient(f, x, rel_step=1e-6):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for k in range(len(x)):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def fd_state_gradients(spec, states, ctx):
    """d b / d state for every vehicle, by central differences."""
    out = {}
    for name in states:
        def f(z, name=name):
            s = dict(states)
            s[name] = z
            return barrier_value(spec, s, ctx)
        out[name] = fd_gradient(f, states[name])
    return out


def vector_fields(name, state, ctx, est=None):
    """(drift, u column, phi column) of one vehicle as the controller models it."""
    if name == "H":
        drift = estimate_derivative(est, ctx.p("H"), ctx.heading_model) + est.e_dot
        return drift, np.zeros(4), np.zeros(4)
    if name == "U":
        th, v = state[2], state[3]
        return np.array([v * math.cos(th), v * math.sin(th), 0, 0]), np.zeros(4), np.zeros(4)
    p = ctx.p(name)
    f = cav_derivative(state, (0.0, 0.0), p)
    g_u = cav_derivative(state, (1.0, 0.0), p) - f
    g_phi = cav_derivative(state, (0.0, 1.0), p) - f
    return f, g_u, g_phi


def fd_lie_terms(spec, states, ctx, est=None):
    """(L_f b + k b, L_g b over [u_A, phi_A, u_B, phi_B]) from finite differences."""
    states = {k: np.asarray(v, float) for k, v in states.items()}
    if est is not None:
        states["H"] = est.xbar + est.e
    involved = [spec.i] + ([spec.j] if spec.kind == "pair" else [])
    grads = fd_state_gradients(spec, {k: states[k] for k in involved} | {
        k: states[k] for k in states if k not in involved}, ctx)
    lf, lg = 0.0, np.zeros(4)
    for name in involved:
        f, g_u, g_phi = vector_fields(name, states[name], ctx, est)
        lf += grads[name] @ f
        if name in U_COL:
            lg[U_COL[name]] += grads[name] @ g_u
            lg[PHI_COL[name]] += grads[name] @ g_phi
    return lf + spec.gain * barrier_value(spec, states, ctx), lg


def pair_margin_grid(spec, ctx, owner, partner_xy, partner_rate, half, rate_half, n=9):
    """Brute-force min of L_f b + k b over a dense grid of the uncertainty box.

    ``half`` = half-widths of (x_i, y_i, v_i, x_j, y_j); ``rate_half`` of the
    partner's planar velocity.  The velocity box is sampled at its ends and
    centre (the margin is affine in it).
    """
    p = ctx.p(spec.i)
    xi0, yi0, th, vi0 = owner
    axes = [np.linspace(c - r, c + r, n) if r > 0 else np.array([c])
            for c, r in zip((xi0, yi0, vi0, partner_xy[0], partner_xy[1]), half)]
    raxes = [np.array([c - r, c, c + r]) if r > 0 else np.array([c])
             for c, r in zip(partner_rate, rate_half)]
    xi, yi, vi, xj, yj, rx, ry = np.meshgrid(*axes, *raxes, indexing="ij", sparse=True)
    A, B = (p.a * vi) ** 2, (p.b * vi) ** 2
    dx, dy = xj - xi, yj - yi
    b = dx ** 2 / A + dy ** 2 / B - 1
    db_dxj, db_dyj = 2 * dx / A, 2 * dy / B
    lf = (-db_dxj * vi * math.cos(th) - db_dyj * vi * math.sin(th)
          + db_dxj * rx + db_dyj * ry)
    return float(np.min(lf + spec.gain * b))


# ---------------------------------------------------------------------------
# QP oracle


def _polish(G, a, C, d, active, tol):
    """Solve the equality-constrained problem on ``active`` and verify KKT."""
    n = len(a)
    Ca = C[active]
    K = np.block([[G, -Ca.T], [Ca, np.zeros((len(active), len(active)))]])
    rhs = np.concatenate([-a, d[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x, lam = sol[:n], sol[n:]
    if np.max(np.abs(K @ sol - rhs), initial=0.0) > tol or np.any(lam < -tol) or np.any(C @ x - d < -tol):
        return None
    return x


def projected_gradient_qp(G, a, C, d, tol=1e-10, max_iter=100000, check_every=50):
    """min 1/2 x'Gx + a'x s.t. Cx >= d via accelerated projected gradient on the dual.

    The dual variable lives in the nonnegative orthant, so projection is a
    clip.  Every ``check_every`` iterations the rows with positive
    multipliers are taken as the active set and the primal point is
    polished by one KKT linear solve; it is accepted once it passes the
    KKT sign and feasibility checks.
    """
    Gi = np.linalg.inv(G)
    M = C @ Gi @ C.T
    q = d + C @ Gi @ a
    L = max(np.linalg.eigvalsh(M).max(), 1e-12)
    lam = np.zeros(len(d))
    y, t = lam.copy(), 1.0
    for k in range(1, max_iter + 1):
        new = np.maximum(y - (M @ y - q) / L, 0.0)
        if (y - new) @ (new - lam) > 0:  # gradient restart: momentum points uphill
            t = 1.0
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = new + (t - 1) / t_new * (new - lam)
        lam, t = new, t_new
        if k % check_every == 0:
            active = np.nonzero(lam > 1e-12)[0]
            x = _polish(G, a, C, d, active, tol)
            if x is not None:
                return x
    return Gi @ (C.T @ lam - a)


def qp_objective(G, a, x):
    return float(0.5 * x @ G @ x + a @ x)


def random_qp(rng, n=8, max_rows=60):
    """Strictly convex QP with a strictly feasible point."""
    A = rng.normal(size=(n, n))
    G = A @ A.T / n + 0.5 * np.eye(n)
    a = rng.normal(size=n) * 3
    m = int(rng.integers(1, max_rows + 1))
    C = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    d = C @ x0 - rng.uniform(0.0, 1.0, size=m)
    return G, a, C, d


def corners(center, half):
    """All vertices of a box (used for small sanity checks)."""
    return [np.array(c) for c in itertools.product(*[(x - h, x + h) for x, h in zip(center, half)])]
