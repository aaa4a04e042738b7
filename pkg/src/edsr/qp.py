"""Dense strictly convex QP used at every control event.

Solved with the Goldfarb-Idnani dual active-set method: start at the
unconstrained minimiser and add the most violated constraint until the
iterate is primal feasible.  Problems here have eight variables and a few
hundred rows, so everything is plain dense numpy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constraints import N_VARS, ConstraintRow
from .dynamics import InputLimits

OPTIMAL, INFEASIBLE, MAX_ITER = "optimal", "infeasible", "max_iter"
STATUS_CODES = {OPTIMAL: 0, INFEASIBLE: 1, MAX_ITER: 2}


@dataclass
class QpProblem:
    """min 1/2 z'Hz + f'z  s.t.  rows, lower <= z <= upper."""

    H: np.ndarray
    f: np.ndarray
    rows: list[ConstraintRow] = field(default_factory=list)
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        n = self.H.shape[0]
        if self.H.shape != (n, n) or not np.allclose(self.H, self.H.T):
            raise ValueError("H must be a symmetric square matrix")
        if np.linalg.eigvalsh(self.H).min() <= 0:
            raise ValueError("H must be positive definite")
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        if np.any(self.lower > self.upper):
            raise ValueError("variable bounds are inconsistent")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def inequalities(self) -> tuple[np.ndarray, np.ndarray]:
        """All constraints, bounds included, as ``C z >= d``."""
        n = self.n
        C, d = [], []
        for row in self.rows:
            c, r = row.as_geq()
            C.append(c)
            d.append(r)
        eye = np.eye(n)
        for k in range(n):
            if np.isfinite(self.lower[k]):
                C.append(eye[k])
                d.append(self.lower[k])
            if np.isfinite(self.upper[k]):
                C.append(-eye[k])
                d.append(-self.upper[k])
        if not C:
            return np.zeros((0, n)), np.zeros(0)
        return np.array(C, dtype=float), np.array(d, dtype=float)

    def objective(self, z) -> float:
        z = np.asarray(z, float)
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSolution:
    values: np.ndarray
    status: str
    kkt_residual: float
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def build_qp(cbf_rows: Sequence[ConstraintRow], clf_rows: Sequence[ConstraintRow],
             weights: dict, limits: InputLimits) -> QpProblem:
    """Assemble the event QP over ``[u_A, phi_A, u_B, phi_B, delta_1..4]``.

    ``weights`` needs ``alpha_u`` (pair of accel weights for A, B), ``p``
    (four relaxation weights) and ``eps_phi`` (steering regularisation).
    """
    a_u = list(weights.get("alpha_u", (1.0, 1.0)))
    p = list(weights.get("p", (1.0, 1.0, 100.0, 1.0)))
    eps_phi = float(weights.get("eps_phi", 0.01))
    diag = [a_u[0], eps_phi, a_u[1], eps_phi, *p]
    if len(diag) != N_VARS:
        raise ValueError("need two acceleration weights and four relaxation weights")
    if min(diag) < 0:
        raise ValueError(f"QP weights must be non-negative: {diag}")
    lower = np.array([limits.u_min, limits.phi_min, limits.u_min, limits.phi_min, 0, 0, 0, 0], float)
    upper = np.array([limits.u_max, limits.phi_max, limits.u_max, limits.phi_max,
                      np.inf, np.inf, np.inf, np.inf])
    return QpProblem(np.diag(diag), np.zeros(N_VARS), [*cbf_rows, *clf_rows], lower, upper)


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """max of stationarity, primal infeasibility and complementarity."""
    C, d = problem.inequalities()
    return _kkt(problem.H, problem.f, C, d, solution.values, solution.multipliers)


def _kkt(G, a, C, d, x, lam):
    slack = C @ x - d if len(d) else np.zeros(0)
    if lam.shape != slack.shape:
        lam = np.zeros_like(slack)
    stat = G @ x + a - C.T @ lam if len(d) else G @ x + a
    # rows are compared after normalisation so large coefficients don't dominate
    scale = np.maximum(np.linalg.norm(C, axis=1), 1.0) if len(d) else np.zeros(0)
    primal = np.max(np.maximum(-slack / scale, 0.0), initial=0.0)
    dual = np.max(np.maximum(-lam, 0.0), initial=0.0)
    comp = np.max(np.abs(lam * slack / scale), initial=0.0)
    return float(max(np.max(np.abs(stat), initial=0.0), primal, dual, comp))


def _back_substitute(R, rhs, q):
    """Solve the leading ``q x q`` upper-triangular system of ``R``."""
    r = np.zeros(q)
    for i in range(q - 1, -1, -1):
        r[i] = (rhs[i] - R[i, i + 1:q] @ r[i + 1:]) / R[i, i]
    return r


def _givens(a, b):
    r = math.hypot(a, b)
    if r == 0.0:
        return 1.0, 0.0, 0.0
    return a / r, b / r, r


class DualActiveSetSolver:
    """Goldfarb-Idnani for ``min 1/2 x'Gx + a'x  s.t.  C x >= d``.

    Keeps ``J = L^-T Q`` and the triangular ``R`` of the active normals,
    updated by a Householder reflection when a constraint enters and by
    Givens rotations when one leaves.
    """

    def __init__(self, tol: float = 1e-8, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter
        self._cache = None

    def _factor(self, G):
        # the event QP reuses one Hessian, so keep its factor around
        key = G.tobytes()
        if self._cache is None or self._cache[0] != key:
            L = np.linalg.cholesky(G)
            self._cache = (key, np.linalg.inv(L).T)  # G^-1 = J J'
        return self._cache[1].copy()

    def solve_arrays(self, G, a, C, d) -> QpSolution:
        G = np.asarray(G, float)
        a = np.asarray(a, float)
        n = G.shape[0]
        C = np.asarray(C, float).reshape(-1, n)
        d = np.asarray(d, float)
        m = len(d)
        norms = np.sqrt(np.einsum("ij,ij->i", C, C))
        keep = norms > 0
        all_kept = bool(keep.all())
        # a zero row is either trivially satisfied or impossible
        if not all_kept and np.any(d[~keep] > self.tol):
            return QpSolution(np.zeros(n), INFEASIBLE, math.inf, 0, np.zeros(m))
        safe = norms if all_kept else np.where(keep, norms, 1.0)
        Cn = C / safe[:, None]
        dn = np.where(keep, d / safe, 0.0)

        J = self._factor(G)
        x = -J @ (J.T @ a)
        R = np.zeros((n, n))
        active: list[int] = []
        u = np.zeros(0)
        q = 0
        it = 0
        status = OPTIMAL
        while True:
            s = Cn @ x - dn
            if not all_kept:
                s[~keep] = 0.0
            if active:
                s[active] = 0.0
            p = int(np.argmin(s))
            if s[p] >= -self.tol:
                break
            n_plus = Cn[p]
            u_plus = np.append(u, 0.0)
            while True:
                it += 1
                if it > self.max_iter:
                    status = MAX_ITER
                    break
                dv = J.T @ n_plus
                z = J[:, q:] @ dv[q:]
                r = _back_substitute(R, dv, q)
                # partial (dual) step
                t1, l_idx = math.inf, -1
                for j in range(q):
                    if r[j] > 1e-14:
                        ratio = u_plus[j] / r[j]
                        if ratio < t1:
                            t1, l_idx = ratio, j
                # full (primal) step
                zn = float(z @ n_plus)
                t2 = -float(n_plus @ x - dn[p]) / zn if abs(zn) > 1e-14 else math.inf
                t = min(t1, t2)
                if math.isinf(t):
                    status = INFEASIBLE
                    break
                if math.isinf(t2):
                    u_plus[:q] -= t * r
                    u_plus[q] += t
                    u_plus = np.delete(u_plus, l_idx)
                    active.pop(l_idx)
                    q = self._drop(J, R, q, l_idx)
                    continue
                x = x + t * z
                u_plus[:q] -= t * r
                u_plus[q] += t
                if t == t2:
                    q = self._add(J, R, q, dv)
                    active.append(p)
                    u = u_plus
                    break
                u_plus = np.delete(u_plus, l_idx)
                active.pop(l_idx)
                q = self._drop(J, R, q, l_idx)
            if status != OPTIMAL:
                break
        lam = np.zeros(m)
        if status == OPTIMAL and active:
            lam[active] = u / norms[active]
        resid = _kkt(G, a, C, d, x, lam) if status == OPTIMAL else math.inf
        return QpSolution(x, status, resid, it, lam, sorted(active))

    @staticmethod
    def _add(J, R, q, dv):
        # one Householder reflection zeroes dv[q+1:] in the free columns of J
        tail = dv[q:]
        alpha = -math.copysign(math.sqrt(float(tail @ tail)), tail[0])
        w = tail.copy()
        w[0] -= alpha
        ww = float(w @ w)
        if ww > 0.0:
            Jt = J[:, q:]
            Jt -= np.outer(Jt @ w, w * (2.0 / ww))
        R[:q, q] = dv[:q]
        R[q, q] = alpha
        return q + 1

    @staticmethod
    def _drop(J, R, q, l_idx):
        R[:, l_idx:q - 1] = R[:, l_idx + 1:q]
        R[:, q - 1] = 0.0
        for j in range(l_idx, q - 1):
            c, s, rr = _givens(R[j, j], R[j + 1, j])
            if s == 0.0:
                continue
            rj, rj1 = R[j, j:q - 1].copy(), R[j + 1, j:q - 1].copy()
            R[j, j:q - 1] = c * rj + s * rj1
            R[j + 1, j:q - 1] = -s * rj + c * rj1
            R[j + 1, j] = 0.0
            cj, cj1 = J[:, j].copy(), J[:, j + 1].copy()
            J[:, j] = c * cj + s * cj1
            J[:, j + 1] = -s * cj + c * cj1
        return q - 1


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    C, d = problem.inequalities()
    return DualActiveSetSolver(tol, max_iter).solve_arrays(problem.H, problem.f, C, d)
