"""Vehicle models, input saturation, attack injection and Euler integration.

State vectors are ``[x, y, theta, v]`` and inputs are ``[u, phi]``
(acceleration, steering).  Everything here is a pure function over small
numpy arrays so the simulation loop can call it at every sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

X, Y, THETA, V = 0, 1, 2, 3


class NonFiniteStateError(ArithmeticError):
    """Raised when a state, input or derivative stops being finite."""


class VehicleState(NamedTuple):
    x: float
    y: float
    theta: float
    v: float


class ControlInput(NamedTuple):
    u: float
    phi: float


@dataclass(frozen=True)
class InputLimits:
    u_min: float = -7.0
    u_max: float = 3.3
    phi_min: float = -math.pi / 4
    phi_max: float = math.pi / 4
    v_min: float = 15.0
    v_max: float = 35.0

    def __post_init__(self):
        if not (self.u_min < self.u_max and self.phi_min < self.phi_max and self.v_min < self.v_max):
            raise ValueError(f"input limits need min < max in every pair: {self}")
        if self.v_min <= 0:
            raise ValueError("v_min > 0 is required")


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    a: float = 0.6  # longitudinal safety factor (s)
    b: float = 0.1  # lateral safety factor (s)

    def __post_init__(self):
        if self.wheelbase <= 0 or self.a <= 0 or self.b <= 0:
            raise ValueError(f"vehicle parameters must be positive: {self}")


@dataclass(frozen=True)
class HdvDisturbanceRanges:
    eps1: float = 0.7
    eps2: float = 0.5
    eps3: float = 0.5
    eps4: float = 0.7

    def __post_init__(self):
        if min(self.half_widths) < 0:
            raise ValueError("disturbance half-widths must be >= 0")

    @property
    def half_widths(self) -> np.ndarray:
        return np.array([self.eps1, self.eps2, self.eps3, self.eps4])


def _check_finite(name, arr):
    # a sum is non-finite iff some entry is (inf - inf gives nan)
    if not math.isfinite(sum(np.ravel(arr).tolist())):
        raise NonFiniteStateError(f"{name} is not finite: {arr}")


def cav_derivative(state, inp, params: VehicleParams) -> np.ndarray:
    """Right-hand side f(x) + g(x) xi of the CAV model.

    Steering enters the position rows directly, as in the small-angle model
    the controller is designed for.
    """
    s = np.asarray(state, dtype=float)
    xi = np.asarray(inp, dtype=float)
    _check_finite("state", s)
    _check_finite("input", xi)
    _, _, th, v = s
    u, phi = xi
    c, sn = math.cos(th), math.sin(th)
    return np.array([
        v * c - v * sn * phi,
        v * sn + v * c * phi,
        v / params.wheelbase * phi,
        u,
    ])


def hdv_true_derivative(state, inp, disturbance, params: VehicleParams) -> np.ndarray:
    """CAV-form model plus an additive disturbance on every state rate."""
    d = np.asarray(disturbance, dtype=float)
    _check_finite("disturbance", d)
    return cav_derivative(state, inp, params) + d


def sample_disturbance(rng: np.random.Generator, ranges: HdvDisturbanceRanges) -> np.ndarray:
    hw = ranges.half_widths
    return rng.uniform(-hw, hw)


def apply_attack(u_commanded: float, gamma: float) -> float:
    """Corrupted acceleration ``u + gamma``; the attack is never saturated."""
    return u_commanded + gamma


def clamp_input(inp, limits: InputLimits) -> ControlInput:
    u, phi = inp
    return ControlInput(
        min(max(u, limits.u_min), limits.u_max),
        min(max(phi, limits.phi_min), limits.phi_max),
    )


def integrate_step(
    state,
    derivative: Callable[[np.ndarray], np.ndarray],
    dt: float,
    substeps: int = 1,
) -> np.ndarray:
    """Forward-Euler over ``dt`` split into ``substeps`` equal steps.

    ``derivative`` maps a state to its rate; inputs are whatever the closure
    captured, i.e. held constant over the whole step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    s = np.array(state, dtype=float)
    h = dt / substeps
    for _ in range(substeps):
        s = s + h * derivative(s)
    _check_finite("integrated state", s)
    return s
