"""Adaptive model of the human-driven vehicle.

The controller never sees the HDV's true dynamics.  It integrates a model
whose drift is corrected by four additive terms ``h``; at each event the
model state is snapped to the measurement and ``h`` absorbs the measured
error rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import VehicleParams

HEADING_MODELS = ("as_written", "zero_base")


def _zeros():
    return np.zeros(4)


@dataclass
class HdvEstimate:
    xbar: np.ndarray
    h: np.ndarray = field(default_factory=_zeros)
    e: np.ndarray = field(default_factory=_zeros)
    e_dot: np.ndarray = field(default_factory=_zeros)
    # plain backward difference, also on the first sample after a reset
    e_dot_step: np.ndarray = field(default_factory=_zeros)
    # True until the first error sample after a reset has been taken.
    fresh: bool = True

    @classmethod
    def from_state(cls, state) -> "HdvEstimate":
        return cls(xbar=np.array(state, dtype=float))

    def copy(self) -> "HdvEstimate":
        return replace(self, xbar=self.xbar.copy(), h=self.h.copy(),
                       e=self.e.copy(), e_dot=self.e_dot.copy(), e_dot_step=self.e_dot_step.copy())


def estimate_derivative(est: HdvEstimate, params: VehicleParams,
                        heading_model: str = "as_written") -> np.ndarray:
    _, _, th, v = est.xbar
    base_heading = v / params.wheelbase if heading_model == "as_written" else 0.0
    return np.array([
        v * math.cos(th),
        v * math.sin(th),
        base_heading,
        0.0,
    ]) + est.h


def measure_error(true_state, est: HdvEstimate) -> np.ndarray:
    return np.asarray(true_state, dtype=float) - est.xbar


def error_rate(e_now, e_prev, dt: float, after_reset: bool = False) -> np.ndarray:
    """Backward difference of the measured error.

    The first sample after a reset reports zero rate: the difference would
    straddle the discontinuity introduced by snapping the estimate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if after_reset:
        return np.zeros(4)
    return (np.asarray(e_now, dtype=float) - np.asarray(e_prev, dtype=float)) / dt


def observe(est: HdvEstimate, true_state, dt: float, zero_after_reset: bool = True) -> HdvEstimate:
    """Store a fresh error sample and its rate into ``est`` (in place).

    With ``zero_after_reset=False`` the first sample after a reset differences
    against the post-reset error, which is exactly zero.
    """
    e_now = measure_error(true_state, est)
    est.e_dot_step = error_rate(e_now, est.e, dt)
    est.e_dot = np.zeros(4) if est.fresh and zero_after_reset else est.e_dot_step.copy()
    est.e = e_now
    est.fresh = False
    return est


def reset_and_adapt(est: HdvEstimate, true_state, e_dot_at_event) -> HdvEstimate:
    return HdvEstimate(
        xbar=np.array(true_state, dtype=float),
        h=est.h + np.asarray(e_dot_at_event, dtype=float),
        e=np.zeros(4),
        e_dot=np.zeros(4),
        e_dot_step=np.zeros(4),
        fresh=True,
    )


def propagate(est: HdvEstimate, params: VehicleParams, dt: float, substeps: int = 1,
              heading_model: str = "as_written") -> HdvEstimate:
    """Advance ``xbar`` by Euler on the adaptive model (in place)."""
    step = dt / substeps
    for _ in range(substeps):
        est.xbar = est.xbar + step * estimate_derivative(est, params, heading_model)
    return est
