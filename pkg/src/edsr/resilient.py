"""Adaptive compensation of acceleration attacks.

The compensator sees only the speed error ``v - v_d``.  Its gain
``exp(rho_hat)`` grows with the accumulated absolute error, so a
persistent deviation is met with an ever stronger correction.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

log = logging.getLogger(__name__)

RHO_CAP = 50.0


def speed_error(v: float, v_d: float) -> float:
    return v - v_d


def compensation(eps: float, rho_hat: float, t: float, c_decay: float, enabled: bool = True) -> float:
    if not enabled or eps == 0.0:
        return 0.0
    return eps / (abs(eps) + math.exp(-c_decay * t * t)) * math.exp(min(rho_hat, RHO_CAP))


def adapt_step(rho_hat: float, eps: float, alpha_gain: float, dt: float) -> float:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return rho_hat + alpha_gain * abs(eps) * dt


def resilient_input(u_s: float, gamma_hat: float) -> float:
    return u_s - gamma_hat


@dataclass
class CompensatorState:
    alpha_gain: float = 5.0
    c_decay: float = 1.0
    enabled: bool = True
    rho_hat: float = 0.0
    capped: bool = False

    def __post_init__(self):
        if self.alpha_gain <= 0 or self.c_decay <= 0:
            raise ValueError("compensator gains must be positive")

    def gamma_hat(self, eps: float, t: float) -> float:
        return compensation(eps, self.rho_hat, t, self.c_decay, self.enabled)

    def update(self, eps: float, dt: float) -> None:
        """Integrate the adaptation law over one sample."""
        if not self.enabled:
            return
        self.rho_hat = adapt_step(self.rho_hat, eps, self.alpha_gain, dt)
        if self.rho_hat > RHO_CAP:
            if not self.capped:
                log.warning("rho_hat reached cap %.1f; holding it there", RHO_CAP)
            self.rho_hat = RHO_CAP
            self.capped = True
