"""Exponentially unbounded false-data-injection signals on acceleration."""
from __future__ import annotations

import math
from dataclasses import dataclass

CARRIERS = ("sin", "cos", "none")


@dataclass(frozen=True)
class AttackParams:
    eta: float = 2.0
    kappa: float = 0.2
    carrier: str = "sin"
    carrier_freq: float = 5.0
    enabled: bool = True
    start_time: float = 0.0

    def __post_init__(self):
        if self.carrier not in CARRIERS:
            raise ValueError(f"carrier must be one of {CARRIERS}, got {self.carrier!r}")

    def check_envelope(self, eta_bar: float, kappa_bar: float) -> None:
        """Reject amplitudes or rates outside the admissible attack class."""
        if eta_bar <= 0 or kappa_bar <= 0:
            raise ValueError("eta_bar and kappa_bar must be positive")
        if abs(self.eta) > eta_bar:
            raise ValueError(f"|eta|={abs(self.eta)} exceeds eta_bar={eta_bar}")
        if abs(self.kappa) > kappa_bar:
            raise ValueError(f"|kappa|={abs(self.kappa)} exceeds kappa_bar={kappa_bar}")


def attack_a() -> AttackParams:
    return AttackParams(eta=2.0, carrier="sin")


def attack_b() -> AttackParams:
    return AttackParams(eta=5.0, carrier="cos")


def eu_fdi_signal(t: float, params: AttackParams) -> float:
    if not params.enabled or t < params.start_time:
        return 0.0
    if params.carrier == "sin":
        wave = math.sin(params.carrier_freq * t)
    elif params.carrier == "cos":
        wave = math.cos(params.carrier_freq * t)
    else:
        wave = 1.0
    return params.eta * math.exp(params.kappa * t) * wave


def envelope(t: float, eta_bar: float, kappa_bar: float) -> float:
    return eta_bar * math.exp(kappa_bar * t)
