"""Event trigger deciding when the QP is re-solved and the HDV model reset."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import CAVS, UncertaintyBounds

REASON_BITS = {
    "initial": 1,
    "hdv-error": 2,
    "hdv-error-rate": 4,
    "cav-drift": 8,
    "hdv-drift": 16,
}
DRIFT_REFERENCES = ("snapshot", "predicted", "coasting")
PROPAGATED = ("predicted", "coasting")


def reason_mask(reasons) -> int:
    return sum(REASON_BITS[r] for r in set(reasons))


@dataclass
class TriggerState:
    """Snapshot taken at the last event.

    ``cav_reference`` is what CAV states are compared against: the snapshot
    itself, or the snapshot carried forward by the nominal model, either
    under the held QP input (``predicted``) or with zero input
    (``coasting``); see :func:`advance_reference`.
    """

    bounds: UncertaintyBounds
    last_event_time: float = -np.inf
    cav_snapshot: dict = field(default_factory=dict)
    cav_reference: dict = field(default_factory=dict)
    xbar_snapshot: np.ndarray | None = None
    drift_reference: str = "snapshot"
    events: int = 0

    def __post_init__(self):
        if self.drift_reference not in DRIFT_REFERENCES:
            raise ValueError(f"drift_reference must be one of {DRIFT_REFERENCES}")


def should_trigger(e, e_dot, cav_states, xbar, trig: TriggerState) -> tuple[bool, set[str]]:
    """Evaluate every clause of the trigger rule; any satisfied clause fires."""
    if trig.events == 0:
        return True, {"initial"}
    b = trig.bounds
    reasons = set()
    if np.any(np.abs(e) >= b.w):
        reasons.add("hdv-error")
    if np.any(np.abs(e_dot) >= b.nu):
        reasons.add("hdv-error-rate")
    for name in CAVS:
        ref = trig.cav_reference.get(name)
        if ref is not None and np.any(np.abs(np.asarray(cav_states[name]) - ref) >= b.drift(name)):
            reasons.add("cav-drift")
            break
    if trig.drift_reference not in PROPAGATED and trig.xbar_snapshot is not None:
        if np.any(np.abs(np.asarray(xbar) - trig.xbar_snapshot) >= b.drift("H")):
            reasons.add("hdv-drift")
    return bool(reasons), reasons


def record_event(trig: TriggerState, t: float, cav_states, xbar) -> TriggerState:
    if t < trig.last_event_time:
        raise ValueError("event times must be nondecreasing")
    snap = {k: np.array(cav_states[k], dtype=float) for k in CAVS}
    trig.last_event_time = t
    trig.cav_snapshot = snap
    trig.cav_reference = {k: v.copy() for k, v in snap.items()}
    trig.xbar_snapshot = np.array(xbar, dtype=float)
    trig.events += 1
    return trig


def advance_reference(trig: TriggerState, step) -> None:
    """Move the CAV references one sample forward in the propagated modes.

    ``step(name, state)`` returns the nominal next state of CAV ``name``.
    The HDV estimate needs no such treatment: between events it evolves by
    its own model only, so its deviation from that prediction is zero.
    """
    if trig.drift_reference not in PROPAGATED:
        return
    for name, ref in trig.cav_reference.items():
        trig.cav_reference[name] = step(name, ref)
