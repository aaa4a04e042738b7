"""Scenario description: JSON document <-> validated pydantic model.

The defaults reproduce the two-lane merge used throughout the package; the
shipped ``lane_change.json`` spells every value out explicitly.
"""
from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .attacks import AttackParams
from .constraints import VEHICLES, ConstraintContext, UncertaintyBounds, default_barriers
from .dynamics import HdvDisturbanceRanges, InputLimits, VehicleParams

Vec4 = tuple[float, float, float, float]
MODES = ("edsr", "baseline", "nominal")


class ConfigError(ValueError):
    """Scenario file could not be parsed or failed validation."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {p}" for p in problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LimitsModel(_Strict):
    u_min: float = -7.0
    u_max: float = 3.3
    phi_min: float = -math.pi / 4
    phi_max: float = math.pi / 4
    v_min: float = 15.0
    v_max: float = 35.0

    @model_validator(mode="after")
    def _ordered(self):
        if not self.u_min < self.u_max:
            raise ValueError("u_min < u_max")
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min < phi_max")
        if not self.v_min < self.v_max:
            raise ValueError("v_min < v_max")
        if not self.v_min > 0:
            raise ValueError("v_min > 0")
        return self


class VehicleModel(_Strict):
    wheelbase: float = Field(2.7, gt=0)
    a: float = Field(0.6, gt=0)
    b: float = Field(0.1, gt=0)


class UncertaintyModel(_Strict):
    w: Vec4 = (0.2, 0.1, 0.1, 1.0)
    nu: Vec4 = (0.5, 0.2, 0.1, 1.0)
    s: dict[str, Vec4] = Field(default_factory=lambda: {k: (0.01, 0.005, 0.01, 1.0) for k in VEHICLES})
    # also robustify HDV pair rows over the planar error-rate bounds nu_x, nu_y
    robust_rate: bool = True

    @field_validator("w", "nu")
    @classmethod
    def _nonneg(cls, v):
        if min(v) < 0:
            raise ValueError("bounds must be >= 0")
        return v

    @field_validator("s")
    @classmethod
    def _drifts(cls, v):
        if set(v) != set(VEHICLES):
            raise ValueError(f"s needs exactly the vehicles {list(VEHICLES)}")
        if any(min(x) < 0 for x in v.values()):
            raise ValueError("drift bounds must be >= 0")
        return v


class QpModel(_Strict):
    alpha_u: tuple[float, float] = (1.0, 1.0)
    p: Vec4 = (1.0, 1.0, 100.0, 1.0)
    eps_phi: float = Field(0.01, gt=0)
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(200, ge=1)
    fallback: Literal["hold", "brake"] = "hold"

    @field_validator("alpha_u", "p")
    @classmethod
    def _weights(cls, v):
        if min(v) <= 0:
            raise ValueError("QP weights must be > 0")
        return v


class ClassKModel(_Strict):
    pair: float = Field(1.0, gt=0)
    lateral: float = Field(1.0, gt=0)
    speed: float = Field(1.0, gt=0)


class ClfModel(_Strict):
    c3: float = Field(1.0, gt=0)


class AttackModel(_Strict):
    eta: float
    kappa: float = 0.2
    carrier: Literal["sin", "cos", "none"] = "sin"
    carrier_freq: float = 5.0
    enabled: bool = True
    start_time: float = Field(0.0, ge=0)

    def params(self) -> AttackParams:
        return AttackParams(**self.model_dump())


class AttacksModel(_Strict):
    A: AttackModel = AttackModel(eta=2.0, carrier="sin")
    B: AttackModel = AttackModel(eta=5.0, carrier="cos")
    eta_bar: float = Field(10.0, gt=0)
    kappa_bar: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _envelope(self):
        for name in ("A", "B"):
            self.__getattribute__(name).params().check_envelope(self.eta_bar, self.kappa_bar)
        return self


class CompensatorModel(_Strict):
    alpha: tuple[float, float] = (5.0, 5.0)
    c: tuple[float, float] = (1.0, 1.0)

    @field_validator("alpha", "c")
    @classmethod
    def _pos(cls, v):
        if min(v) <= 0:
            raise ValueError("compensator gains must be > 0")
        return v


class HdvModel(_Strict):
    policy: Literal["uniform", "lane_keeping"] = "lane_keeping"
    u_range: tuple[float, float] = (-1.7, 1.7)
    phi_range: tuple[float, float] = (-0.2 * math.pi, 0.2 * math.pi)
    disturbance: Vec4 = (0.7, 0.5, 0.5, 0.7)
    heading_model: Literal["as_written", "zero_base"] = "zero_base"
    # error rate the trigger sees on the first sample after a reset:
    # "zero" or the difference against the post-reset e = 0
    rate_after_reset: Literal["zero", "difference"] = "zero"
    # rate folded into h at an event: the trigger's rate or the plain one-step difference
    adapt_rate: Literal["trigger", "step"] = "step"
    # lane_keeping only: phi = -k_y (y - y0) - k_theta theta + steer_noise * U(phi_range)
    k_y: float = Field(0.05, ge=0)
    k_theta: float = Field(1.0, ge=0)
    steer_noise: float = Field(0.05, ge=0, le=1)

    @model_validator(mode="after")
    def _ranges(self):
        if not self.u_range[0] < self.u_range[1] or not self.phi_range[0] < self.phi_range[1]:
            raise ValueError("HDV input ranges need min < max")
        if min(self.disturbance) < 0:
            raise ValueError("disturbance half-widths must be >= 0")
        return self


class ObjectiveModel(_Strict):
    """Weights of the original optimal-control objective; recorded, not used."""

    alpha_u: float = Field(1.0, ge=0)
    alpha_l: float = Field(1.0, ge=0)
    alpha_v: float = Field(1.0, ge=0)


class ScenarioConfig(_Strict):
    initial_states: dict[str, Vec4] = Field(default_factory=lambda: {
        "A": (50.0, 4.0, 0.0, 29.0),
        "B": (20.0, 0.0, 0.0, 25.0),
        "H": (10.0, 4.0, 0.0, 28.0),
        "U": (60.0, 0.0, 0.0, 20.0),
    })
    v_d: float = 30.0
    v_U: float = 20.0
    lane_width: float = Field(4.0, gt=0)
    T_s: float = Field(0.05, gt=0)
    T_f: float = Field(15.0, gt=0)
    sigma: float = Field(0.3, gt=0)
    heading_gate: float = Field(0.05, gt=0)
    substeps: int = Field(1, ge=1)
    limits: LimitsModel = LimitsModel()
    vehicles: dict[str, VehicleModel] = Field(default_factory=lambda: {k: VehicleModel() for k in VEHICLES})
    uncertainty: UncertaintyModel = UncertaintyModel()
    qp: QpModel = QpModel()
    class_k: ClassKModel = ClassKModel()
    clf: ClfModel = ClfModel()
    robust_mode: Literal["corners", "collapsed"] = "corners"
    drift_reference: Literal["snapshot", "predicted", "coasting"] = "predicted"
    attacks: AttacksModel = AttacksModel()
    compensator: CompensatorModel = CompensatorModel()
    hdv: HdvModel = HdvModel()
    mode: Literal["edsr", "baseline", "nominal"] = "edsr"
    saturate_corrupted_input: bool = False
    uub_bound: float = Field(6.0, gt=0)
    objective: ObjectiveModel = ObjectiveModel()

    @field_validator("initial_states")
    @classmethod
    def _states(cls, v):
        if set(v) != set(VEHICLES):
            raise ValueError(f"initial_states needs exactly {list(VEHICLES)}")
        for name, s in v.items():
            if not all(math.isfinite(x) for x in s):
                raise ValueError(f"initial state of {name} must be finite")
        return v

    @field_validator("vehicles")
    @classmethod
    def _vehicles(cls, v):
        if set(v) != set(VEHICLES):
            raise ValueError(f"vehicles needs exactly {list(VEHICLES)}")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        if not self.T_f > self.T_s:
            raise ValueError("T_f > T_s")
        lim = self.limits
        for name in ("A", "B"):
            v = self.initial_states[name][3]
            if not lim.v_min <= v <= lim.v_max:
                raise ValueError(f"initial speed of {name} outside [v_min, v_max]")
        return self

    # --- runtime views -------------------------------------------------------

    def input_limits(self) -> InputLimits:
        return InputLimits(**self.limits.model_dump())

    def vehicle_params(self) -> dict[str, VehicleParams]:
        return {k: VehicleParams(**m.model_dump()) for k, m in self.vehicles.items()}

    def bounds(self) -> UncertaintyBounds:
        u = self.uncertainty
        return UncertaintyBounds(np.array(u.w), np.array(u.nu),
                                 {k: np.array(v) for k, v in u.s.items()})

    def context(self) -> ConstraintContext:
        return ConstraintContext(self.lane_width, self.input_limits(), self.vehicle_params(),
                                 self.hdv.heading_model, self.uncertainty.robust_rate)

    def barriers(self):
        return default_barriers(self.class_k.model_dump())

    def disturbance_ranges(self) -> HdvDisturbanceRanges:
        return HdvDisturbanceRanges(*self.hdv.disturbance)

    def with_overrides(self, **changes) -> "ScenarioConfig":
        """Copy with top-level or dotted (``"attacks.A.kappa"``) fields replaced."""
        data = self.model_dump()
        for key, value in changes.items():
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError([f"unknown field {key!r}"])
            node[parts[-1]] = value
        return load_config_dict(data)


def _format_errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def _missing_keys(model: type[BaseModel], data, prefix="") -> list[str]:
    """Fields a scenario file must spell out but doesn't."""
    if not isinstance(data, dict):
        return []
    out = []
    for name, info in model.model_fields.items():
        if name not in data:
            out.append(f"{prefix}{name}: field required")
            continue
        sub = info.annotation
        if isinstance(sub, type) and issubclass(sub, _Strict):
            out.extend(_missing_keys(sub, data[name], f"{prefix}{name}."))
    return out


def load_config_dict(data: dict, require_all: bool = False) -> ScenarioConfig:
    """Validate a config mapping; ``require_all`` rejects omitted keys too."""
    missing = _missing_keys(ScenarioConfig, data) if require_all else []
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(missing + _format_errors(exc)) from None
    if missing:
        raise ConfigError(missing)
    return cfg




def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    return load_config_dict(data, require_all=True)


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=2) + "\n"


def default_config_path() -> Path:
    return Path(str(resources.files("edsr") / "scenarios" / "lane_change.json"))


def default_config() -> ScenarioConfig:
    return parse_config(default_config_path())


def json_schema() -> dict:
    return ScenarioConfig.model_json_schema()
