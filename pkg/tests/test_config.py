import json
import math
from pathlib import Path

import pytest

from edsr.config import (
    ConfigError, ScenarioConfig, default_config, default_config_path, dump_config, json_schema,
    load_config_dict, parse_config,
)

REPO = Path(__file__).resolve().parents[1]


def test_round_trip(tmp_path):
    cfg = default_config()
    path = tmp_path / "c.json"
    path.write_text(dump_config(cfg))
    assert parse_config(path) == cfg


def test_shipped_files_agree():
    shipped = json.loads((REPO / "scenarios" / "lane_change.json").read_text())
    packaged = json.loads(default_config_path().read_text())
    assert shipped == packaged
    schema = json.loads((REPO / "scenarios" / "scenario.schema.json").read_text())
    assert schema == json_schema()


def test_shipped_values():
    cfg = default_config()
    assert cfg.qp.p[2] == 100
    assert cfg.qp.alpha_u == (1.0, 1.0)
    assert cfg.T_s == 0.05 and cfg.T_f == 15 and cfg.sigma == 0.3 and cfg.v_d == 30
    assert cfg.uncertainty.w == (0.2, 0.1, 0.1, 1.0)
    assert cfg.uncertainty.s["B"] == (0.01, 0.005, 0.01, 1.0)
    assert cfg.limits.u_min == -7 and cfg.limits.u_max == 3.3
    assert cfg.limits.phi_max == pytest.approx(math.pi / 4)
    assert (cfg.limits.v_min, cfg.limits.v_max) == (15, 35)
    assert cfg.initial_states["B"] == (20.0, 0.0, 0.0, 25.0)
    assert cfg.hdv.u_range == (-1.7, 1.7)
    assert cfg.hdv.phi_range == pytest.approx((-0.2 * math.pi, 0.2 * math.pi))


def test_v_min_zero_rejected():
    data = default_config().model_dump()
    data["limits"]["v_min"] = 0.0
    with pytest.raises(ConfigError) as exc:
        load_config_dict(data)
    assert any("v_min > 0" in p for p in exc.value.problems)


def test_missing_and_extra_keys_itemised(tmp_path):
    data = json.loads(dump_config(default_config()))
    del data["sigma"]
    del data["qp"]["p"]
    data["colour"] = "blue"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    text = "\n".join(exc.value.problems)
    assert "sigma" in text and "qp.p" in text and "colour" in text


def test_unreadable_and_malformed(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.json")
    bad = tmp_path / "x.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_invariants():
    base = default_config()
    for key, value in [("T_s", 0.0), ("sigma", -1.0), ("T_f", 0.01), ("attacks.B.eta", 20.0),
                       ("qp.p", (1, 1, -100, 1)), ("compensator.alpha", (0.0, 1.0))]:
        with pytest.raises(ConfigError):
            base.with_overrides(**{key: value})
    with pytest.raises(ConfigError):
        base.with_overrides(**{"qp.nonexistent": 1})


def test_overrides_are_copies():
    base = default_config()
    other = base.with_overrides(**{"attacks.A.kappa": 0.1})
    assert other.attacks.A.kappa == 0.1 and base.attacks.A.kappa == 0.2
    assert isinstance(other, ScenarioConfig)
