import math

import mpmath
import pytest
from hypothesis import given, strategies as st

from edsr.attacks import AttackParams, attack_a, attack_b, envelope, eu_fdi_signal


def test_values_at_zero():
    assert eu_fdi_signal(0.0, attack_a()) == 0.0
    assert eu_fdi_signal(0.0, attack_b()) == 5.0


def test_value_against_high_precision_oracle():
    mpmath.mp.dps = 30
    ref = 2 * mpmath.e ** mpmath.mpf("0.2") * mpmath.sin(5)
    assert eu_fdi_signal(1.0, attack_a()) == pytest.approx(float(ref), rel=1e-14)
    assert float(ref) == pytest.approx(-2.3425, abs=1e-4)


def test_start_time_and_disable():
    p = AttackParams(eta=3.0, carrier="none", start_time=2.0)
    assert eu_fdi_signal(1.9, p) == 0.0
    assert eu_fdi_signal(2.0, p) == pytest.approx(3.0 * math.exp(0.4))


@given(st.floats(0, 15), st.floats(-10, 10), st.floats(-1, 1), st.sampled_from(["sin", "cos", "none"]))
def test_within_envelope(t, eta, kappa, carrier):
    p = AttackParams(eta=eta, kappa=kappa, carrier=carrier)
    p.check_envelope(10.0, 1.0)
    assert abs(eu_fdi_signal(t, p)) <= envelope(t, 10.0, 1.0) * (1 + 1e-12)


@given(st.floats(0, 100))
def test_disabled_is_zero_and_stateless(t):
    assert eu_fdi_signal(t, AttackParams(enabled=False)) == 0.0
    assert eu_fdi_signal(t, attack_b()) == eu_fdi_signal(t, attack_b())


def test_envelope_violation_rejected():
    with pytest.raises(ValueError):
        AttackParams(eta=11.0).check_envelope(10.0, 1.0)
    with pytest.raises(ValueError):
        AttackParams(kappa=1.5).check_envelope(10.0, 1.0)
    with pytest.raises(ValueError):
        AttackParams(carrier="square")
