import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from edsr.resilient import (
    RHO_CAP, CompensatorState, adapt_step, compensation, resilient_input, speed_error,
)


def test_speed_error():
    assert speed_error(30, 30) == 0
    assert speed_error(25, 30) == -5
    assert speed_error(29, 30) == -1


def test_compensation_examples():
    assert compensation(0.0, 3.0, 1.0, 1.0) == 0.0
    assert compensation(1.0, 0.0, 0.0, 7.0) == pytest.approx(0.5)
    assert compensation(-2.0, math.log(3), 50.0, 1.0) == pytest.approx(-3.0, rel=1e-12)
    assert compensation(1.0, 1.0, 1.0, 1.0, enabled=False) == 0.0


def test_adapt_examples():
    assert adapt_step(0.4, 0.0, 5.0, 0.05) == 0.4
    assert adapt_step(0.0, 2.0, 1.0, 0.05) == pytest.approx(0.1)
    rho = 0.0
    for _ in range(20):
        rho = adapt_step(rho, 2.0, 1.0, 0.05)
    assert rho == pytest.approx(2.0)
    with pytest.raises(ValueError):
        adapt_step(0.0, 1.0, 1.0, 0.0)


def test_resilient_input():
    assert resilient_input(1.3, 0.0) == 1.3
    assert resilient_input(1.0, 4.0) == -3.0


@given(st.floats(-100, 100), st.floats(0, 20), st.floats(0, 20), st.floats(0.01, 10))
def test_bounded_and_sign_preserving(eps, rho, t, c):
    g = compensation(eps, rho, t, c)
    assert abs(g) <= math.exp(rho) * (1 + 1e-12)
    if eps != 0:
        assert np.sign(g) == np.sign(eps)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=50), st.floats(0.1, 10))
def test_rho_nondecreasing(errors, alpha):
    cs = CompensatorState(alpha_gain=alpha)
    prev = cs.rho_hat
    assert prev == 0.0
    for e in errors:
        cs.update(e, 0.05)
        assert cs.rho_hat >= prev
        prev = cs.rho_hat


def test_rho_capped():
    cs = CompensatorState(alpha_gain=1000.0)
    cs.update(100.0, 1.0)
    assert cs.rho_hat == RHO_CAP and cs.capped
    assert math.isfinite(cs.gamma_hat(1.0, 1.0))


def test_disabled_state_is_inert():
    cs = CompensatorState(enabled=False)
    cs.update(10.0, 1.0)
    assert cs.rho_hat == 0.0 and cs.gamma_hat(5.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        CompensatorState(alpha_gain=0.0)
