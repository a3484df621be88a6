import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgnf.errors import BudgetExceededError, DomainError
from kgnf.oscint import (CSV_FIELDS, SQRT8, OscIntegrand, bump_derivative_constants,
                         cone_dichotomy_scan, eval_I, freq_bump, scan_csv, scan_summary_json,
                         stationary_points, time_bump)


def _trapezoid_I(t, x, lam, sign, n=2001):
    """Independent oracle: tensor trapezoid over the compact (s, xi) supports.

    Both factors are C-infinity and vanish to all orders at the ends, so the
    trapezoid rule converges faster than any power.
    """
    s = np.linspace(0.5 * lam, min(2.0 * lam, t), n)
    xi = np.linspace(SQRT8 - 1.0, SQRT8 + 1.0, n)
    ds, dxi = s[1] - s[0], xi[1] - xi[0]
    br = np.sqrt(1 + xi**2)
    phase = np.exp(1j * (sign * (t - s)[:, None] * br[None, :]
                         + 3 * s[:, None] + x * xi[None, :]))
    return np.sum(phase * time_bump(s, lam)[:, None] * freq_bump(xi)[None, :]) * ds * dxi


@pytest.mark.parametrize("t,x,sign", [(20.0, 3.0, 1), (20.0, -5.0, 1), (17.0, 2.0, -1),
                                      (30.0, 32.0, 1)])
def test_eval_matches_trapezoid_oracle(t, x, sign):
    lam = 4.0
    got = eval_I(t, x, OscIntegrand(lam, sign), tol=1e-10)
    expected = _trapezoid_I(t, x, lam, sign)
    assert abs(got.value - expected) < 1e-8
    assert got.est_error <= 1e-10


def test_eval_before_the_source_is_zero():
    res = eval_I([2.5, 3.0], [0.0, 1.0], OscIntegrand(8.0))
    np.testing.assert_array_equal(res.value, 0.0)


def test_eval_broadcasts_points():
    res = eval_I(np.array([20.0, 24.0])[:, None], np.array([0.0, 1.0, 2.0])[None, :],
                 OscIntegrand(4.0))
    assert res.value.shape == (2, 3)
    single = eval_I(24.0, 1.0, OscIntegrand(4.0))
    assert res.value[1, 1] == pytest.approx(single.value, abs=1e-9)


def test_budget_is_enforced():
    with pytest.raises(BudgetExceededError) as info:
        eval_I(20.0, 1.0, OscIntegrand(4.0), tol=1e-30, budget=1e4)
    assert info.value.best.value.shape == ()


def test_domain_errors():
    with pytest.raises(DomainError):
        OscIntegrand(2.0)
    with pytest.raises(DomainError):
        OscIntegrand(8.0, sign=0)
    with pytest.raises(DomainError):
        OscIntegrand(8.0, phi_support=(3.0, 2.0))
    with pytest.raises(DomainError):
        eval_I(1.0, 0.0, OscIntegrand(8.0))
    with pytest.raises(DomainError):
        stationary_points(2.0, 3.0)


def test_custom_amplitude_is_used():
    flat = OscIntegrand(4.0, phi=lambda xi: 2.0 * freq_bump(xi))
    a = eval_I(20.0, 1.0, flat).value
    b = eval_I(20.0, 1.0, OscIntegrand(4.0)).value
    assert a == pytest.approx(2 * b, rel=1e-9)
    assert flat.to_dict()["phi"] == "custom"


# --- cutoffs ----------------------------------------------------------------------------------

@given(st.floats(3.0, 500.0))
def test_time_bump_plateau_and_support(lam):
    s = np.linspace(0.75 * lam, 1.5 * lam, 11)
    np.testing.assert_allclose(time_bump(s, lam), 1.0)
    assert time_bump(0.5 * lam, lam) == 0.0
    assert time_bump(2.0 * lam, lam) == 0.0


def test_freq_bump_center_and_support():
    assert freq_bump(SQRT8) == pytest.approx(1.0)
    assert freq_bump(SQRT8 + 1.0) == 0.0
    assert freq_bump(0.0) == 0.0


def test_bump_derivative_constants_are_scale_free():
    a = bump_derivative_constants(32.0)
    b = bump_derivative_constants(128.0)
    for n in (1, 2, 3):
        assert a[n] == pytest.approx(b[n], rel=1e-3)


@given(st.floats(1.0, 100.0), st.floats(-0.99, 0.99))
def test_stationary_points(t, ratio):
    xp, xm, sp, sm = stationary_points(t, ratio * t)
    assert (xp, xm) == (SQRT8, -SQRT8)
    assert sp - sm == pytest.approx(6 * ratio * t / SQRT8)


# --- dichotomy scan -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_scan():
    ts = 8.0 * np.array([1, 2, 4, 8, 12, 16, 24, 32])
    return cone_dichotomy_scan(OscIntegrand(8.0), ts, [-0.9, 0.0, 0.5, 0.9, 1.0, 1.2, -1.2],
                               eps=0.05)


def test_scan_shows_the_dichotomy(small_scan):
    assert small_scan["minus_to_plus"] <= 0.05
    assert small_scan["outside_points"] >= 3
    assert small_scan["outside_exponent"] < -2.5


def test_scan_outputs(small_scan):
    lines = scan_csv(small_scan).splitlines()
    assert lines[0].split(",") == CSV_FIELDS
    assert len(lines) == 1 + len(small_scan["rows"])
    assert '"rows"' not in scan_summary_json(small_scan)
    inside = [r for r in small_scan["rows"] if abs(r["x_over_t"]) <= 0.95]
    assert {r["sign"] for r in inside} == {1, -1}
    assert all(r["sign"] == 1 for r in small_scan["rows"] if abs(r["x_over_t"]) > 0.95)
    assert math.isfinite(small_scan["inside_max_plus"])
