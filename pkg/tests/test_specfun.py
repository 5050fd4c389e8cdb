import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qkd3.specfun import (
    DIFF_SWITCH,
    X_MAX,
    bessel_i0,
    i0_minus_l0,
    pe_auth_norm_analytic,
    struve_l0,
)

LIMIT = 0.5 - 1.0 / math.pi


def mp_pe(t, n):
    with mp.workdps(400):
        x = mp.mpf(t) * mp.mpf(n) / 2
        d = mp.besseli(0, x) - mp.struvel(0, x)
        return float((mp.exp(x) * d - 1) / (mp.exp(2 * x) - 1))


def test_values_at_zero():
    assert bessel_i0(0).value == 1.0
    assert struve_l0(0).value == 0.0
    assert i0_minus_l0(0).value == 1.0


@pytest.mark.parametrize("x,i0,l0", [
    (0.5, 1.0634833707413236, 0.32724069939418),
    (1.0, 1.2660658777520082, 0.71024318593789),
    (10.0, 2815.716628466254, None),
])
def test_reference_values(x, i0, l0):
    assert bessel_i0(x).value == pytest.approx(i0, rel=1e-13)
    if l0 is not None:
        assert struve_l0(x).value == pytest.approx(l0, rel=1e-12)


def test_difference_reference_values():
    assert i0_minus_l0(1.0).value == pytest.approx(0.55582269181412, rel=1e-12)
    assert i0_minus_l0(50.0).value == pytest.approx(0.012737506927, rel=1e-10)


@pytest.mark.parametrize("x", [1e-6, 0.3, 3.0, 7.9, 8.1, 15.0, 15.1, 40.0, 120.0, 699.0])
def test_against_mpmath(x):
    with mp.workdps(400):
        i0 = float(mp.besseli(0, x))
        l0 = float(mp.struvel(0, x))
        d = float(mp.besseli(0, x) - mp.struvel(0, x))
    assert bessel_i0(x).value == pytest.approx(i0, rel=1e-12)
    assert struve_l0(x).value == pytest.approx(l0, rel=1e-12)
    assert i0_minus_l0(x).value == pytest.approx(d, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, X_MAX))
def test_error_estimates_are_honest(x):
    with mp.workdps(400):
        d = mp.besseli(0, x) - mp.struvel(0, x)
    r = i0_minus_l0(x)
    assert abs(r.value - float(d)) <= max(r.est_abs_error, 1e-300) * 10
    assert r.est_abs_error <= 1e-10
    i0 = bessel_i0(x)
    assert i0.est_abs_error <= 1e-10 * i0.value


def test_difference_large_x_behaviour():
    for x in (100.0, 300.0, 700.0):
        assert i0_minus_l0(x).value == pytest.approx(2 / (math.pi * x), rel=5e-4)


def test_branch_switch_is_continuous():
    lo, hi = i0_minus_l0(DIFF_SWITCH).value, i0_minus_l0(math.nextafter(DIFF_SWITCH, 9)).value
    assert abs(hi - lo) <= 1e-12 * lo


@pytest.mark.parametrize("bad", [-1e-9, 700.0001, math.inf, math.nan])
def test_domain(bad):
    for f in (bessel_i0, struve_l0, i0_minus_l0):
        with pytest.raises(ValueError):
            f(bad)


@pytest.mark.parametrize("t,n", [(1, 1e-6), (1, 0.2), (1, 1), (0.5, 4), (0.25, 8), (1, 16.0), (1, 40), (1, 200), (1, 700)])
def test_pe_against_mpmath(t, n):
    assert pe_auth_norm_analytic(t, n) == pytest.approx(mp_pe(t, n), rel=1e-12)


def test_pe_reference_value():
    assert pe_auth_norm_analytic(1.0, 1.0) == pytest.approx(0.12446092899609, abs=1e-12)


def test_pe_small_tn_limit():
    assert pe_auth_norm_analytic(1.0, 1e-4) == pytest.approx(LIMIT, abs=1e-4)
    assert pe_auth_norm_analytic(1.0, 1e-12) == pytest.approx(LIMIT, abs=1e-11)


@given(st.floats(1e-6, 460.0), st.floats(1.01, 1.5))
def test_pe_decreasing_in_tn(n, k):
    assert pe_auth_norm_analytic(1.0, n * k) <= pe_auth_norm_analytic(1.0, n)


@pytest.mark.parametrize("t,n", [(0.0, 1.0), (1.1, 1.0), (1.0, 0.0), (1.0, 701.0), (1.0, -2.0)])
def test_pe_domain(t, n):
    with pytest.raises(ValueError):
        pe_auth_norm_analytic(t, n)


def test_grid_shapes():
    tn = [0.01, 0.1, 0.5, 1, 2, 4, 8, 16, 64]
    pe = [pe_auth_norm_analytic(1.0, x) for x in tn]
    assert all(b < a for a, b in zip(pe, pe[1:]))
    xs = [0.1, 0.5, 1, 2, 5, 8, 10, 20, 50, 200, 700]
    d = [i0_minus_l0(x).value for x in xs]
    assert all(v > 0 for v in d) and all(b < a for a, b in zip(d, d[1:]))
    grid = np.linspace(0.0, 40.0, 81)
    log_i0 = np.log([bessel_i0(x).value for x in grid])
    assert np.all(log_i0 >= 0) and np.all(np.diff(log_i0, 2) > 0)
