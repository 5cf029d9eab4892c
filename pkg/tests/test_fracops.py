import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fracoc.errors import DomainError, UsageError
from fracoc.fracops import (
    GridFn,
    Order,
    caputo_left,
    caputo_left_on_grid,
    caputo_right,
    gamma,
    integration_by_parts_residual,
    rl_derivative_left,
    rl_derivative_right,
    rl_integral_left,
    rl_integral_right,
)

# Closed forms of the power rules, evaluated independently with mpmath.
INV_GAMMA_1_5 = 1.1283791670955126  # 1/Gamma(1.5)
GAMMA2_OVER_GAMMA2_5 = 0.7522527780636751  # Gamma(2)/Gamma(2.5)
GAMMA3_OVER_GAMMA2_5 = 1.5045055561273502  # Gamma(3)/Gamma(2.5)
INV_GAMMA_0_5 = 0.5641895835477563  # 1/Gamma(0.5)


class TestGamma:
    def test_known_values(self):
        assert gamma(1.0) == pytest.approx(1.0, rel=1e-14)
        assert gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)
        assert gamma(3.5) == pytest.approx(15 * math.sqrt(math.pi) / 8, rel=1e-13)

    @pytest.mark.parametrize("z", [1e-3, 0.1, 0.7, 1.3, 2.5, 7.25, 19.9, 33.3, 50.0])
    def test_matches_math_gamma(self, z):
        assert gamma(z) == pytest.approx(math.gamma(z), rel=1e-12)

    @pytest.mark.parametrize("z", [0.0, -0.5, -3.0])
    def test_rejects_non_positive(self, z):
        with pytest.raises(DomainError):
            gamma(z)


class TestOrder:
    def test_fields(self):
        o = Order(0.3)
        assert o.n == 1
        assert o.complement().alpha == pytest.approx(0.7)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_range(self, alpha):
        with pytest.raises(DomainError):
            Order(alpha)


class TestGridFn:
    def test_validation(self):
        with pytest.raises(UsageError):
            GridFn([0.0, 0.0, 1.0], [1, 2, 3])
        with pytest.raises(UsageError):
            GridFn([0.0, 1.0], [1.0])
        with pytest.raises(UsageError):
            GridFn([0.0], [1.0])

    def test_derivative_exact_for_quadratics(self):
        g = np.sort(np.random.default_rng(1).uniform(0, 1, 40))
        f = GridFn.sample(lambda t: 3 * t**2 - t, g)
        assert_allclose(f.derivative.values, 6 * g - 1, atol=1e-9)

    def test_interpolation(self):
        f = GridFn([0.0, 1.0, 2.0], [0.0, 2.0, 0.0])
        assert f(0.5) == pytest.approx(1.0)
        assert f.start == 0.0 and f.end == 2.0 and len(f) == 3


class TestPowerRules:
    def test_left_integral(self):
        assert rl_integral_left(lambda t: np.ones_like(t), 0.5, 0.0, 1.0) == pytest.approx(INV_GAMMA_1_5, rel=1e-6)
        assert rl_integral_left(lambda t: t, 0.5, 0.0, 1.0) == pytest.approx(GAMMA2_OVER_GAMMA2_5, rel=1e-6)

    def test_right_integral(self):
        assert rl_integral_right(lambda t: np.ones_like(t), 0.5, 1.0, 0.0) == pytest.approx(INV_GAMMA_1_5, rel=1e-6)
        assert rl_integral_right(lambda t: 1 - t, 0.5, 1.0, 0.0) == pytest.approx(GAMMA2_OVER_GAMMA2_5, rel=1e-6)

    def test_right_integral_vanishes_at_endpoint(self):
        x = lambda t: np.cos(t)
        vals = [abs(rl_integral_right(x, 0.5, 1.0, 1.0 - d)) for d in (1e-2, 1e-4, 1e-6)]
        assert vals[0] > vals[1] > vals[2]
        assert vals[2] < 1e-2

    def test_left_derivative(self):
        assert rl_derivative_left(lambda t: t**2, 0.5, 0.0, 1.0) == pytest.approx(GAMMA3_OVER_GAMMA2_5, rel=1e-4)
        assert rl_derivative_left(lambda t: np.ones_like(t), 0.5, 0.0, 1.0) == pytest.approx(INV_GAMMA_0_5, rel=1e-6)

    def test_right_derivative(self):
        val = rl_derivative_right(lambda t: (1 - t) ** 2, 0.5, 1.0, 0.0)
        assert val == pytest.approx(GAMMA3_OVER_GAMMA2_5, rel=1e-4)

    def test_caputo(self):
        assert caputo_left(lambda t: t**2, 0.5, 0.0, 1.0) == pytest.approx(2 / gamma(2.5), rel=1e-4)
        x = lambda t: 2 * t**2.5 / gamma(3.5)
        assert caputo_left(x, 0.5, 0.0, 0.7) == pytest.approx(0.49, rel=1e-4)

    @pytest.mark.parametrize("c", [1.0, -2.5])
    def test_caputo_of_constant(self, c):
        x = lambda t: np.full_like(t, c)
        for t in (0.2, 0.9):
            assert caputo_left(x, 0.4, 0.0, t) == pytest.approx(0.0, abs=1e-12)
            assert caputo_right(x, 0.4, 1.0, t) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("beta", [0, 1, 2, 3])
    @pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
    def test_power_family(self, alpha, beta):
        x = lambda t: t**beta
        for t in (0.5, 1.0):
            c = gamma(beta + 1)
            assert rl_integral_left(x, alpha, 0.0, t) == pytest.approx(
                c / gamma(beta + 1 + alpha) * t ** (beta + alpha), rel=1e-4)
            assert rl_derivative_left(x, alpha, 0.0, t) == pytest.approx(
                c / gamma(beta + 1 - alpha) * t ** (beta - alpha), rel=1e-4)

    def test_composition(self):
        # d/dt I^alpha x equals the (1 - alpha) derivative
        x = lambda t: np.exp(t)
        h = 1e-4
        d = (rl_integral_left(x, 0.5, 0.0, 0.6 + h) - rl_integral_left(x, 0.5, 0.0, 0.6 - h)) / (2 * h)
        assert d == pytest.approx(rl_derivative_left(x, 0.5, 0.0, 0.6), abs=1e-4)


class TestGridInputs:
    def test_grid_matches_callable(self):
        g = np.linspace(0, 1, 4001)
        x = GridFn.sample(lambda t: t**2, g)
        assert caputo_left(x, 0.5, 0.0, 1.0) == pytest.approx(2 / gamma(2.5), rel=1e-3)

    def test_on_grid_zero_at_start(self):
        x = GridFn.sample(lambda t: t**2, np.linspace(0, 1, 65))
        out = caputo_left_on_grid(x, 0.5)
        assert out[0] == 0.0
        assert out[-1] == pytest.approx(2 / gamma(2.5), rel=1e-2)

    def test_range_not_covered(self):
        x = GridFn.sample(lambda t: t, np.linspace(0.5, 1, 10))
        with pytest.raises(DomainError):
            caputo_left(x, 0.5, 0.0, 1.0)


class TestDomain:
    def test_left_needs_t_after_a(self):
        with pytest.raises(DomainError):
            rl_integral_left(np.sin, 0.5, 1.0, 1.0)
        with pytest.raises(DomainError):
            rl_derivative_left(np.sin, 0.5, 1.0, 0.5)

    def test_right_needs_t_before_b(self):
        with pytest.raises(DomainError):
            rl_integral_right(np.sin, 0.5, 1.0, 1.0)
        with pytest.raises(DomainError):
            rl_derivative_right(np.sin, 0.5, 1.0, 1.5)


def test_caputo_equals_rl_when_start_vanishes():
    x = lambda t: np.sin(t)
    assert caputo_left(x, 0.6, 0.0, 0.8) == pytest.approx(rl_derivative_left(x, 0.6, 0.0, 0.8), rel=1e-8)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_integration_by_parts(alpha):
    r = integration_by_parts_residual(lambda t: t**2, lambda t: (1 - t) ** 2, alpha, 0.0, 1.0)
    assert r <= 1e-3


def test_integration_by_parts_nonzero_start():
    r = integration_by_parts_residual(lambda t: 1 + t, lambda t: 2 - t**2, 0.5, 0.0, 1.0)
    assert r <= 1e-3


coef = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(p=coef, q=coef, alpha=st.floats(0.05, 0.95), t=st.floats(0.1, 0.9))
def test_linearity(p, q, alpha, t):
    f, df = (lambda s: s**2 + 1), (lambda s: 2 * s)
    g, dg = (lambda s: np.cos(3 * s)), (lambda s: -3 * np.sin(3 * s))
    combo = lambda s: p * f(s) + q * g(s)
    dcombo = lambda s: p * df(s) + q * dg(s)
    for op, lim in ((rl_integral_left, 0.0), (rl_integral_right, 1.0)):
        want = p * op(f, alpha, lim, t, n=512) + q * op(g, alpha, lim, t, n=512)
        assert op(combo, alpha, lim, t, n=512) == pytest.approx(want, rel=1e-12, abs=1e-12)
    # analytic slopes keep finite-difference rounding out of the comparison
    for op, lim in ((caputo_left, 0.0), (rl_derivative_left, 0.0), (caputo_right, 1.0), (rl_derivative_right, 1.0)):
        want = p * op(f, alpha, lim, t, dx=df, n=512) + q * op(g, alpha, lim, t, dx=dg, n=512)
        got = op(combo, alpha, lim, t, dx=dcombo, n=512)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-11)
