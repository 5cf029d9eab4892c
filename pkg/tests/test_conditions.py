from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from fracoc import conditions, model
from fracoc.conditions import (
    CandidateTriplet,
    certify_sufficient,
    generalized_residuals,
    necessary_residuals,
    transversality,
)
from fracoc.errors import UsageError
from fracoc.fracops import gamma
from fracoc.problems import classical_toy, example41, example41_exact, quadratic_problem

CD_T2_AT_1 = 1.5045055561273502  # Caputo derivative of t^2 at 1, alpha = 1/2


def triplet(x, u, lam, T=1.0, M=400, a=0.0):
    t = np.linspace(a, T, M + 1)
    ev = lambda f: np.broadcast_to(np.asarray(f(t), dtype=float), t.shape)
    return CandidateTriplet.from_arrays(t, ev(x), ev(u), ev(lam), T=T)


def toy(mode, **kw):
    """``L = 1 + u^2``, ``x' = u``; brackets at T are ``2 + c`` and ``c`` for x = t, u = 1, lam = c."""
    return quadratic_problem(0.5, mode, m_coef=1.0, n_coef=0.0, wc=1.0, wu=1.0, fu=1.0, **kw)


def toy_candidate(c, T=1.0):
    return triplet(lambda t: t, lambda t: 1.0, lambda t: c, T=T)


def exact41(M=2048, alpha=0.5):
    xs, us = example41_exact(alpha)
    return triplet(xs, us, lambda t: 0.0, M=M)


class TestCandidate:
    def test_shared_grid(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(UsageError):
            CandidateTriplet.from_arrays(t, t, t, t[:-1])

    def test_grid_ends_at_T(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(UsageError):
            CandidateTriplet.from_arrays(t, t, t, t, T=2.0)

    def test_extend_is_linear(self):
        t, (x,) = conditions.extend_to(0.0, np.array([1e-3, 2e-3, 3e-3]), [np.array([2.0, 3.0, 4.0])])
        assert t[0] == 0.0 and x[0] == pytest.approx(1.0)


class TestNecessary:
    def test_example41_exact(self):
        rep = necessary_residuals(example41(0.5), exact41())
        assert rep.max_residual <= 5e-3
        assert rep.satisfied
        assert rep.transversality_residuals.size == 0

    def test_refinement(self):
        spec = example41(0.5)
        reps = [necessary_residuals(spec, exact41(M)) for M in (512, 1024, 2048)]
        state = [r.hamiltonian_state_residual for r in reps]
        assert state[0] > state[1] > state[2]
        for r in reps:
            assert r.hamiltonian_costate_residual < 1e-12
            assert r.stationarity_residual < 1e-12

    def test_perturbed_control(self):
        xs, us = example41_exact(0.5)
        rng = np.random.default_rng(7)
        t = np.linspace(0, 1, 513)
        bump = 0.1 * np.sign(rng.standard_normal(t.size))
        cand = CandidateTriplet.from_arrays(t, xs(t), us(t) + bump, np.zeros_like(t))
        assert necessary_residuals(example41(0.5), cand).stationarity_residual >= 0.01

    def test_classical_toy(self):
        cand = toy_candidate(-2.0)
        rep = necessary_residuals(classical_toy(), cand)
        assert rep.max_residual <= 1e-6

    def test_classical_reduction(self):
        spec = toy(model.FixedTimeFreeState(1.0))
        rep = necessary_residuals(spec, toy_candidate(0.37))
        assert_allclose(rep.transversality_residuals, [0.37])

    def test_rejects_generalized(self):
        spec = toy(model.FixedTimeFreeState(1.0), a=0.0, A_cost=0.5)
        with pytest.raises(UsageError):
            necessary_residuals(spec, toy_candidate(0.0))

    def test_grid_must_start_at_a(self):
        cand = triplet(lambda t: t, lambda t: 1.0, lambda t: -2.0, a=0.1)
        with pytest.raises(UsageError):
            necessary_residuals(classical_toy(), cand)

    def test_format(self):
        rep = necessary_residuals(classical_toy(), toy_candidate(-2.0))
        text = rep.format()
        assert "satisfied = true" in text
        assert "transversality_horizon" in text


class TestVariants:
    c = 0.4

    def run(self, mode, T=1.0):
        return transversality(toy(mode), toy_candidate(self.c, T=T))

    def test_fixed_both_empty(self):
        assert self.run(model.FixedBoth(1.0, 1.0)).size == 0

    def test_fixed_time(self):
        assert_allclose(self.run(model.FixedTimeFreeState(1.0)), [self.c])

    def test_fixed_state(self):
        assert_allclose(self.run(model.FreeTimeFixedState(1.0)), [2 + self.c])

    def test_both_free(self):
        assert_allclose(self.run(model.FreeTimeFreeState()), [2 + self.c, self.c])

    def test_curve_coupling(self):
        # gamma(t) = t: B1 - gamma'(T) B2
        assert_allclose(self.run(model.Curve(lambda t: t)), [2.0], rtol=1e-8)
        assert_allclose(self.run(model.Curve(lambda t: 3 * t, lambda t: 3.0)), [2 + self.c - 3 * self.c])

    def test_lower_bound_inactive(self):
        slack, comp = self.run(model.FixedTimeStateLowerBound(1.0, 0.5))
        assert slack == pytest.approx(self.c)
        assert comp == pytest.approx(abs(self.c))

    def test_lower_bound_active(self):
        slack, comp = self.run(model.FixedTimeStateLowerBound(1.0, 1.0))
        assert slack == pytest.approx(self.c)
        assert comp == pytest.approx(0.0, abs=1e-12)

    def test_upper_bound(self):
        slack, comp = self.run(model.FixedStateTimeUpperBound(1.0, 2.0))
        assert slack == pytest.approx(-(2 + self.c))
        assert comp == pytest.approx(2 + self.c)
        slack, comp = self.run(model.FixedStateTimeUpperBound(1.0, 1.0))
        assert comp == pytest.approx(0.0, abs=1e-12)

    def test_report_clips_feasible_slack(self):
        spec = toy(model.FixedTimeStateLowerBound(1.0, 1.0))
        rep = necessary_residuals(spec, toy_candidate(-0.3))
        assert rep.transversality_labels == ("slack", "complementarity")
        assert_allclose(rep.transversality_residuals, [0.0, 0.0], atol=1e-12)

    def test_fractional_horizon_bracket(self):
        spec = example41(0.5)
        spec = replace(spec, terminal=model.FreeTimeFixedState(1.0))
        c = 0.5
        cand = triplet(lambda t: t**2, lambda t: 1.0, lambda t: c, M=4000)
        (b1,) = transversality(spec, cand)
        # H(1) = (1 - 2.5)^2 + 2c, minus lam(T) times the Caputo derivative of x at T
        assert b1 == pytest.approx(2.25 + 2 * c - c * CD_T2_AT_1, rel=1e-4)

    def test_mode_mismatch(self):
        spec = toy(model.FixedTimeFreeState(1.0))
        with pytest.raises(UsageError):
            transversality(spec, toy_candidate(0.0), model.FreeTimeFreeState())

    def test_fixed_T_mismatch(self):
        spec = toy(model.FixedTimeFreeState(2.0))
        with pytest.raises(UsageError):
            transversality(spec, toy_candidate(0.0))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-10, 10), bound=st.floats(0.0, 2.0))
def test_reported_residuals_non_negative(c, bound):
    for mode in (model.FixedTimeStateLowerBound(1.0, bound), model.FixedStateTimeUpperBound(1.0, 1.0 + bound),
                 model.FreeTimeFreeState()):
        rep = necessary_residuals(toy(mode), toy_candidate(c))
        assert all(v >= 0 for _, v in rep.items())


class TestGeneralized:
    a, A, T = 0.0, 0.5, 1.0

    def spec(self, mode=None, **kw):
        mode = mode or model.FixedTimeFreeState(self.T)
        return quadratic_problem(0.5, mode, a=self.a, A_cost=self.A, wu=1.0, **kw)

    def test_zero_costate(self):
        rep = generalized_residuals(self.spec(), triplet(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0, M=200))
        assert rep.extra_interval_residual == 0.0
        assert rep.transversality_labels[-1] == "initial"
        assert rep.transversality_residuals[-1] == 0.0

    def test_constant_costate(self):
        cand = triplet(lambda t: 0.0, lambda t: 0.0, lambda t: 1.0, M=200)
        rep = generalized_residuals(self.spec(), cand)
        pre = cand.grid[cand.grid < self.A]
        g = gamma(0.5)
        closed = np.max(np.abs((self.T - pre) ** -0.5 / g - (self.A - pre) ** -0.5 / g))
        assert rep.extra_interval_residual == pytest.approx(closed, rel=1e-4)
        third = (1 - 0.5**0.5) / gamma(1.5)
        assert rep.transversality_residuals[-1] == pytest.approx(third, rel=1e-4)

    def test_fixed_at_a_drops_initial(self):
        base = self.spec(model.FreeTimeFreeState())
        spec = replace(base, fixed_at_a=True)
        rep = generalized_residuals(spec, triplet(lambda t: t, lambda t: 1.0, lambda t: 1.0, M=200))
        assert rep.transversality_labels == ("horizon", "state")

    def test_rejects_basic_problem(self):
        with pytest.raises(UsageError):
            generalized_residuals(example41(), exact41(256))


class TestCertificate:
    def test_example41(self):
        cert = certify_sufficient(example41(0.5), exact41())
        assert cert.certified, cert.report
        assert cert.report.startswith("certified = true")

    def test_concave_cost(self):
        spec = model.FocpSpec(L=lambda t, x, u: -x**2 + u**2, f=lambda t, x, u: u,
                              terminal=model.FixedTimeFreeState(1.0), alpha=0.5, m_coef=1.0, n_coef=0.0)
        cert = certify_sufficient(spec, triplet(lambda t: 0.0, lambda t: 0.0, lambda t: 0.0))
        assert not cert.certified
        assert "L convex in x" in cert.failed
        assert "[FAIL] L convex in x" in cert.report

    def test_negative_costate_nonlinear_dynamics(self):
        spec = model.FocpSpec(L=lambda t, x, u: u**2, f=lambda t, x, u: u + x**2,
                              terminal=model.FixedTimeFreeState(1.0), alpha=0.5, m_coef=1.0, n_coef=0.0)
        cert = certify_sufficient(spec, triplet(lambda t: 0.0, lambda t: 0.0, lambda t: -1.0))
        assert not cert.certified
        assert "lambda >= 0 or f linear in (x, u)" in cert.failed

    def test_free_time_rejected(self):
        with pytest.raises(UsageError):
            certify_sufficient(classical_toy(), toy_candidate(-2.0))

    @settings(max_examples=8, deadline=None)
    @given(amp=st.floats(0.0, 0.5))
    def test_never_certifies_above_threshold(self, amp):
        xs, us = example41_exact(0.5)
        cand = triplet(xs, lambda t: us(t) + amp * np.sin(7 * t), lambda t: 0.0, M=512)
        spec = example41(0.5)
        cert = certify_sufficient(spec, cand, samples=200)
        if cert.certified:
            assert necessary_residuals(spec, cand).satisfied
