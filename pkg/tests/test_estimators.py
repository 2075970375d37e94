"""Estimator layer: strata algebra, decay fits, mass and LLN summaries."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbmlab.analytic import confinement_center, principal_eigenvalue
from bbmlab.engine import BudgetExceededError, confinement_probability_mc
from bbmlab.estimators import (
    DecayFit,
    Estimate,
    estimate_expected_mass,
    estimate_ld_probability,
    fit_decay_rate,
    lln_statistic,
    lln_trend,
    lln_value,
    prop_a_distribution_test,
)
from bbmlab.model import ModelParams, RadiusSchedule


def make_params(**kw):
    base = dict(
        dimension=1,
        branching_rate=0.25,
        kappa=0.25,
        t_max=30.0,
        radius=RadiusSchedule.power(1.0, 0.4),
        dt=0.1,
    )
    base.update(kw)
    return ModelParams(**base)


class TestEstimateType:
    def test_mode_enumeration(self):
        with pytest.raises(ValueError):
            Estimate(value=0.5, std_error=0.1, replicates=10, mode="bootstrap")

    def test_std_error_must_be_finite(self):
        for bad in (-0.1, math.inf, math.nan):
            with pytest.raises(ValueError):
                Estimate(value=0.5, std_error=bad, replicates=10, mode="naive")

    def test_replicates_must_be_positive(self):
        with pytest.raises(ValueError):
            Estimate(value=0.5, std_error=0.1, replicates=0, mode="naive")


class TestExpectedMass:
    def test_t_zero_is_exactly_one(self):
        est = estimate_expected_mass(make_params(), 0.0, 50, seed=0)
        assert (est.value, est.std_error) == (1.0, 0.0)

    def test_matches_the_mass_identity(self):
        # fixed ball: E[n_t] = p_t e^{beta t} with p_t from the exact series
        params = make_params(
            branching_rate=0.5, radius=RadiusSchedule.fixed(1.0), t_max=3.0, dt=0.005
        )
        est = estimate_expected_mass(params, 3.0, 4_000, seed=41)
        target = confinement_center(1, 1.0, 3.0, mode="series") * math.exp(1.5)
        assert abs(est.value - target) <= 4 * est.std_error
        assert est.detail["log_mean"] == pytest.approx(math.log(est.value))
        assert est.detail["mean_total"] >= est.value

    def test_budget_guard(self):
        params = make_params(branching_rate=2.0, t_max=30.0)
        with pytest.raises(BudgetExceededError):
            estimate_expected_mass(params, 30.0, 10, seed=0, max_live=2**10)


class TestLDProbability:
    def test_input_validation(self):
        params = make_params()
        with pytest.raises(ValueError):
            estimate_ld_probability(params, 10.0, 100, seed=0, mode="fancy")
        with pytest.raises(ValueError):
            estimate_ld_probability(params, 10.0, 1, seed=0)
        with pytest.raises(ValueError):
            estimate_ld_probability(params, 40.0, 100, seed=0)  # beyond t_max
        zero_rate = make_params(branching_rate=0.0)
        with pytest.raises(ValueError):
            estimate_ld_probability(zero_rate, 10.0, 100, seed=0)

    def test_stratified_agrees_with_naive(self):
        params = make_params(t_max=24.0)
        naive = estimate_ld_probability(params, 24.0, 8_000, seed=51, mode="naive")
        strat = estimate_ld_probability(params, 24.0, 8_000, seed=51, mode="stratified")
        combined = math.hypot(naive.std_error, strat.std_error)
        assert abs(naive.value - strat.value) <= 3 * combined
        assert strat.detail["weight_quiet"] == pytest.approx(
            math.exp(-params.branching_rate * strat.detail["t0"])
        )
        # the quiet weight is gamma_t / 2 by construction of t0
        assert strat.detail["weight_quiet"] == pytest.approx(strat.detail["gamma_t"] / 2)

    def test_stratified_mean_is_centred_on_naive(self):
        # many small stratified runs vs one large naive run
        params = make_params(branching_rate=0.5, t_max=8.0, dt=0.05)
        strata = [
            estimate_ld_probability(params, 8.0, 600, seed=s, mode="stratified").value
            for s in range(30)
        ]
        mean = float(np.mean(strata))
        se_mean = float(np.std(strata, ddof=1) / math.sqrt(len(strata)))
        naive = estimate_ld_probability(params, 8.0, 18_000, seed=999, mode="naive")
        assert abs(mean - naive.value) <= 3 * math.hypot(se_mean, naive.std_error)

    def test_monotone_in_kappa_under_common_seeds(self):
        # smaller kappa -> larger threshold -> the event can only gain paths
        params_lo = make_params(kappa=0.3, branching_rate=0.5, t_max=12.0, dt=0.05)
        params_hi = make_params(kappa=0.9, branching_rate=0.5, t_max=12.0, dt=0.05)
        p_t = confinement_probability_mc(1, params_lo.radius_at(12.0), 12.0, 20_000, seed=1)
        lo = estimate_ld_probability(params_lo, 12.0, 2_000, seed=77, mode="naive", p_t=p_t)
        hi = estimate_ld_probability(params_hi, 12.0, 2_000, seed=77, mode="naive", p_t=p_t)
        assert lo.value >= hi.value

    def test_explicit_p_t_is_used_verbatim(self):
        params = make_params(t_max=12.0)
        supplied = Estimate(value=0.2, std_error=0.001, replicates=10_000, mode="naive")
        est = estimate_ld_probability(params, 12.0, 500, seed=3, p_t=supplied, mode="naive")
        assert est.detail["p_t"] == 0.2
        assert est.detail["p_t_std_error"] == 0.001

    @pytest.mark.parametrize("mode", ["naive", "stratified"])
    def test_zero_hit_carries_an_upper_bound(self, mode):
        # ball so wide that n_t = 0 cannot happen, threshold below 1: the
        # deviation event is unobservable and the bound machinery must kick in
        params = make_params(
            branching_rate=1.0, kappa=1.0, radius=RadiusSchedule.fixed(8.0), t_max=2.0, dt=0.05
        )
        est = estimate_ld_probability(params, 2.0, 200, seed=5, mode=mode)
        assert est.value == 0.0
        assert est.zero_hit
        assert est.upper_bound is not None and 0 < est.upper_bound < 1


class TestDecayFit:
    def test_recovers_a_synthetic_slope_exactly(self):
        rs = [2.0, 3.0, 4.5, 6.0]
        slope, logc = 2.0, -0.3
        points = [(r, math.exp(logc - slope * r)) for r in rs]
        fit = fit_decay_rate(points)
        assert fit.slope == pytest.approx(slope, abs=1e-12)
        assert fit.intercept == pytest.approx(logc, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0)

    @given(st.floats(0.1, 10.0))
    def test_invariant_under_common_multiplier(self, c):
        rs = [2.0, 3.0, 4.0, 5.0]
        base = [(r, 0.7 * math.exp(-1.3 * r)) for r in rs]
        scaled = [(r, c * p) for r, p in base]
        assert fit_decay_rate(scaled).slope == pytest.approx(
            fit_decay_rate(base).slope, rel=1e-12
        )

    def test_reported_se_propagates_from_probabilities(self):
        rs = np.array([2.0, 3.0, 4.0])
        ps = np.exp(-0.8 * rs)
        ses = 0.05 * ps  # 5% relative error each
        fit = fit_decay_rate(list(zip(rs, ps)), std_errors=ses)
        w = (rs - rs.mean()) / ((rs - rs.mean()) ** 2).sum()
        assert fit.slope_se == pytest.approx(float(np.sqrt((w**2 * 0.05**2).sum())))

    def test_validation(self):
        with pytest.raises(ValueError):
            fit_decay_rate([(1.0, 0.5), (2.0, 0.4)])
        with pytest.raises(ValueError, match="replicate count"):
            fit_decay_rate([(1.0, 0.5), (2.0, 0.0), (3.0, 0.1)])
        with pytest.raises(ValueError):
            fit_decay_rate([(1.0, 0.5), (1.0, 0.4), (1.0, 0.3)])
        with pytest.raises(ValueError):
            fit_decay_rate([(1.0, 0.5), (2.0, 0.4), (3.0, 0.3)], std_errors=[0.01, 0.01])

    def test_decay_fit_bounds(self):
        with pytest.raises(ValueError):
            DecayFit(points=((1.0, -1.0),), slope=1.0, intercept=0.0, r_squared=1.5, slope_se=0.1)


class TestLLN:
    def test_plug_in_identity(self):
        params = make_params()
        t, n = 20.0, 37.0
        r = params.radius_at(t)
        expected = r * r * (math.log(n) / t - params.branching_rate)
        assert lln_value(params, t, n) == pytest.approx(expected, rel=1e-10)

    def test_extinct_run_maps_to_minus_inf(self):
        assert lln_value(make_params(), 20.0, 0) == -math.inf

    def test_trend_summaries_are_consistent(self):
        params = make_params(branching_rate=0.5, t_max=15.0, dt=0.05)
        summaries = lln_trend(params, [10.0, 15.0], 150, seed=8)
        assert [s.t for s in summaries] == [10.0, 15.0]
        lam = principal_eigenvalue(1)
        for s in summaries:
            assert s.target == pytest.approx(-lam)
            assert s.replicates == 150
            assert s.statistics.shape == (150,)
            zero_share = float(np.mean(np.isneginf(s.statistics)))
            assert s.zero_fraction == pytest.approx(zero_share)
            assert 0 <= s.within_fraction <= 1
            assert s.unreliable == (s.zero_fraction > 0.20)
            if s.zero_fraction == 0:
                assert s.median == pytest.approx(float(np.median(s.statistics)))

    def test_single_time_shortcut(self):
        params = make_params(branching_rate=0.5, t_max=10.0, dt=0.05)
        one = lln_statistic(params, 10.0, 120, seed=8)
        row = lln_trend(params, [10.0], 120, seed=8)[0]
        assert one.median == row.median
        assert one.zero_fraction == row.zero_fraction

    def test_needs_enough_replicates(self):
        with pytest.raises(ValueError):
            lln_trend(make_params(), [10.0], 50, seed=0)


class TestPropA:
    def test_t_zero_is_exact(self):
        tv, tail_ok = prop_a_distribution_test(1.0, 0.0, 500, seed=0)
        assert tv == 0.0
        assert tail_ok

    def test_half_life_point(self):
        # t = ln 2 at beta 1: success probability exactly 1/2
        tv, tail_ok = prop_a_distribution_test(1.0, math.log(2.0), 20_000, seed=2)
        assert tv <= 0.02
        assert tail_ok
