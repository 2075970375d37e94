"""Simulation engine: count law, pathwise invariants, probes, budget."""

import math

import numpy as np
import pytest

from bbmlab.engine import (
    STREAM_SIM,
    BudgetExceededError,
    Snapshot,
    StrategyCondition,
    active_count,
    confinement_probability_mc,
    displacement_tail_probe,
    generator,
    mrca_split_probe,
    sample_counts,
    simulate,
)
from bbmlab.analytic import confinement_center
from bbmlab.model import ModelParams, RadiusSchedule


def make_params(**kw):
    base = dict(
        dimension=1,
        branching_rate=0.7,
        kappa=1.0,
        t_max=9.0,
        radius=RadiusSchedule.power(0.8, 0.45),
        dt=0.02,
    )
    base.update(kw)
    return ModelParams(**base)


class TestGenerator:
    def test_reproducible(self):
        a = generator(42, STREAM_SIM, 3).standard_normal(8)
        b = generator(42, STREAM_SIM, 3).standard_normal(8)
        np.testing.assert_array_equal(a, b)

    def test_streams_and_replicates_are_distinct(self):
        base = generator(42, 0, 0).standard_normal(8)
        for seed, tag, rep in [(43, 0, 0), (42, 1, 0), (42, 0, 1)]:
            other = generator(seed, tag, rep).standard_normal(8)
            assert not np.array_equal(base, other)


class TestSnapshotValidation:
    def test_rejects_inconsistent_counts(self):
        with pytest.raises(ValueError):
            Snapshot(t=1.0, total=2, active=3, radius=1.0)
        with pytest.raises(ValueError):
            Snapshot(t=1.0, total=0, active=0, radius=1.0)

    def test_accepts_boundary(self):
        snap = Snapshot(t=0.0, total=1, active=0, radius=0.0)
        assert snap.active == 0


class TestObservationValidation:
    @pytest.mark.parametrize(
        "obs",
        [[], [-1.0], [2.0, 2.0], [3.0, 1.0], [100.0]],
    )
    def test_bad_observation_grids(self, obs):
        with pytest.raises(ValueError):
            simulate(make_params(), obs, seed=0)

    def test_t_zero_observation(self):
        result = simulate(make_params(), [0.0, 1.0], seed=0)
        assert result[0].total == 1
        assert result[0].active == 1


class TestCountLaw:
    def test_totals_follow_the_geometric_law(self):
        # N_t ~ Geometric(e^{-beta t}) for strictly dyadic branching
        beta, t, n = 1.0, 0.7, 20_000
        params = make_params(branching_rate=beta, t_max=t, dt=t)
        totals, _, _ = sample_counts(params, [t], n, seed=303, skeleton_only=True)
        counts = np.bincount(totals[:, 0])
        p = math.exp(-beta * t)
        k = np.arange(1, counts.size)
        pmf = p * (1 - p) ** (k - 1)
        tv = 0.5 * (np.abs(counts[1:] / n - pmf).sum() + (1 - p) ** counts.size)
        assert tv <= 0.03
        mean = totals[:, 0].mean()
        se = totals[:, 0].std(ddof=1) / math.sqrt(n)
        assert abs(mean - math.exp(beta * t)) <= 4 * se

    def test_zero_branching_rate_keeps_one_particle(self):
        params = make_params(branching_rate=0.0)
        totals, actives, _ = sample_counts(params, [1.0, 9.0], 50, seed=7)
        assert (totals == 1).all()
        assert set(np.unique(actives)) <= {0, 1}


class TestPathwiseInvariants:
    def test_active_never_exceeds_total(self):
        totals, actives, _ = sample_counts(make_params(), [2.0, 5.0, 9.0], 200, seed=11)
        assert (actives <= totals).all()
        assert (actives >= 0).all()

    def test_wide_ball_keeps_everything_active(self):
        params = make_params(radius=RadiusSchedule.fixed(50.0), branching_rate=1.0, t_max=3.0)
        totals, actives, _ = sample_counts(params, [1.0, 3.0], 300, seed=23)
        np.testing.assert_array_equal(totals, actives)

    def test_determinism_across_calls_and_workers(self):
        params = make_params()
        first = sample_counts(params, [2.0, 9.0], 80, seed=5)
        second = sample_counts(params, [2.0, 9.0], 80, seed=5)
        forked = sample_counts(params, [2.0, 9.0], 80, seed=5, threads=2)
        for a, b, c in zip(first, second, forked):
            np.testing.assert_array_equal(a, b)
            np.testing.assert_array_equal(a, c)

    def test_replicate_slices_are_stable(self):
        # replicate k is one stream: enlarging the batch cannot change it
        params = make_params()
        small = sample_counts(params, [9.0], 30, seed=5)[0]
        large = sample_counts(params, [9.0], 60, seed=5)[0]
        np.testing.assert_array_equal(small, large[:30])

    def test_bridge_correction_only_removes_particles(self):
        params_on = make_params(bridge_correction=True)
        params_off = make_params(bridge_correction=False)
        strictly_fewer = 0
        for rep in range(150):
            on = simulate(params_on, [2.0, 5.0, 9.0], seed=31, replicate=rep)
            off = simulate(params_off, [2.0, 5.0, 9.0], seed=31, replicate=rep)
            for s_on, s_off in zip(on, off):
                assert s_on.total == s_off.total  # same skeleton, same normals
                assert s_on.active <= s_off.active
                strictly_fewer += s_on.active < s_off.active
        assert strictly_fewer > 0  # the correction must actually bite

    def test_reactivation_witness(self):
        # frozen fixture: all 8 lineages sit outside r(2), yet 55 of the
        # 539 leaves are back inside r(9); the radius outgrew the old maxima
        params = make_params()
        result = simulate(params, [2.0, 9.0], seed=1234, replicate=1)
        early, late = result
        assert early.total > 1 and early.active == 0
        assert late.active > 0

    def test_collected_records_match_snapshots(self):
        params = make_params(dimension=2)
        result = simulate(params, [2.0, 6.0], seed=17, replicate=4, collect_particles=True)
        assert result.particles is not None
        for j, snap in enumerate(result):
            records = result.particles[j]
            assert len(records) == snap.total
            assert active_count(records, snap.radius) == snap.active
            for rec in records:
                assert rec.running_max_radius >= np.linalg.norm(rec.position) - 1e-12
                assert rec.next_branch_time > snap.t


class TestConditioning:
    def test_quiet_condition_suppresses_branching(self):
        params = make_params(branching_rate=1.0)
        quiet = StrategyCondition("no_branch_until", 3.0)
        totals, _, _ = sample_counts(params, [2.9, 9.0], 60, seed=3, condition=quiet)
        assert (totals[:, 0] == 1).all()

    def test_early_condition_forces_branching(self):
        params = make_params(branching_rate=0.3)
        early = StrategyCondition("branch_before", 2.0)
        totals, _, _ = sample_counts(params, [2.0, 9.0], 60, seed=3, condition=early)
        assert (totals[:, 0] >= 2).all()

    def test_log_weights(self):
        beta, t0 = 0.7, 3.0
        quiet = StrategyCondition("no_branch_until", t0)
        early = StrategyCondition("branch_before", t0)
        assert quiet.log_weight(beta) == pytest.approx(-beta * t0)
        assert early.log_weight(beta) == pytest.approx(math.log(1 - math.exp(-beta * t0)))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            StrategyCondition("sometimes", 1.0)

    def test_branch_before_impossible_without_branching(self):
        params = make_params(branching_rate=0.0)
        with pytest.raises(ValueError):
            simulate(params, [1.0], seed=0, condition=StrategyCondition("branch_before", 0.5))


class TestBudget:
    def test_truncation_is_flagged_and_clipped(self):
        params = make_params(branching_rate=2.0, t_max=10.0, dt=0.05)
        result = simulate(params, [1.0, 10.0], seed=2, max_live=256)
        assert result.truncated
        assert len(result) >= 1
        assert all(snap.t < 10.0 for snap in result)

    def test_sample_counts_pads_truncated_rows(self):
        params = make_params(branching_rate=2.0, t_max=10.0, dt=0.05)
        totals, actives, truncated = sample_counts(params, [1.0, 10.0], 8, seed=2, max_live=256)
        assert truncated.all()
        assert (totals[:, 1] == -1).all()
        assert (totals[:, 0] >= 1).all()
        assert (actives[:, 1] == -1).all()


class TestConfinementMC:
    def test_matches_series_in_d1(self):
        exact = confinement_center(1, 1.0, 1.0, mode="series")
        est = confinement_probability_mc(1, 1.0, 1.0, 20_000, seed=29)
        assert abs(est.value - exact) <= 4 * est.std_error
        assert est.mode == "naive"

    def test_matches_leading_term_in_d3(self):
        asym = confinement_center(3, 1.0, 4.0, mode="leading_term")
        est = confinement_probability_mc(3, 1.0, 4.0, 40_000, seed=29)
        assert abs(est.value - asym) <= 4 * est.std_error + 1e-3

    def test_bridge_lowers_the_estimate(self):
        with_bridge = confinement_probability_mc(1, 1.0, 1.0, 10_000, seed=13, bridge=True)
        without = confinement_probability_mc(1, 1.0, 1.0, 10_000, seed=13, bridge=False)
        assert with_bridge.value <= without.value

    def test_zero_hit_reports_upper_bound(self):
        # tiny ball: certain miss, and the fine default grid must not blow
        # memory (the sampler streams long grids in segments)
        est = confinement_probability_mc(1, 0.2, 4.0, 2_000, seed=1)
        assert est.value == 0.0
        assert est.zero_hit
        assert 0 < est.upper_bound < 1

    def test_segmented_grid_is_unbiased(self):
        # dt forces many segments per block; agreement with the exact series
        exact = confinement_center(1, 1.0, 1.0, mode="series")
        est = confinement_probability_mc(1, 1.0, 1.0, 8_000, seed=4, dt=1e-4)
        assert abs(est.value - exact) <= 4 * est.std_error


class TestDisplacementProbe:
    def test_zero_threshold_is_certain(self):
        est = displacement_tail_probe(0.0, 4.0, replicates=1_000, seed=3)
        assert est.value == 1.0
        assert est.detail["decay_rate"] == 0.0
        assert est.detail["reference_rate"] == 0.0

    def test_nonincreasing_in_k(self):
        values = [
            displacement_tail_probe(k, 4.0, replicates=4_000, seed=3).value
            for k in (0.5, 1.0, 1.5)
        ]
        assert values[0] >= values[1] >= values[2]

    def test_reference_rate_is_quadratic(self):
        est = displacement_tail_probe(1.25, 2.0, replicates=1_000, seed=3)
        assert est.detail["reference_rate"] == pytest.approx(1.25**2 / 2)


class TestMRCAProbe:
    def test_split_times_follow_the_branching_rate(self):
        params = make_params(branching_rate=1.0, t_max=6.0)
        probe = mrca_split_probe(params, 6.0, 10_000, seed=21)
        assert abs(probe.tail_rate - 1.0) <= 0.25
        assert probe.pairs == 10_000
        assert (probe.split_times >= 0).all() and (probe.split_times <= 6.0).all()
        assert (probe.weights > 0).all()

    def test_survival_decays_exponentially(self):
        params = make_params(branching_rate=1.0, t_max=6.0)
        probe = mrca_split_probe(params, 6.0, 10_000, seed=22)
        # P(split > s) = (e^{-s} - e^{-t}) / (1 - e^{-t}) under the pair census
        target = (math.exp(-3.6) - math.exp(-6.0)) / (1 - math.exp(-6.0))
        assert probe.survival_at(3.6) == pytest.approx(target, abs=0.012)

    def test_requires_moderate_horizon(self):
        params = make_params(branching_rate=2.0, t_max=10.0)
        with pytest.raises(ValueError):
            mrca_split_probe(params, 10.0, 100, seed=0)
