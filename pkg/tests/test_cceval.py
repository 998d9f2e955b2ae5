import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccpfr.cceval import (
    ChanceConstraintInfeasible,
    ConstraintSpec,
    analytic_cc_tightening,
    event_bounds,
    gaussian_quantile,
    step_cc_probability,
    wcc_evaluate,
    wcc_mc_oracle,
    weight_parameters,
)
from ccpfr.grid import Bus, Generator, GridCase, Line, WindFarm, build_ptdf
from ccpfr.policy import PRIMARY, SECONDARY_ONLY, Deadband, DroopSet
from ccpfr.uncertainty import WindStatistics, sigma_moments

from oracles import lognormal_mean, normal_quantile_bisect, normal_sf, tilted_integral_simpson


def bank(n_gen=10, wind_std=20.0, p_max=100.0, load=500.0, forecast=100.0):
    """Two buses, ``n_gen`` identical generators at bus 1, one farm at bus 2."""
    gens = [Generator(1, 0.0, p_max, 0.01, 10.0, 0.0, 1.0, 1.0, 0.1) for _ in range(n_gen)]
    case = GridCase(
        [Bus(1, 0.0), Bus(2, load)],
        gens,
        [Line(1, 2, 10.0, 1000.0)],
        [WindFarm(2, forecast, wind_std)],
        slack_bus=1,
    )
    return case, build_ptdf(case), DroopSet.from_case(case), WindStatistics.from_case(case)


class TestQuantile:
    @pytest.mark.parametrize("q", [0.5, 0.95, 0.9999, 1e-6, 0.3])
    def test_against_bisection(self, q):
        assert gaussian_quantile(q) == pytest.approx(normal_quantile_bisect(q), abs=1e-10)

    def test_pinned(self):
        assert gaussian_quantile(0.5) == 0
        assert gaussian_quantile(0.95) == pytest.approx(1.6448536, abs=1e-6)
        assert gaussian_quantile(0.9999) == pytest.approx(3.7190165, abs=1e-6)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1, float("nan")])
    def test_domain(self, q):
        with pytest.raises(ValueError):
            gaussian_quantile(q)


class TestTightening:
    def test_margin(self):
        case, ptdf, droops, wind = bank()
        t = analytic_cc_tightening(case, ptdf, droops, wind, 0.05)
        assert t.gen_upper[0] == pytest.approx(100.0 - 3.2897072539, abs=1e-8)
        assert t.gen_lower[0] == pytest.approx(3.2897072539, abs=1e-8)

    def test_no_variance(self):
        case, ptdf, droops, _ = bank(wind_std=0.0)
        t = analytic_cc_tightening(case, ptdf, droops, WindStatistics.from_case(case), 0.01)
        assert np.all(t.gen_upper == case.gen_array("p_max"))
        assert np.all(t.line_upper == case.line_limits())

    def test_median(self):
        case, ptdf, droops, wind = bank()
        t = analytic_cc_tightening(case, ptdf, droops, wind, 0.5)
        assert np.all(t.gen_upper == case.gen_array("p_max"))

    def test_crossing_limits(self):
        case, ptdf, droops, wind = bank(wind_std=500.0, p_max=20.0)
        with pytest.raises(ChanceConstraintInfeasible):
            analytic_cc_tightening(case, ptdf, droops, wind, 0.01)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            ConstraintSpec("generator-up", 0, 0, 0.1)
        with pytest.raises(ValueError):
            ConstraintSpec("generator-upper", 0, 2, 0.1)
        with pytest.raises(ValueError):
            ConstraintSpec("line-lower", 0, 0, 1.0)

    def test_weight_rules(self):
        case, *_ = bank()
        up = ConstraintSpec("generator-upper", 0, 1, 0.01)
        assert weight_parameters(up, case, 5.0, "limit") == (100.0, 0.0)
        lo = ConstraintSpec("generator-lower", 0, 1, 0.01)
        # p_min = 0: the guard falls back to 5% of p_max
        assert weight_parameters(lo, case, 5.0, "limit") == (5.0, 0.0)
        scale, shift = weight_parameters(up, case, 5.0, "chernoff")
        assert shift == 100.0
        assert scale == pytest.approx(5.0 / math.sqrt(2 * math.log(100)))
        with pytest.raises(ValueError):
            weight_parameters(up, case, 5.0, "other")


def _instance(sigma, wind_std=100.0, p0=80.0):
    case, ptdf, droops, wind = bank(wind_std=wind_std)
    mom = sigma_moments(case, ptdf, droops, np.full(case.n_gen, p0), wind, sigma)
    return case, ptdf, droops, wind, mom


class TestWeightedEvaluation:
    def test_point_mass_limit(self):
        *_, mom = _instance(PRIMARY, wind_std=0.0)
        spec = ConstraintSpec("generator-upper", 0, 0, 0.1)
        mom0 = sigma_moments(*bank(wind_std=0.0)[:3], np.full(10, 80.0), bank(wind_std=0.0)[3], 0)
        ev = wcc_evaluate(spec, mom0, Deadband(100.0), 100.0)
        assert ev.value == pytest.approx(math.exp(0.8), rel=1e-15)
        # the point mass sits inside the dead zone, so the outside regime carries nothing
        ev1 = wcc_evaluate(replace(spec, regime=1), mom, Deadband(100.0), 100.0)
        assert ev1.value == 0.0

    @pytest.mark.parametrize("subject", ["generator-upper", "generator-lower"])
    def test_zero_deadband_closed_form(self, subject):
        *_, mom = _instance(PRIMARY)
        spec = ConstraintSpec(subject, 3, 1, 0.1)
        a = (1 if spec.upper else -1) / 100.0
        ev = wcc_evaluate(spec, mom, Deadband(0.0), 100.0)
        assert ev.value == pytest.approx(lognormal_mean(a, mom.p_mean[3], mom.p_var[3]), rel=1e-8)

    @pytest.mark.parametrize("subject", ["generator-upper", "generator-lower", "line-upper", "line-lower"])
    @pytest.mark.parametrize("threshold", [0.0, 30.0, 100.0, 250.0])
    def test_regime_partition(self, subject, threshold):
        """Inside and outside pieces at equal shares add up to the full expectation."""
        case, ptdf, droops, wind, mom = _instance(PRIMARY)
        same = replace(mom, sigma=0)  # identical shares in both pieces
        spec1 = ConstraintSpec(subject, 0, 1, 0.1)
        spec0 = replace(spec1, regime=0)
        db = Deadband(threshold)
        scale, shift = 60.0, 40.0
        total = wcc_evaluate(spec0, same, db, scale, shift).value + wcc_evaluate(spec1, mom, db, scale, shift).value
        mean, var, _ = mom.subject(spec1.kind, 0)
        a = (1 if spec1.upper else -1) / scale
        assert total == pytest.approx(lognormal_mean(a, mean - shift, var), rel=1e-8)

    @pytest.mark.parametrize("sigma", [0, 1])
    @pytest.mark.parametrize("subject", ["generator-upper", "line-lower"])
    def test_against_simpson_rule(self, sigma, subject, two_bus):
        case, ptdf, droops, wind = two_bus
        mom = sigma_moments(case, ptdf, droops, np.array([90.0, 80.0, 130.0]), wind, sigma)
        spec = ConstraintSpec(subject, 0, sigma, 0.05)
        db = Deadband(15.0)
        scale, shift = 7.0, 60.0
        ev = wcc_evaluate(spec, mom, db, scale, shift)
        mean, var, cov = mom.subject(spec.kind, 0)
        c = cov * mom.denominator / math.sqrt(mom.imbalance_var)
        lo, hi = event_bounds(mom, 15.0)
        a = (1 if spec.upper else -1) / scale
        ref = tilted_integral_simpson(a, mean - shift, var, c, lo, hi, sigma)
        assert ev.value == pytest.approx(ref, rel=1e-6)

    @pytest.mark.parametrize("tilt", [2.0, 3.0])
    @pytest.mark.parametrize("subject", ["generator-upper", "generator-lower", "line-upper", "line-lower"])
    def test_heavy_tilt_against_simpson_rule(self, tilt, subject, two_bus):
        # weight scale a fraction of the subject stdev, shift at a limit-like level;
        # too heavy-tailed for a plain sample mean, so check against the integral
        case, ptdf, droops, wind = two_bus
        mom = sigma_moments(case, ptdf, droops, np.array([90.0, 80.0, 130.0]), wind, 1)
        spec = ConstraintSpec(subject, 0, 1, 0.01)
        mean, var, cov = mom.subject(spec.kind, 0)
        sd = math.sqrt(var)
        scale = sd / tilt
        shift = mean + (3 * sd if spec.upper else -3 * sd)
        ev = wcc_evaluate(spec, mom, Deadband(10.0), scale, shift)
        c = cov * mom.denominator / math.sqrt(mom.imbalance_var)
        lo, hi = event_bounds(mom, 10.0)
        a = (1 if spec.upper else -1) / scale
        ref = tilted_integral_simpson(a, mean - shift, var, c, lo, hi, 1)
        assert ev.value == pytest.approx(ref, rel=1e-6)

    def test_pinned_instance_against_monte_carlo(self):
        """Mean 0.8 scale, stdev 0.1 scale, dead zone one imbalance stdev wide."""
        case, ptdf, droops, wind, mom = _instance(SECONDARY_ONLY)
        assert mom.p_mean[0] == pytest.approx(80.0) and math.sqrt(mom.p_var[0]) == pytest.approx(10.0)
        db = Deadband(100.0)
        for sigma in (0, 1):
            spec = ConstraintSpec("generator-upper", 0, sigma, 0.1)
            m = mom if sigma == 0 else sigma_moments(case, ptdf, droops, np.full(10, 80.0), wind, 1)
            ev = wcc_evaluate(spec, m, db, 100.0)
            mc = wcc_mc_oracle(spec, case, ptdf, droops, np.full(10, 80.0), wind, db, 1_000_000, 11, 100.0)
            assert abs(ev.value - mc.estimate) <= 3 * mc.stderr

    @given(st.floats(-30, 30), st.sampled_from(["generator-upper", "generator-lower"]), st.sampled_from([0, 1]))
    @settings(max_examples=40, deadline=None)
    def test_derivative_matches_finite_difference(self, shift_mw, subject, sigma):
        *_, mom = _instance(sigma)
        spec = ConstraintSpec(subject, 0, sigma, 0.1)
        db = Deadband(80.0)
        scale = 25.0
        h = 1e-4 * scale
        base = wcc_evaluate(spec, _shifted(mom, shift_mw), db, scale, 80.0)
        up = wcc_evaluate(spec, _shifted(mom, shift_mw + h), db, scale, 80.0).value
        dn = wcc_evaluate(spec, _shifted(mom, shift_mw - h), db, scale, 80.0).value
        fd = (up - dn) / (2 * h)
        assert base.d_value_d_mean == pytest.approx(fd, rel=1e-5)

    @pytest.mark.parametrize("subject", ["generator-upper", "generator-lower"])
    @pytest.mark.parametrize("sigma", [0, 1])
    def test_monotone_and_convex_in_mean(self, subject, sigma):
        *_, mom = _instance(sigma)
        spec = ConstraintSpec(subject, 0, sigma, 0.1)
        grid = np.linspace(-40, 40, 41)
        vals = np.array([wcc_evaluate(spec, _shifted(mom, s), Deadband(60.0), 30.0, 80.0).value for s in grid])
        steps = np.diff(vals)
        assert np.all(steps > 0) if spec.upper else np.all(steps < 0)
        second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
        assert np.all(second >= -1e-12 * vals[1:-1])

    def test_regime_mismatch_and_bad_scale(self):
        *_, mom = _instance(PRIMARY)
        with pytest.raises(ValueError):
            wcc_evaluate(ConstraintSpec("generator-upper", 0, 0, 0.1), mom, Deadband(1.0), 1.0)
        with pytest.raises(ValueError):
            wcc_evaluate(ConstraintSpec("generator-upper", 0, 1, 0.1), mom, Deadband(1.0), 0.0)


def _shifted(mom, delta):
    return replace(mom, p_mean=mom.p_mean + delta)


class TestMonteCarloOracles:
    def test_single_draw_by_hand(self):
        case, ptdf, droops, wind = bank(wind_std=20.0)
        p0 = np.full(10, 50.0)
        spec = ConstraintSpec("generator-upper", 2, 0, 0.1)
        est = wcc_mc_oracle(spec, case, ptdf, droops, p0, wind, Deadband(100.0), 1, 5, 100.0)
        draw = np.random.default_rng(5).standard_normal((1, 1))[0, 0] * 20.0
        expected = math.exp((50.0 - 0.1 * draw) / 100.0) * (abs(draw) <= 100.0)
        assert est.estimate == pytest.approx(expected, rel=1e-14) and est.n == 1

    def test_deterministic_wind(self):
        case, ptdf, droops, wind = bank(wind_std=0.0)
        p0 = np.full(10, 50.0)
        spec = ConstraintSpec("generator-lower", 1, 0, 0.1)
        est = wcc_mc_oracle(spec, case, ptdf, droops, p0, wind, Deadband(10.0), 10, 1, 20.0)
        mom = sigma_moments(case, ptdf, droops, p0, wind, 0)
        assert est.estimate == pytest.approx(wcc_evaluate(spec, mom, Deadband(10.0), 20.0).value, rel=1e-15)
        assert est.stderr == 0

    def test_seeded(self):
        case, ptdf, droops, wind = bank()
        spec = ConstraintSpec("line-upper", 0, 1, 0.1)
        args = (spec, case, ptdf, droops, np.full(10, 50.0), wind, Deadband(5.0), 1000, 3, 50.0)
        assert wcc_mc_oracle(*args) == wcc_mc_oracle(*args)

    def test_step_far_inside(self):
        case, ptdf, droops, wind = bank(wind_std=1.0)
        spec = ConstraintSpec("generator-upper", 0, 1, 0.1)
        est = step_cc_probability(spec, case, ptdf, droops, np.full(10, 50.0), wind, Deadband(0.0), 10_000, 1)
        assert est.estimate == 0

    def test_step_median(self):
        case, ptdf, droops, wind = bank(wind_std=20.0)
        spec = ConstraintSpec("generator-upper", 0, 1, 0.1)
        est = step_cc_probability(spec, case, ptdf, droops, np.full(10, 100.0), wind, Deadband(0.0), 100_000, 2)
        assert abs(est.estimate - 0.5) <= 3 * est.stderr

    @pytest.mark.parametrize("subject, index", [("generator-upper", 0), ("line-upper", 0), ("generator-lower", 2)])
    def test_step_against_gaussian_tail(self, two_bus, subject, index):
        case, ptdf, droops, wind = two_bus
        p0 = np.array([95.0, 150.0, 55.0])
        spec = ConstraintSpec(subject, index, 1, 0.1)
        mom = sigma_moments(case, ptdf, droops, p0, wind, 1)
        mean, var, _ = mom.subject(spec.kind, index)
        from ccpfr.cceval import subject_limit

        lim = subject_limit(spec, case)
        z = (lim - mean) / math.sqrt(var) if spec.upper else (mean - lim) / math.sqrt(var)
        est = step_cc_probability(spec, case, ptdf, droops, p0, wind, Deadband(0.0), 200_000, 9)
        assert abs(est.estimate - normal_sf(z)) <= 3 * est.stderr + 1e-12
