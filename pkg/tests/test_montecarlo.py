import math

import numpy as np
import pytest

from ccpfr.grid import Bus, Generator, GridCase, WindFarm, build_ptdf
from ccpfr.montecarlo import (
    TABLE_HEADER,
    ComparisonError,
    ValidationReport,
    compare,
    sample_wind,
    validate,
)
from ccpfr.policy import Deadband, DroopSet
from ccpfr.solver import expected_cost, solve_ccopf, solve_dcopf
from ccpfr.uncertainty import WindStatistics, sigma_moments

from conftest import EPSILONS
from oracles import normal_sf


def test_degenerate_samples():
    w = WindStatistics([10.0, 20.0], [0.0, 0.0])
    s = sample_wind(w, 5, 1)
    assert np.all(s.samples == [10.0, 20.0])


def test_sample_mean_clt():
    w = WindStatistics([70.0, 147.0], [49.0, 216.09])
    s = sample_wind(w, 1_000_000, 8)
    se = np.sqrt(w.variances / s.n)
    assert np.all(np.abs(s.samples.mean(axis=0) - w.means) <= 4 * se)


def test_sampling_is_seeded():
    w = WindStatistics([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    a, b = sample_wind(w, 100, 3), sample_wind(w, 100, 3)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, sample_wind(w, 100, 4).samples)
    with pytest.raises(ValueError):
        sample_wind(w, 0, 1)


def test_truncation_flag():
    w = WindStatistics([1.0], [100.0])
    assert sample_wind(w, 1000, 1, truncate=True).samples.min() >= 0
    assert sample_wind(w, 1000, 1).samples.min() < 0


def test_zero_variance_replay(two_bus):
    case, ptdf, droops, wind = two_bus
    sol = solve_dcopf(case, ptdf)
    rep = validate(sol, case, ptdf, droops, Deadband(0.0), sample_wind(wind.scaled(0.0), 50, 1))
    assert rep.system_wide_rate == 0 and rep.cost_std == 0
    assert rep.cost_mean == pytest.approx(sol.objective, rel=1e-12)


def test_single_generator_tail():
    case = GridCase([Bus(1, 100.0)], [Generator(1, 0.0, 100.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.1)], [], [WindFarm(1, 5.0, 10.0)], 1)
    ptdf = build_ptdf(case)
    sc = sample_wind(WindStatistics.from_case(case), 200_000, 12)
    rep = validate(np.array([95.0]), case, ptdf, DroopSet.from_case(case), Deadband(0.0), sc)
    p = normal_sf(0.5)  # p = 95 - s exceeds 100 when s < -5, s ~ N(0, 100)
    assert abs(rep.gen_upper_rate[0] - p) <= 3 * math.sqrt(p * (1 - p) / sc.n)


def test_report_invariants(rts, deadband, sweep):
    case, ptdf, droops, wind = rts
    rep = validate(sweep["dcopf"], case, ptdf, droops, deadband, sample_wind(wind, 5000, 1))
    rates = np.concatenate([rep.gen_upper_rate, rep.gen_lower_rate, rep.line_upper_rate, rep.line_lower_rate])
    assert np.all((rates >= 0) & (rates <= 1))
    assert rep.system_wide_rate >= rates.max()
    assert rep.system_wide_rate >= max(rep.generator_system_rate, rep.line_system_rate)
    assert rep.max_balance_error < 1e-6
    assert rep.case_hash == case.content_hash()


def test_affine_rates_match_gaussian_tails(two_bus):
    case, ptdf, droops, wind = two_bus
    sol = solve_ccopf(case, ptdf, droops, wind, 0.05)
    sc = sample_wind(wind, 100_000, 5)
    rep = validate(sol, case, ptdf, droops, Deadband(0.0), sc)
    mom = sigma_moments(case, ptdf, droops, sol.p0, wind, 1)
    sd = np.sqrt(mom.p_var)
    p_up = np.array([normal_sf(z) for z in (case.gen_array("p_max") - mom.p_mean) / sd])
    p_lo = np.array([normal_sf(z) for z in (mom.p_mean - case.gen_array("p_min")) / sd])
    band = lambda p: 3 * np.sqrt(p * (1 - p) / sc.n) + 1e-12  # noqa: E731
    assert np.all(np.abs(rep.gen_upper_rate - p_up) <= band(p_up))
    assert np.all(np.abs(rep.gen_lower_rate - p_lo) <= band(p_lo))


def test_cost_mean_converges_to_expected_cost(two_bus):
    case, ptdf, droops, wind = two_bus
    sol = solve_ccopf(case, ptdf, droops, wind, 0.05)
    rep = validate(sol, case, ptdf, droops, Deadband(0.0), sample_wind(wind, 200_000, 6))
    ref = expected_cost(case, ptdf, droops, wind, Deadband(0.0), sol.p0)
    assert abs(rep.cost_mean - ref) <= 4 * rep.cost_std / math.sqrt(rep.n)
    assert ref == pytest.approx(sol.objective, rel=1e-10)


def test_thread_count_does_not_change_results(rts, deadband, sweep):
    case, ptdf, droops, wind = rts
    sc = sample_wind(wind, 20_000, 2)
    a = validate(sweep["ccopf", 1e-2], case, ptdf, droops, deadband, sc, threads=1)
    b = validate(sweep["ccopf", 1e-2], case, ptdf, droops, deadband, sc, threads=4)
    assert a.to_dict() == b.to_dict()


def test_threads_from_environment(monkeypatch):
    from ccpfr.montecarlo import default_threads

    monkeypatch.setenv("CCPFR_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("CCPFR_THREADS", "x")
    with pytest.raises(ValueError):
        default_threads()


def test_report_round_trip(two_bus):
    case, ptdf, droops, wind = two_bus
    rep = validate(solve_dcopf(case, ptdf), case, ptdf, droops, Deadband(0.0), sample_wind(wind, 100, 1))
    again = ValidationReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()


def test_shape_mismatch(two_bus):
    case, ptdf, droops, wind = two_bus
    with pytest.raises(ValueError):
        validate(np.zeros(5), case, ptdf, droops, Deadband(0.0), sample_wind(wind, 10, 1))


@pytest.fixture(scope="module")
def reports(rts, deadband, sweep):
    case, ptdf, droops, wind = rts
    sc = sample_wind(wind, 10_000, 42)
    out = [("dcopf", validate(sweep["dcopf"], case, ptdf, droops, deadband, sc), sweep["dcopf"])]
    for eps in EPSILONS:
        for form in ("ccopf", "ccopf-pfr"):
            sol = sweep[form, eps]
            out.append((form, validate(sol, case, ptdf, droops, deadband, sc), sol))
    return out


class TestCompare:
    def test_self_compare(self, reports):
        table = compare([reports[1], reports[1]])
        assert [r.gap_pct for r in table.rows] == [0.0, 0.0]

    def test_csv_header_and_rows(self, reports):
        table = compare(reports, baseline="ccopf")
        text = table.to_csv()
        assert text.splitlines()[0] == ",".join(TABLE_HEADER)
        assert len(text.splitlines()) == 1 + len(reports)
        plot = table.plot_csv().splitlines()
        assert plot[0].startswith("label,epsilon,cost_mean,cost_std")

    def test_timings_can_be_omitted(self, reports):
        text = compare(reports).to_csv(timings=False)
        assert all(line.endswith(",") for line in text.splitlines()[1:])

    def test_pfr_gap_positive(self, reports):
        table = compare(reports, baseline="ccopf")
        for row in table.rows:
            if row.label == "ccopf-pfr":
                assert row.gap_pct > 0

    def test_dcopf_cheapest_and_least_reliable(self, reports):
        det = reports[0]
        for _, rep, sol in reports[1:]:
            assert det[2].objective <= sol.objective
            assert det[1].system_wide_rate >= rep.system_wide_rate

    def test_mismatched_ensembles(self, reports, rts, deadband, sweep):
        case, ptdf, droops, wind = rts
        other = validate(sweep["dcopf"], case, ptdf, droops, deadband, sample_wind(wind, 10_000, 43))
        with pytest.raises(ComparisonError):
            compare([reports[0], ("dcopf", other, sweep["dcopf"])])
        rep = reports[0][1]
        moved = ValidationReport.from_dict({**rep.to_dict(), "case_hash": "0" * 64})
        with pytest.raises(ComparisonError):
            compare([reports[0], ("x", moved, sweep["dcopf"])])
