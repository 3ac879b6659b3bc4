"""Convergence-table battery: desk-scale values frozen as regressions.

The numeric anchors below were produced by this package on the default
grids and cross-checked against the closed forms noted next to them; the
tests freeze them so that refactors of the log-domain plumbing cannot
silently shift the tables.
"""

import math

import numpy as np
import pytest

from gamma_ladder.errors import InsufficientRowsError, NotASaddleError
from gamma_ladder.landscape import functional_G
from gamma_ladder.verify import (
    CSV_HEADER,
    DEFAULT_NS,
    RATE_TOL,
    ZETA_TOL,
    ConvergenceTable,
    check_h1_rates,
    check_h5_separation,
    check_measure_ratios,
    dirac_recovery_table,
    extrapolate,
    laplace_fit,
    level_recovery_table,
    recovery_level_p,
    recovery_saddle,
    saddle_recovery_table,
)

# double well, delta = 0.2
R21 = 23.72349724150551  # 4*pi*sqrt((2 - delta^2/2)*(2 - delta))
SADDLE_GAMMA = 78.1672668566277  # 4*pi^2*(2 - delta^2/2)
DIRAC_TARGET = 21.183906551043037  # 2*(cosh(pi) - 1)

RATE_21 = {
    200: 24.834729461105766,
    400: 24.27442129409059,
    800: 23.997784269002842,
    1600: 23.860346802028598,
}
RATE_12 = {
    200: 4.9576023235649675e-34,
    400: 8.743880014817729e-69,
    800: 2.815532543388423e-138,
    1600: 2.970350182112263e-277,
}
MIX_HALF = {
    200: 12.417364730552507,
    400: 12.137210647045961,
    800: 11.998892134502082,
    1600: 11.930173401012242,
}
SADDLE_VALUES = {
    200: 81.70364985311664,
    400: 79.91421972691221,
    800: 79.03524674287448,
    1600: 78.59986047182316,
}
MINIMUM_VALUES = {
    200: 4.317979107853727e-08,
    400: 1.3786760047317256e-09,
    800: 3.769686404819714e-11,
    1600: 6.652840239840827e-13,
}
DIRAC_VALUES = {
    200: 16.347910170668666,
    400: 18.312889240724704,
    800: 19.59379494311327,
    1600: 20.342343465671146,
}
H5_RATIOS = {
    200: 3.955948209202669e-59,
    400: 2.8227744583265398e-114,
    800: 9.248111364750906e-227,
    1600: 0.0,
}
H5_EXACT = {
    (200, 1): (3784323661191.61, 179467850482067.88),
    (200, 2): (1109182831594.843, 56424246509228.34),
    (400, 1): (5.859746690191959e27, 5.8096277643668594e29),
    (400, 2): (1.6718716168847232e26, 1.7750394305001637e28),
    (800, 1): (9.87126939194797e55, 1.9586972389794893e58),
    (800, 2): (3.377636996176701e54, 7.3187999944154666e56),
    (1600, 1): (2.044255991693016e112, 8.115140244165891e114),
    (1600, 2): (1.0873232106550901e111, 4.758934953145378e113),
}

THREE_WELL_MIX = {
    200: 7.5777552000826125,
    400: 7.111545900017909,
    800: 6.888767950230725,
    1600: 6.779885489565468,
}
THREE_WELL_MIX_TARGET = 6.672645789103963

TWO_DIM_NS = (16, 24, 32, 48)
TWO_DIM_MIX = {
    16: 4.771237879686153,
    24: 4.077299697369602,
    32: 3.737330312718088,
    48: 3.4123547140231225,
}
TWO_DIM_MIX_TARGET = 2.8209335093037966


@pytest.fixture(scope="module")
def rate_tables(double_well):
    return check_h1_rates(double_well, 1)


@pytest.fixture(scope="module")
def mixture(double_well):
    return level_recovery_table(double_well, 1, {1: 0.5, 2: 0.5})


@pytest.fixture(scope="module")
def saddle_table(double_well):
    return saddle_recovery_table(double_well)


@pytest.fixture(scope="module")
def minimum_table(double_well):
    return saddle_recovery_table(double_well, z=0.0)


@pytest.fixture(scope="module")
def dirac_table(single_well):
    return dirac_recovery_table(single_well, [0.25])


@pytest.fixture(scope="module")
def asym_ratios(double_well):
    return check_measure_ratios(double_well)


@pytest.fixture(scope="module")
def sym_ratios(symmetric_double_well):
    return check_measure_ratios(symmetric_double_well)


@pytest.fixture(scope="module")
def separation(double_well):
    return check_h5_separation(double_well)


# ---------------------------------------------------------------------------
# table mechanics


def test_default_grid_and_tolerances():
    assert DEFAULT_NS == (200, 400, 800, 1600)
    assert RATE_TOL == 0.10
    assert ZETA_TOL == 0.15


def test_add_row_records_relative_and_absolute_error():
    t = ConvergenceTable("demo")
    t.add_row(100, 1.1, 1.0)
    t.add_row(200, 0.25, 0.0)  # zero target: absolute error
    assert t.rows[0] == (100, 1.1, 1.0, pytest.approx(0.1, rel=1e-12))
    assert t.rows[1] == (200, 0.25, 0.0, 0.25)
    assert t.ns.tolist() == [100.0, 200.0]
    assert t.values.tolist() == [1.1, 0.25]
    assert t.targets.tolist() == [1.0, 0.0]
    assert t.rel_errors[0] == pytest.approx(0.1, rel=1e-12)


def test_add_row_requires_strictly_increasing_n():
    t = ConvergenceTable("demo")
    t.add_row(100, 1.0, 1.0)
    with pytest.raises(ValueError, match="strictly increasing"):
        t.add_row(100, 2.0, 1.0)
    with pytest.raises(ValueError, match="strictly increasing"):
        t.add_row(99, 2.0, 1.0)


def test_judge_reads_the_last_row_only():
    t = ConvergenceTable("demo")
    t.add_row(100, 1.5, 1.0)
    t.add_row(200, 1.01, 1.0)
    assert t.judge(0.1) == "pass"
    assert t.verdict == "pass"
    assert t.tolerance == 0.1
    assert t.judge(0.001) == "fail"
    assert t.verdict == "fail"


def test_judge_rejects_empty_and_non_finite():
    with pytest.raises(InsufficientRowsError):
        ConvergenceTable("demo").judge(0.1)
    t = ConvergenceTable("demo")
    t.add_row(10, math.inf, 0.0)
    assert t.judge(1e300) == "fail"


def test_to_csv_layout():
    t = ConvergenceTable("demo")
    t.add_row(100, 1.5, 1.0)
    t.add_row(200, 1.25, 1.0)
    assert t.to_csv() == (
        "claim,n,value,target,rel_error\n"
        "demo,100,1.5,1.0,0.5\n"
        "demo,200,1.25,1.0,0.25\n"
    )
    assert t.to_csv().startswith(CSV_HEADER + "\n")


def test_to_json_dict_stringifies_non_finite():
    t = ConvergenceTable("demo")
    t.add_row(10, math.inf, 0.0)
    t.add_row(20, math.nan, 1.0)
    d = t.to_json_dict()
    assert d["claim"] == "demo"
    assert d["fit"] is None and d["verdict"] is None and d["tolerance"] is None
    assert d["rows"][0]["value"] == "inf"
    assert d["rows"][0]["rel_error"] == "inf"
    assert d["rows"][1]["value"] == "nan"
    assert d["rows"][1]["n"] == 20
    t.judge(0.5)
    assert t.to_json_dict()["verdict"] == "fail"
    assert t.to_json_dict()["tolerance"] == 0.5


# ---------------------------------------------------------------------------
# extrapolation


def test_extrapolate_needs_three_rows():
    t = ConvergenceTable("demo")
    t.add_row(100, 1.1, 1.0)
    t.add_row(200, 1.05, 1.0)
    with pytest.raises(InsufficientRowsError):
        extrapolate(t)


def test_extrapolate_identifies_a_power_law():
    t = ConvergenceTable("demo")
    for n in (100, 200, 400, 800):
        t.add_row(n, 2.0 + 5.0 * n**-2.0, 2.0)
    fit = extrapolate(t)
    assert fit["model"] == "power"
    assert fit["exponent"] == pytest.approx(-2.0, rel=1e-9)
    assert fit["limit"] == pytest.approx(2.0, abs=1e-10)
    assert fit["sse"] < 1e-18
    assert fit["decreasing"] is True
    assert t.fit is fit


def test_extrapolate_identifies_an_exponential():
    t = ConvergenceTable("demo")
    for n in (100, 200, 300, 400):
        t.add_row(n, 2.0 - 3e-3 * math.exp(-0.01 * n), 2.0)  # from below
    fit = extrapolate(t)
    assert fit["model"] == "exponential"
    assert fit["exponent"] == pytest.approx(-0.01, rel=1e-9)
    assert fit["limit"] == pytest.approx(2.0, abs=1e-12)
    assert fit["decreasing"] is True


def test_extrapolate_exact_tables_report_exact():
    t = ConvergenceTable("demo")
    for n in (100, 200, 400):
        t.add_row(n, 1.0, 1.0)
    fit = extrapolate(t)
    assert fit == {
        "model": "exact",
        "exponent": -math.inf,
        "sse": 0.0,
        "limit": 1.0,
        "decreasing": True,
    }
    # fewer than three inexact rows also lands in the exact branch
    t2 = ConvergenceTable("demo")
    t2.add_row(100, 1.0, 1.0)
    t2.add_row(200, 1.0, 1.0)
    t2.add_row(400, 1.5, 1.0)
    t2.add_row(800, 1.0, 1.0)
    assert extrapolate(t2)["model"] == "exact"
    assert extrapolate(t2)["limit"] == 1.0


def test_extrapolate_flags_non_monotone_deviations():
    t = ConvergenceTable("demo")
    for n, dev in zip((100, 200, 400, 800), (0.1, 0.2, 0.05, 0.01)):
        t.add_row(n, 1.0 + dev, 1.0)
    assert extrapolate(t)["decreasing"] is False


# ---------------------------------------------------------------------------
# sped-up mean rates


def test_rate_table_keys_and_claims(rate_tables):
    assert set(rate_tables) == {(1, 2), (2, 1)}
    assert rate_tables[(2, 1)].claim == "well-rate-scale1-2-to-1"
    assert rate_tables[(1, 2)].claim == "well-rate-scale1-1-to-2"


def test_shallow_escape_rate_approaches_reduced_rate(rate_tables):
    t = rate_tables[(2, 1)]
    assert t.targets.tolist() == pytest.approx([R21] * 4, rel=1e-12)
    for n, value, _, _ in t.rows:
        assert value == pytest.approx(RATE_21[n], rel=1e-9)
    assert np.all(np.diff(t.rel_errors) < 0.0)
    assert t.rows[-1][3] == pytest.approx(0.005768523887096357, rel=1e-6)
    assert t.judge(RATE_TOL) == "pass"


def test_deep_exit_is_exponentially_suppressed_at_scale_one(rate_tables):
    t = rate_tables[(1, 2)]
    assert t.targets.tolist() == [0.0] * 4
    for n, value, _, err in t.rows:
        assert value == pytest.approx(RATE_12[n], rel=1e-6)
        assert err == value  # absolute error against a zero target
    assert np.all(np.diff(t.values) < 0.0)


def test_rate_fit_extrapolates_to_the_reduced_rate(rate_tables):
    fit = extrapolate(rate_tables[(2, 1)])
    assert fit["model"] == "power"
    assert fit["exponent"] == pytest.approx(-1.0070659944711948, rel=1e-9)
    assert fit["limit"] == pytest.approx(23.72369961355718, rel=1e-9)
    assert abs(fit["limit"] - R21) < 1e-3
    assert fit["decreasing"] is True


# ---------------------------------------------------------------------------
# deep-well mixture recovery


def test_mixture_table_tracks_the_reduced_functional(mixture):
    table, _ = mixture
    assert table.claim == "mixture-recovery-scale1"
    assert table.targets.tolist() == pytest.approx([R21 / 2.0] * 4, rel=1e-12)
    for n, value, _, _ in table.rows:
        assert value == pytest.approx(MIX_HALF[n], rel=1e-9)
    assert np.all(np.diff(table.rel_errors) < 0.0)
    assert table.judge(0.15) == "pass"


def test_mixture_recovery_routes_agree_and_mass_is_unit(mixture):
    _, recoveries = mixture
    assert [rec.n for rec in recoveries] == list(DEFAULT_NS)
    for rec in recoveries:
        assert rec.level == 1
        assert rec.z_n == pytest.approx(1.0, abs=1e-9)
        assert rec.theta_trace == pytest.approx(rec.theta_full, rel=1e-9)
        assert rec.theta_full >= 0.0
        assert rec.log_valley_mass <= 1e-9
        assert rec.measure.total() == pytest.approx(1.0, rel=1e-9)


def test_mixture_weights_are_validated(double_well):
    with pytest.raises(ValueError, match="strictly positive"):
        recovery_level_p(double_well, 200, 1, {1: 0.5, 2: -0.1})
    with pytest.raises(ValueError, match="weight"):
        recovery_level_p(double_well, 200, 1, np.array([0.5]))
    with pytest.raises(KeyError):
        recovery_level_p(double_well, 200, 1, {1: 0.5})


def test_three_well_second_scale_mixture(three_well):
    table, recoveries = level_recovery_table(three_well, 2, {1: 0.25, 2: 0.75})
    assert table.claim == "mixture-recovery-scale2"
    assert table.targets.tolist() == pytest.approx([THREE_WELL_MIX_TARGET] * 4, rel=1e-9)
    for n, value, _, _ in table.rows:
        assert value == pytest.approx(THREE_WELL_MIX[n], rel=1e-9)
    assert np.all(np.diff(table.rel_errors) < 0.0)
    for rec in recoveries:
        assert rec.z_n == pytest.approx(1.0, abs=1e-9)


def test_recovering_the_limit_split_costs_nothing(three_well):
    # omega equal to the limit fractions makes the density constant on the
    # valley union up to rounding of the tied well masses, so the sped-up
    # functional collapses instead of sitting near the reduced value ~6.67
    rec = recovery_level_p(three_well, 400, 2, (0.5, 0.5))
    assert rec.theta_full <= 1e-12
    assert rec.theta_trace <= 1e-12
    assert rec.z_n == pytest.approx(1.0, abs=1e-9)


def test_two_dim_mixture_recovery_uses_the_solver_route(two_dim_well):
    table, recoveries = level_recovery_table(
        two_dim_well, 1, {1: 0.4, 2: 0.3, 3: 0.2, 4: 0.1}, ns=TWO_DIM_NS
    )
    assert table.targets.tolist() == pytest.approx([TWO_DIM_MIX_TARGET] * 4, rel=1e-9)
    for n, value, _, _ in table.rows:
        assert value == pytest.approx(TWO_DIM_MIX[n], rel=1e-9)
    assert np.all(np.diff(table.rel_errors) < 0.0)
    for rec in recoveries:
        assert rec.z_n == pytest.approx(1.0, abs=1e-6)
        # the routes are tied through the normalizations, not equal outright:
        # on coarse grids the valley union carries visibly less than full mass
        assert rec.theta_full * rec.z_n == pytest.approx(
            rec.theta_trace * math.exp(rec.log_valley_mass), rel=1e-6
        )


# ---------------------------------------------------------------------------
# saddle and point recoveries


def test_saddle_recovery_approaches_the_saddle_curvature(saddle_table):
    table, recoveries = saddle_table
    assert table.claim == "saddle-recovery-0p265942"
    assert table.targets.tolist() == pytest.approx([SADDLE_GAMMA] * 4, rel=1e-12)
    for n, value, _, _ in table.rows:
        assert value == pytest.approx(SADDLE_VALUES[n], rel=1e-9)
    assert np.all(np.diff(table.rel_errors) < 0.0)
    assert table.judge(ZETA_TOL) == "pass"
    for rec in recoveries:
        assert rec.measure.total() == pytest.approx(1.0, rel=1e-9)


def test_recovery_at_a_minimum_vanishes(minimum_table):
    table, _ = minimum_table
    assert table.claim == "saddle-recovery-0"
    assert table.targets.tolist() == [0.0] * 4
    for n, value, _, err in table.rows:
        assert value == pytest.approx(MINIMUM_VALUES[n], rel=1e-6)
        assert err == value
    assert table.rows[-1][1] < 1e-3


def test_saddle_recovery_rejects_bad_windows_and_points(double_well, two_dim_well):
    with pytest.raises(ValueError, match="exponent"):
        recovery_saddle(double_well, 200, epsilon_exponent=1.0 / 3.0)
    with pytest.raises(ValueError, match="exponent"):
        recovery_saddle(double_well, 200, epsilon_exponent=0.5)
    with pytest.raises(NotASaddleError):
        recovery_saddle(double_well, 200, z=0.1)  # not a critical point
    top = next(p for p in two_dim_well.critical_points if p.kind == "higher-index")
    with pytest.raises(NotASaddleError):
        recovery_saddle(two_dim_well, 16, z=top.location)
    rec = recovery_saddle(double_well, 200, epsilon_exponent=0.45)
    assert math.isfinite(rec.value)


def test_point_mass_recovery_matches_the_local_rate(dirac_table, single_well):
    table, recoveries = dirac_table
    assert table.claim == "point-recovery-0p25"
    assert table.targets.tolist() == pytest.approx([DIRAC_TARGET] * 4, rel=1e-12)
    assert table.targets[0] == pytest.approx(
        functional_G(single_well.potential, np.array([0.25])), rel=1e-12
    )
    assert table.targets[0] == pytest.approx(2.0 * (math.cosh(math.pi) - 1.0), rel=1e-12)
    for n, value, _, _ in table.rows:
        assert value == pytest.approx(DIRAC_VALUES[n], rel=1e-9)
    assert np.all(np.diff(table.rel_errors) < 0.0)
    assert table.judge(0.05) == "pass"
    for rec in recoveries:
        assert np.allclose(rec.location, [0.25])


# ---------------------------------------------------------------------------
# stationary mass ratios


def test_symmetric_wells_split_mass_evenly(sym_ratios):
    for j in (1, 2):
        t = sym_ratios.fraction_tables[(1, j)]
        assert t.targets.tolist() == [0.5] * 4
        for _, value, _, _ in t.rows:
            assert abs(value - 0.5) <= 1e-10
    assert set(sym_ratios.ratio_tables) == {(1, 1, 1), (1, 2, 2)}
    for t in sym_ratios.ratio_tables.values():
        for _, value, target, err in t.rows:
            assert value == 1.0 and target == 1.0 and err == 0.0
    for _, value, _, _ in sym_ratios.mass_tables[1].rows:
        assert value == pytest.approx(1.0, abs=1e-9)


def test_asymmetric_wells_concentrate_on_the_deep_one(asym_ratios):
    deep = asym_ratios.fraction_tables[(1, 1)]
    shallow = asym_ratios.fraction_tables[(1, 2)]
    assert deep.targets.tolist() == [1.0] * 4
    assert shallow.targets.tolist() == [0.0] * 4
    for _, value, _, _ in deep.rows:
        assert value == pytest.approx(1.0, abs=1e-12)
    for _, value, _, _ in shallow.rows:
        assert 0.0 < value < 1e-30
    assert np.all(np.diff(shallow.values) < 0.0)


def test_shallow_fraction_decays_at_the_depth_gap(asym_ratios, double_well):
    prefactor, rate = laplace_fit(asym_ratios.log_fractions[(1, 2)])
    assert prefactor == pytest.approx(1.1059715114272135, rel=1e-9)
    assert rate == pytest.approx(0.40000023763573334, rel=1e-9)
    assert rate == pytest.approx(0.4, abs=1e-5)  # the depth difference
    g1 = double_well.wells.well(1).minimum.gamma
    g2 = double_well.wells.well(2).minimum.gamma
    assert abs(prefactor - g2 / g1) / (g2 / g1) <= 0.10


def test_laplace_fit_is_exact_on_synthetic_decay():
    samples = [(n, math.log(2.5) - 0.3 * n) for n in (10, 20, 40)]
    prefactor, rate = laplace_fit(samples)
    assert prefactor == pytest.approx(2.5, rel=1e-12)
    assert rate == pytest.approx(0.3, rel=1e-12)
    with pytest.raises(InsufficientRowsError):
        laplace_fit([(10, -1.0)])


def test_three_well_fractions_across_both_scales(three_well):
    ratios = check_measure_ratios(three_well)
    for key in ((1, 1), (1, 2), (2, 1), (2, 2)):
        t = ratios.fraction_tables[key]
        assert t.targets.tolist() == [0.5] * 4
        for _, value, _, _ in t.rows:
            assert abs(value - 0.5) <= 1e-10
    dead = ratios.fraction_tables[(1, 3)]
    assert dead.targets.tolist() == [0.0] * 4
    for _, value, _, _ in dead.rows:
        assert 0.0 <= value < 1e-30
    for p in (1, 2):
        for _, value, _, _ in ratios.mass_tables[p].rows:
            assert value == pytest.approx(1.0, abs=1e-6)


def test_two_dim_four_fold_symmetry(two_dim_well):
    ratios = check_measure_ratios(two_dim_well, ns=TWO_DIM_NS)
    for j in (1, 2, 3, 4):
        t = ratios.fraction_tables[(1, j)]
        assert t.targets.tolist() == [0.25] * 4
        for _, value, _, _ in t.rows:
            assert value == pytest.approx(0.25, abs=1e-12)
    mass = ratios.mass_tables[1]
    assert np.all(np.diff(mass.values) > 0.0)
    assert mass.rows[-1][1] == pytest.approx(1.0, abs=1e-2)
    assert np.all(mass.values <= 1.0 + 1e-12)


# ---------------------------------------------------------------------------
# separation of time scales


def test_relaxation_over_crossing_scale_collapses(separation):
    t = separation.table
    assert t.claim == "well-relaxation-over-crossing-scale"
    assert t.targets.tolist() == [0.0] * 4
    for n, value, _, err in t.rows:
        if H5_RATIOS[n] == 0.0:
            assert value == 0.0
        else:
            assert value == pytest.approx(H5_RATIOS[n], rel=1e-6)
        assert err == value
    assert np.all(np.diff(t.values) <= 0.0)
    assert t.judge(1e-2) == "pass"


def test_exact_relaxation_constant_never_exceeds_the_path_bound(separation):
    assert len(separation.exact_rows) == 8
    seen = set()
    for n, label, exact, bound in separation.exact_rows:
        seen.add((n, label))
        assert exact is not None
        assert exact <= bound
        frozen_exact, frozen_bound = H5_EXACT[(n, label)]
        assert exact == pytest.approx(frozen_exact, rel=1e-6)
        assert bound == pytest.approx(frozen_bound, rel=1e-6)
    assert seen == set(H5_EXACT)


def test_worst_bound_matches_the_tabulated_rows(separation):
    by_n = {}
    for n, _, _, bound in separation.exact_rows:
        by_n.setdefault(n, []).append(bound)
    assert [n for n, _ in separation.log_beta] == list(DEFAULT_NS)
    for n, log_beta in separation.log_beta:
        assert log_beta == pytest.approx(math.log(max(by_n[n])), rel=1e-12)
    betas = [b for _, b in separation.log_beta]
    assert np.all(np.diff(betas) > 0.0)
