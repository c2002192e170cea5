"""Exact lattice identities: hand-solved micro cases, independent linear-solve
oracles, closed-form table consistency, and the dynamic program."""

import math

import numpy as np
import pytest

from walkstop import (
    ConvergenceError,
    DiameterReach,
    Drawdown,
    DropDrawdown,
    FirstExit,
    Gap,
    LatticeSpec,
    Rise,
    AbsGap,
    WalkDP,
    absorption_pmf_oracle,
    closed_forms,
    dp_solve,
    exact_stop_steps,
    exact_stop_time,
    exit_stats,
    walk_diameter_pmf,
)

UNIT = LatticeSpec(h=1.0)


# --- first-exit closed form --------------------------------------------------

def test_exit_stats_hand_values():
    s = exit_stats(-1.0, 1.0, 0.0)
    assert s.expected_time == pytest.approx(1.0)
    assert s.prob_hit_lower == pytest.approx(0.5)
    s = exit_stats(-1.0, 2.0, 0.0)
    assert s.expected_time == pytest.approx(2.0)
    assert s.prob_hit_lower == pytest.approx(2.0 / 3.0)
    s = exit_stats(-1.0, 1.0, 0.5)
    assert s.expected_time == pytest.approx(0.75)
    assert s.prob_hit_lower == pytest.approx(0.25)


def test_exit_stats_translation_invariance():
    # the formula depends only on distances to the two boundaries
    s = exit_stats(1.0, 2.0, 1.5)
    assert s.expected_time == pytest.approx(0.25)
    assert s.prob_hit_lower == pytest.approx(0.5)


def test_exit_stats_validation():
    with pytest.raises(ValueError):
        exit_stats(-1.0, 1.0, 1.5)  # start outside the interval
    with pytest.raises(ValueError):
        exit_stats(1.0, -1.0, 0.0)  # inverted interval


# --- terminal pmf of the diameter rule ----------------------------------------

def test_walk_diameter_pmf_small_cases():
    pmf1 = walk_diameter_pmf(1)
    assert pmf1[1] == pytest.approx(0.5) and pmf1[-1] == pytest.approx(0.5)
    pmf2 = walk_diameter_pmf(2)
    assert pmf2[1] == pytest.approx(1.0 / 6.0)
    assert pmf2[2] == pytest.approx(2.0 / 6.0)
    assert sum(pmf2.values()) == pytest.approx(1.0)


def test_walk_diameter_pmf_mass_proportional_to_distance():
    for k in (1, 2, 3, 5, 8, 13):
        pmf = walk_diameter_pmf(k)
        assert sum(pmf.values()) == pytest.approx(1.0, abs=1e-12)
        for x, mass in pmf.items():
            assert mass == pytest.approx(abs(x) / (k * (k + 1)), abs=1e-14)
            assert pmf[-x] == mass  # symmetric


def test_walk_diameter_pmf_second_moment_is_expected_steps():
    # sum x^2 * |x|/(k(k+1)) over -k..k equals k(k+1)/2, the exact mean
    # step count of the diameter rule: the quadratic-martingale identity
    for k in (1, 2, 3, 7, 12):
        pmf = walk_diameter_pmf(k)
        second = sum(x * x * m for x, m in pmf.items())
        assert second == pytest.approx(k * (k + 1) / 2.0, abs=1e-10)
        assert second == pytest.approx(exact_stop_steps(DiameterReach(k), UNIT))


def test_absorption_oracle_matches_pmf():
    for k in range(1, 9):
        pmf = walk_diameter_pmf(k)
        oracle = absorption_pmf_oracle(k)
        assert set(pmf) == set(oracle)
        for x in pmf:
            assert pmf[x] == pytest.approx(oracle[x], abs=1e-10)


def test_absorption_oracle_bounds():
    with pytest.raises(ValueError):
        absorption_pmf_oracle(0)
    with pytest.raises(ValueError):
        absorption_pmf_oracle(13)


# --- exact mean step counts ----------------------------------------------------

def drawdown_steps_by_linear_solve(k: int) -> float:
    """Independent oracle: mean absorption time of the drawdown chain.

    State j = current drawdown in units (0..k-1 live).  From j: up goes to
    max(j-1, 0) (at j=0 a new maximum keeps j=0), down goes to j+1, absorbed
    at j=k.  Solve (I - P) E = 1.
    """
    size = k
    a = np.zeros((size, size))
    b = np.ones(size)
    for j in range(size):
        a[j, j] = 1.0
        up = max(j - 1, 0)
        a[j, up] -= 0.5
        if j + 1 < size:
            a[j, j + 1] -= 0.5
    return float(np.linalg.solve(a, b)[0])


def test_drawdown_steps_against_linear_solve():
    for k in (1, 2, 3, 5, 10, 25):
        assert exact_stop_steps(Drawdown(k), UNIT) == pytest.approx(
            drawdown_steps_by_linear_solve(k), rel=1e-12
        )
        assert exact_stop_steps(Drawdown(k), UNIT) == k * (k + 1)


def test_hand_counts_k1_k2():
    assert exact_stop_steps(Drawdown(1), UNIT) == 2
    assert exact_stop_steps(Rise(1), UNIT) == 2
    assert exact_stop_steps(Gap(1), UNIT) == 5
    assert exact_stop_steps(DropDrawdown(1), UNIT) == 4
    assert exact_stop_steps(DiameterReach(1), UNIT) == 1
    assert exact_stop_steps(FirstExit(-1, 1), UNIT) == 1
    assert exact_stop_steps(Drawdown(2), UNIT) == 6
    assert exact_stop_steps(Gap(2), UNIT) == 16
    assert exact_stop_steps(DiameterReach(2), UNIT) == 3
    assert exact_stop_steps(DropDrawdown(2), UNIT) == 12
    assert exact_stop_steps(FirstExit(-2, 3), UNIT) == 6


def test_two_stage_decomposition_identity():
    """gap(k) = diameter(2k) + drawdown(k): reach range 2d, then the fresh
    one-sided threshold from the worse extreme; also dropdd(k) = 2*drawdown(k)."""
    for k in range(1, 51):
        gap = exact_stop_steps(Gap(k), UNIT)
        assert gap == exact_stop_steps(DiameterReach(2 * k), UNIT) + exact_stop_steps(
            Drawdown(k), UNIT
        )
        assert exact_stop_steps(DropDrawdown(k), UNIT) == 2 * exact_stop_steps(
            Drawdown(k), UNIT
        )


def test_exact_stop_time_scales_with_h():
    spec = LatticeSpec(h=0.1)
    assert exact_stop_time(Gap(1.0), spec) == pytest.approx(
        (3 * 100 + 2 * 10) * 0.01
    )
    assert exact_stop_time(Drawdown(0.5), spec) == pytest.approx(5 * 6 * 0.01)


def test_absgap_has_no_exact_formula():
    with pytest.raises(ValueError):
        exact_stop_steps(AbsGap(1.0), UNIT)


# --- closed-form table ----------------------------------------------------------

def test_closed_forms_values():
    cf = closed_forms(1.0, 0.5)
    assert cf["E_tau_d"] == pytest.approx(0.25)
    assert cf["E_M_tau_d"] == pytest.approx(0.5)
    assert cf["E_T_gap"] == pytest.approx(0.75)
    assert cf["E_D_at_T_gap"] == pytest.approx(1.5)
    assert cf["payoff_gap"] == pytest.approx(0.75)
    assert cf["payoff_gap_opt"] == pytest.approx(0.75)
    assert cf["E_Tplus_derived"] == pytest.approx(0.5)
    assert cf["E_Dplus_at_Tplus_derived"] == pytest.approx(1.0)
    assert cf["payoff_plus"] == pytest.approx(0.5)
    assert cf["payoff_plus_opt"] == pytest.approx(0.5)
    assert cf["E_Tplus_printed"] == pytest.approx(2.0)
    assert cf["E_delta_h"](0.2) == pytest.approx(0.02)
    assert cf["delta_increment"](0.2, 0.6) == pytest.approx((0.36 - 0.04) / 2)


def test_closed_forms_consistency_chain():
    rng = np.random.default_rng(5)
    for c, d in zip(rng.uniform(0.1, 4, 30), rng.uniform(0.05, 3, 30)):
        cf = closed_forms(c, d)
        # stage decomposition: climb to spread 2d, then one fresh threshold
        assert cf["delta_increment"](0.0, 2 * d) + cf["E_tau_d"] == pytest.approx(
            cf["E_T_gap"], rel=1e-12
        )
        assert cf["E_T_gap"] == pytest.approx(3 * d * d, rel=1e-12)
        assert cf["E_Tplus_derived"] == pytest.approx(2 * d * d, rel=1e-12)
        assert cf["payoff_gap"] == pytest.approx(
            cf["E_D_at_T_gap"] - c * cf["E_T_gap"], rel=1e-12
        )
        assert cf["payoff_plus"] == pytest.approx(2 * d - 2 * c * d * d, rel=1e-12)
        # optima over d
        assert cf["payoff_gap_opt"] == pytest.approx(3.0 / (4.0 * c), rel=1e-12)
        assert cf["payoff_plus_opt"] == pytest.approx(1.0 / (2.0 * c), rel=1e-12)
        assert cf["E_Tplus_printed"] == pytest.approx(2.0 / (c * c), rel=1e-12)


def test_payoff_gap_concave_with_argmax_at_half_over_c():
    for c in (0.5, 1.0, 2.5):
        grid = np.linspace(0.05, 1.6 / c, 97)
        values = [closed_forms(c, float(d))["payoff_gap"] for d in grid]
        i = int(np.argmax(values))
        assert grid[i] == pytest.approx(1.0 / (2.0 * c), abs=grid[1] - grid[0])
        diffs2 = np.diff(values, 2)
        assert (diffs2 < 1e-12).all()  # concave along the grid


def test_closed_forms_validation():
    with pytest.raises(ValueError):
        closed_forms(0.0, 1.0)
    with pytest.raises(ValueError):
        closed_forms(1.0, -0.5)


# --- dynamic program -------------------------------------------------------------

def test_walkdp_validation():
    with pytest.raises(ValueError):
        WalkDP(c=0.0, h=0.1, cap=100, tol=1e-8)
    with pytest.raises(ValueError):
        WalkDP(c=1.0, h=-0.1, cap=100, tol=1e-8)
    with pytest.raises(ValueError):
        WalkDP(c=1.0, h=0.1, cap=10, tol=1e-8)  # cap*h = 1 < 3/c
    with pytest.raises(ValueError):
        WalkDP(c=1.0, h=0.1, cap=100, tol=0.0)


def test_dp_small_config_recovers_value_and_boundary():
    h = 0.1
    sol = dp_solve(WalkDP(c=1.0, h=h, cap=60, tol=1e-9))
    # biased continuum value: 0.75 - 2cdh = 0.65 plus O(h^2)
    assert sol.value_origin == pytest.approx(0.65, abs=0.02)
    assert sol.iterations > 0
    units = round(0.5 / h)
    bulk = 60 - 4 * units
    for a in range(bulk + 1):
        row = sol.stop_region[a]
        b_min = int(np.argmax(row))
        if a >= units:
            assert abs(b_min - units) <= 1
        elif a <= units - 2:
            assert b_min > bulk


def test_dp_cap_insensitivity_at_origin():
    # the cap-corner distortion leaks to the origin only through paths that
    # reach the cap before stopping; measured ~5e-6 at cap*h = 6, shrinking
    # with cap, so doubling the margin must not move the origin value
    a = dp_solve(WalkDP(c=1.0, h=0.05, cap=120, tol=1e-9)).value_origin
    b = dp_solve(WalkDP(c=1.0, h=0.05, cap=160, tol=1e-9)).value_origin
    assert a == pytest.approx(b, abs=2e-5)


def test_dp_value_monotone_in_cost():
    values = [
        dp_solve(WalkDP(c=c, h=1.0 / (20.0 * c), cap=80, tol=1e-9)).value_origin
        for c in (0.5, 1.0, 2.0)
    ]
    assert values[0] > values[1] > values[2]
    for c, v in zip((0.5, 1.0, 2.0), values):
        assert v == pytest.approx(3.0 / (4.0 * c), rel=0.15)


def test_dp_nonconvergence_raises():
    with pytest.raises(ConvergenceError):
        dp_solve(WalkDP(c=1.0, h=0.05, cap=120, tol=1e-12), max_iterations=10)
