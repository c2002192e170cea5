"""Exact, simulation-free results for the lattice walk and its continuum limit.

Contents: first-exit moments, the exact termination pmf of the walk stopped
at a target diameter (with an independent absorbing-chain oracle), exact
expected step counts for the lattice stopping rules, the table of continuum
closed forms the simulations must reproduce, and a value-iteration dynamic
program that recovers the optimal gap threshold and payoff from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .path_engine import LatticeSpec
from .stopping_rules import (
    DiameterReach,
    Drawdown,
    DropDrawdown,
    FirstExit,
    Gap,
    Rise,
    StopRule,
    rule_units,
)

__all__ = [
    "ExitStats",
    "exit_stats",
    "walk_diameter_pmf",
    "absorption_pmf_oracle",
    "exact_stop_steps",
    "exact_stop_time",
    "closed_forms",
    "WalkDP",
    "DPSolution",
    "ConvergenceError",
    "dp_solve",
]


@dataclass(frozen=True)
class ExitStats:
    """Moments of the first exit from an interval, started inside it."""

    expected_time: float
    prob_hit_lower: float


def exit_stats(lo: float, hi: float, x: float) -> ExitStats:
    """Expected exit time (x - lo)(hi - x) and lower-boundary probability.

    Exact for the continuum limit and, with all three arguments on the
    lattice, exact for the walk as well (in walk time units of h^2 per
    step the identities are unchanged).
    """
    if not (lo < hi):
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    if not (lo <= x <= hi):
        raise ValueError(f"start {x} outside [{lo}, {hi}]")
    return ExitStats(
        expected_time=(x - lo) * (hi - x),
        prob_hit_lower=(hi - x) / (hi - lo),
    )


def walk_diameter_pmf(hdiam: int) -> dict[int, float]:
    """Termination pmf of the unit walk stopped at first diameter hdiam.

    Mass |x| / (hdiam*(hdiam+1)) at each x in [-hdiam, hdiam] except 0;
    positions are relative to the start.
    """
    k = int(hdiam)
    if k != hdiam or k < 1:
        raise ValueError(f"hdiam must be a positive integer, got {hdiam}")
    denom = k * (k + 1)
    return {x: abs(x) / denom for x in range(-k, k + 1) if x != 0}


def absorption_pmf_oracle(hdiam: int) -> dict[int, float]:
    """Same pmf computed by exact absorption analysis, with no formula.

    Enumerates the finite transient space of (position, running max,
    running min) with diameter < hdiam and solves the absorbing-chain
    linear system for the distribution of the position at first diameter
    hdiam.  Kept to hdiam <= 12 so the dense solve stays tiny.
    """
    k = int(hdiam)
    if k != hdiam or not (1 <= k <= 12):
        raise ValueError(f"hdiam must be an integer in [1, 12], got {hdiam}")

    index: dict[tuple[int, int, int], int] = {}
    for diam in range(k):
        for top in range(diam + 1):
            bot = top - diam
            for x in range(bot, top + 1):
                index[(x, top, bot)] = len(index)

    terminals = [x for x in range(-k, k + 1) if x != 0]
    t_index = {x: i for i, x in enumerate(terminals)}
    nt = len(index)
    trans = np.zeros((nt, nt))
    absorb = np.zeros((nt, len(terminals)))
    for (x, top, bot), i in index.items():
        for step in (1, -1):
            x2 = x + step
            top2 = max(top, x2)
            bot2 = min(bot, x2)
            if top2 - bot2 == k:
                absorb[i, t_index[x2]] += 0.5
            else:
                trans[i, index[(x2, top2, bot2)]] += 0.5

    hit = np.linalg.solve(np.eye(nt) - trans, absorb)
    start = index[(0, 0, 0)]
    return {x: float(hit[start, t_index[x]]) for x in terminals}


def exact_stop_steps(rule: StopRule, spec: LatticeSpec) -> float:
    """Exact expected number of walk steps until the rule fires.

    Closed forms in lattice units k = threshold/h: diameter k(k+1)/2,
    drawdown (and rise) k(k+1), gap 3k^2 + 2k, drop-drawdown 2k^2 + 2k,
    first exit (-lo)(hi)/h^2.  No exact form is implemented for AbsGap.
    """
    kind, k, klo, khi = rule_units(rule, spec)
    if kind == "diam":
        return k * (k + 1) / 2.0
    if kind in ("drawdown", "rise"):
        return float(k * (k + 1))
    if kind == "gap":
        return float(3 * k * k + 2 * k)
    if kind == "dropdd":
        return float(2 * k * k + 2 * k)
    if kind == "exit":
        return float(-klo * khi)
    raise ValueError(f"no exact expected step count for rule {rule!r}")


def exact_stop_time(rule: StopRule, spec: LatticeSpec) -> float:
    """Exact expected stopping time of the rule on the lattice (steps x h^2)."""
    return exact_stop_steps(rule, spec) * spec.time_per_step


def closed_forms(c: float, d: float) -> dict:
    """Continuum closed-form table for cost rate c and threshold d.

    Scalar entries are the expectations and payoffs the simulations
    reproduce; `E_delta_h` and `delta_increment` are callables because
    they take their own level arguments.  Both candidate values for the
    mean drop-drawdown time are reported: `E_Tplus_derived` (2d^2, the
    value consistent with the payoff 2d - 2cd^2 and the sqrt(2) ratio)
    and `E_Tplus_printed` (2/c^2); simulation adjudicates between them.
    """
    if not (c > 0.0):
        raise ValueError(f"c must be positive, got {c}")
    if not (d > 0.0):
        raise ValueError(f"d must be positive, got {d}")
    return {
        "E_tau_d": d * d,
        "E_M_tau_d": d,
        "E_delta_h": lambda h: h * h / 2.0,
        "delta_increment": lambda h1, h2: (h2 * h2 - h1 * h1) / 2.0,
        "E_T_gap": 3.0 * d * d,
        "E_D_at_T_gap": 3.0 * d,
        "payoff_gap": 3.0 * d - 3.0 * c * d * d,
        "payoff_gap_opt": 3.0 / (4.0 * c),
        "E_Tplus_derived": 2.0 * d * d,
        "E_Tplus_printed": 2.0 / (c * c),
        "E_Dplus_at_Tplus_derived": 2.0 * d,
        "payoff_plus": 2.0 * d - 2.0 * c * d * d,
        "payoff_plus_opt": 1.0 / (2.0 * c),
    }


class ConvergenceError(RuntimeError):
    """Value iteration failed to reach the requested tolerance."""


@dataclass(frozen=True)
class WalkDP:
    """Lattice dynamic program for the time-costed range reward.

    State (a, b) = (lattice distance below the running max, lattice
    distance above the running min); stopping pays (a+b)*h, each step
    costs c*h^2.  States with a = cap or b = cap are forced stops.
    """

    c: float
    h: float
    cap: int
    tol: float

    def __post_init__(self) -> None:
        if not (self.c > 0.0):
            raise ValueError(f"c must be positive, got {self.c}")
        if not (self.h > 0.0):
            raise ValueError(f"h must be positive, got {self.h}")
        if int(self.cap) != self.cap or self.cap < 2:
            raise ValueError(f"cap must be an integer >= 2, got {self.cap}")
        if self.cap * self.h < 3.0 / self.c - 1e-9:
            raise ValueError(
                f"cap*h = {self.cap * self.h} must reach 3/c = {3.0 / self.c} "
                "so the forced boundary sits beyond the stopping region"
            )
        if not (self.tol > 0.0):
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class DPSolution:
    """Solved value at the origin, stop-region bitmap, and sweep count."""

    value_origin: float
    stop_region: np.ndarray
    iterations: int


def _continuation(values: np.ndarray, cap: int, step_cost: float) -> np.ndarray:
    """One-step lookahead over interior states (a, b) in [0, cap-1]^2.

    An up step goes to (max(a-1, 0), b+1); a down step to (a+1, max(b-1, 0)).
    """
    up = np.empty((cap, cap))
    up[0, :] = values[0, 1 : cap + 1]
    up[1:, :] = values[0 : cap - 1, 1 : cap + 1]
    down = np.empty((cap, cap))
    down[:, 0] = values[1 : cap + 1, 0]
    down[:, 1:] = values[1 : cap + 1, 0 : cap - 1]
    return 0.5 * (up + down) - step_cost


def dp_solve(spec: WalkDP, max_iterations: int = 200_000) -> DPSolution:
    """Synchronous value iteration from the stop-value initial guess.

    Iterates V <- max(stop, expected next V - c*h^2) until the sup-norm
    change drops below spec.tol; raises ConvergenceError if the budget is
    exhausted.  The stop region marks states where stopping is within tol
    of optimal (stop preferred at ties), with the forced cap boundary
    always a stop.
    """
    cap = spec.cap
    step_cost = spec.c * spec.h * spec.h
    levels = np.arange(cap + 1, dtype=float)
    stop_values = (levels[:, None] + levels[None, :]) * spec.h

    values = stop_values.copy()
    iterations = 0
    residual = np.inf
    while iterations < max_iterations:
        cont = _continuation(values, cap, step_cost)
        new_values = stop_values.copy()
        np.maximum(stop_values[:cap, :cap], cont, out=new_values[:cap, :cap])
        residual = float(np.max(np.abs(new_values - values)))
        values = new_values
        iterations += 1
        if residual < spec.tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence after {max_iterations} sweeps "
            f"(last sup-norm change {residual:.3e}, tol {spec.tol:.3e})"
        )

    cont = _continuation(values, cap, step_cost)
    stop_region = np.ones((cap + 1, cap + 1), dtype=bool)
    stop_region[:cap, :cap] = stop_values[:cap, :cap] >= cont - spec.tol
    return DPSolution(
        value_origin=float(values[0, 0]),
        stop_region=stop_region,
        iterations=iterations,
    )
