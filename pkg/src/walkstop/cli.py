"""Command-line interface: every verification as a reproducible batch command.

Seven subcommands (simulate, bounds, dist, qcheck, dp, sweep, closed-forms)
emit machine-readable JSON (or CSV tables) with a fixed schema:
{command, params, results, censored, runtime_s, seed} plus a timestamp;
`--no-meta` drops the timestamp and runtime so identical flags and seed
produce byte-identical output.  Exit codes: 0 success, 1 validation error,
2 when `--assert` is passed and a documented check fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from .exact_walk import (
    WalkDP,
    closed_forms,
    dp_solve,
    walk_diameter_pmf,
)
from .mc_harness import (
    REWARD_NAMES,
    Z99,
    Empirical,
    Exponential,
    Uniform,
    VShape,
    collect_rewards,
    gof_test,
    levy_samples,
    ratio_report,
    stats_from_sample,
    sweep_payoff,
)
from .path_engine import LatticeError, LatticeSpec
from .q_process import QParams, payoff, q_gap_form, q_value
from .stopping_rules import (
    AbsGap,
    DiameterReach,
    Drawdown,
    DropDrawdown,
    FirstExit,
    Gap,
    Rise,
)

__all__ = ["main"]

_PROG = "walkstop"

_RULE_BUILDERS = {
    "drawdown": Drawdown,
    "rise": Rise,
    "absgap": AbsGap,
    "gap": Gap,
    "dropdd": DropDrawdown,
}


class _CheckFailure(Exception):
    """Carries the list of failed --assert checks."""

    def __init__(self, failures: list[str]):
        super().__init__("; ".join(failures))
        self.failures = failures


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports argument errors on stderr with exit 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{_PROG}: argument error: {message}\n")
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: MDL_SEED env var, else 0)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results never depend on this)")
    p.add_argument("--format", choices=("json", "csv"), default="json", dest="out_format", help="output format")
    p.add_argument("--out", default=None, help="write output to this file instead of stdout")
    p.add_argument("--no-meta", action="store_true", dest="no_meta", help="omit timestamp and runtime from the output")
    p.add_argument("--assert", action="store_true", dest="run_checks", help="exit 2 unless all documented checks pass")


def _build_parser() -> _Parser:
    parser = _Parser(prog=_PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="Monte Carlo estimate of one reward under one stopping rule")
    p.add_argument("--rule", choices=tuple(_RULE_BUILDERS) + ("diameter", "exit"), default="gap")
    p.add_argument("--d", type=float, default=1.0, help="threshold for drawdown/rise/absgap/gap/dropdd")
    p.add_argument("--hdiam", type=float, default=None, help="target diameter for --rule diameter")
    p.add_argument("--lo", type=float, default=None, help="lower boundary for --rule exit")
    p.add_argument("--hi", type=float, default=None, help="upper boundary for --rule exit")
    p.add_argument("--reward", choices=REWARD_NAMES, default="stop_time")
    p.add_argument("--h", type=float, default=None, help="lattice step (default: scale/20)")
    p.add_argument("--trials", type=int, default=100_000)
    _add_common(p)

    p = sub.add_parser("bounds", help="ratio reports for the gap, drop-drawdown, and drawdown rules")
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--h", type=float, default=None, help="lattice step (default: d/20)")
    p.add_argument("--trials", type=int, default=100_000)
    _add_common(p)

    p = sub.add_parser("dist", help="goodness-of-fit battery: exponential, uniform, V-shaped, reflection identity")
    p.add_argument("--d", type=float, default=1.0, help="threshold scale for the exponential/uniform laws")
    p.add_argument("--h", type=float, default=None, help="lattice step (default: d/160; keep fine so positional atoms stay below KS resolution)")
    p.add_argument("--trials", type=int, default=10_000, help="sample size per test (keep near 1e4: the targets are continuum laws)")
    p.add_argument("--chi-k", type=int, default=4, dest="chi_k", help="diameter (lattice units) for the termination-count chi-square")
    p.add_argument("--t", type=float, default=1.0, help="fixed time for the two-sample reflection-identity test")
    p.add_argument("--expected", action="store_true", help="CSV: emit the exact termination pmf (bin,mass) instead of observed counts")
    _add_common(p)

    p = sub.add_parser("qcheck", help="value-function property grid: nonnegativity, identities, continuity")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=200, help="N: the randomized domain grid has N^2 points")
    _add_common(p)

    p = sub.add_parser("dp", help="lattice dynamic program for the optimal threshold and payoff")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--h", type=float, default=None, help="lattice step (default: 1/(40c))")
    p.add_argument("--cap", type=int, default=None, help="state cap in lattice units (default: 5/(c*h))")
    p.add_argument("--tol", type=float, default=1e-10)
    _add_common(p)

    p = sub.add_parser("sweep", help="payoff curve over a grid of gap thresholds")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--grid", default="0.25,0.5,0.75,1.0", help="comma-separated thresholds")
    p.add_argument("--h", type=float, default=None, help="lattice step (default: min(grid)/40)")
    p.add_argument("--trials", type=int, default=4000)
    _add_common(p)

    p = sub.add_parser("closed-forms", help="exact closed-form table for (c, d)")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--d", type=float, default=0.5)
    _add_common(p)

    return parser


def _stats_dict(st) -> dict:
    return {
        "mean": st.mean,
        "ci_low": st.ci_low,
        "ci_high": st.ci_high,
        "n": st.n,
        "variance": st.variance,
    }


def _ratio_dict(rep) -> dict:
    return {
        "ratio": rep.ratio,
        "ci_low": rep.ratio_ci[0],
        "ci_high": rep.ratio_ci[1],
        "reward_mean": rep.reward_mean.mean,
        "terminal_second_moment": rep.terminal_second_moment.mean,
        "n": rep.reward_mean.n,
    }


def _flat_rows(results: dict, prefix: str = "") -> list[tuple[str, object]]:
    rows: list[tuple[str, object]] = []
    for key, val in results.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            rows.extend(_flat_rows(val, prefix=f"{name}."))
        else:
            rows.append((name, val))
    return rows


# --- command handlers ------------------------------------------------------
# Each returns (params, results, censored, table) where table is an optional
# (header, rows) pair used for CSV output, and raises _CheckFailure when
# --assert is set and a documented check fails (after output is assembled by
# the caller).


def _cmd_simulate(args):
    if args.rule in _RULE_BUILDERS:
        scale = args.d
        rule = _RULE_BUILDERS[args.rule](args.d)
    elif args.rule == "diameter":
        if args.hdiam is None:
            raise ValueError("--rule diameter requires --hdiam")
        scale = args.hdiam
        rule = DiameterReach(args.hdiam)
    else:
        if args.lo is None or args.hi is None:
            raise ValueError("--rule exit requires --lo and --hi")
        scale = max(-args.lo, args.hi)
        rule = FirstExit(args.lo, args.hi)
    h = args.h if args.h is not None else scale / 20.0
    spec = LatticeSpec(h=h)
    st_result = collect_rewards(
        rule, (args.reward,), spec, args.trials, args.seed, args.workers
    )
    st = stats_from_sample(st_result.values[args.reward])
    params = {
        "rule": args.rule,
        "d": args.d if args.rule in _RULE_BUILDERS else None,
        "hdiam": args.hdiam,
        "lo": args.lo,
        "hi": args.hi,
        "reward": args.reward,
        "h": h,
        "trials": args.trials,
    }
    results = {"estimate": _stats_dict(st)}
    table = (("key", "value"), _flat_rows(results))
    failures = []
    if st.censored:
        failures.append(f"censored trials: {st.censored} (expected 0)")
    return params, results, st.censored, table, failures


_BOUNDS_WINDOWS = {
    # rule key -> (reward, window_low, window_high, exact constant)
    "gap_ratio": ("diameter", 1.70, 1.77, math.sqrt(3.0)),
    "drop_ratio": ("drop_sup", 1.39, 1.45, math.sqrt(2.0)),
    "max_ratio": ("max", 0.97, 1.03, 1.0),
}


def _cmd_bounds(args):
    h = args.h if args.h is not None else args.d / 20.0
    spec = LatticeSpec(h=h)
    rules = {
        "gap_ratio": Gap(args.d),
        "drop_ratio": DropDrawdown(args.d),
        "max_ratio": Drawdown(args.d),
    }
    results = {}
    censored = 0
    failures = []
    for key, rule in rules.items():
        reward, lo, hi, const = _BOUNDS_WINDOWS[key]
        rep = ratio_report(rule, reward, spec, args.trials, args.seed, args.workers)
        results[key] = _ratio_dict(rep)
        censored += rep.reward_mean.censored
        se = (rep.ratio_ci[1] - rep.ratio_ci[0]) / (2.0 * Z99)
        # accept if inside the published window (calibrated for desk-scale
        # runs) or within 3 standard errors of the exact constant, so the
        # check stays honest at small --trials
        in_window = lo <= rep.ratio <= hi
        near_const = abs(rep.ratio - const) <= 3.0 * se
        if not in_window and not near_const:
            failures.append(
                f"{key} = {rep.ratio:.4f} outside [{lo}, {hi}] and more than "
                f"3 standard errors from {const:.4f}"
            )
    if censored:
        failures.append(f"censored trials: {censored} (expected 0)")
    params = {"d": args.d, "h": h, "trials": args.trials}
    table = (
        ("rule", "ratio", "ci_low", "ci_high", "reward_mean", "terminal_second_moment"),
        [
            (k, v["ratio"], v["ci_low"], v["ci_high"], v["reward_mean"], v["terminal_second_moment"])
            for k, v in results.items()
        ],
    )
    return params, results, censored, table, failures


def _cmd_dist(args):
    h = args.h if args.h is not None else args.d / 160.0
    spec = LatticeSpec(h=h)
    n = args.trials
    censored = 0

    exp_run = collect_rewards(Drawdown(args.d), ("max",), spec, n, args.seed, args.workers)
    censored += exp_run.censored
    exp_sample = exp_run.values["max"][exp_run.fired]
    exp_res = gof_test(exp_sample, Exponential(mean=args.d))

    uni_run = collect_rewards(DiameterReach(args.d), ("max",), spec, n, args.seed + 1, args.workers)
    censored += uni_run.censored
    uni_sample = uni_run.values["max"][uni_run.fired]
    uni_res = gof_test(uni_sample, Uniform(hi=args.d))

    unit = LatticeSpec(h=1.0)
    chi_run = collect_rewards(
        DiameterReach(float(args.chi_k)), ("terminal_x",), unit, n, args.seed + 2, args.workers
    )
    censored += chi_run.censored
    chi_sample = chi_run.values["terminal_x"][chi_run.fired]
    chi_res = gof_test(chi_sample, VShape(hdiam=args.chi_k))

    drop_sample, abs_sample = levy_samples(args.t, spec, n, args.seed + 3, args.workers)
    levy_res = gof_test(drop_sample, Empirical(values=abs_sample))

    results = {
        "exp_ks": {"statistic": exp_res.statistic, "p_value": exp_res.p_value},
        "uniform_ks": {"statistic": uni_res.statistic, "p_value": uni_res.p_value},
        "vshape_chi2": {"statistic": chi_res.statistic, "p_value": chi_res.p_value},
        "levy_ks": {"statistic": levy_res.statistic, "p_value": levy_res.p_value},
    }
    params = {
        "d": args.d,
        "h": h,
        "trials": n,
        "chi_k": args.chi_k,
        "t": args.t,
    }
    if args.expected:
        pmf = walk_diameter_pmf(args.chi_k)
        table = (("bin", "mass"), [(x, pmf[x]) for x in sorted(pmf)])
    else:
        xs, counts = np.unique(chi_sample.astype(int), return_counts=True)
        table = (("x", "count"), list(zip(xs.tolist(), counts.tolist())))
    failures = [
        f"{name} p_value = {res['p_value']:.5f} <= 0.01"
        for name, res in results.items()
        if not res["p_value"] > 0.01
    ]
    if censored:
        failures.append(f"censored trials: {censored} (expected 0)")
    return params, results, censored, table, failures


def _cmd_qcheck(args):
    c = args.c
    if not (c > 0.0):
        raise ValueError(f"--c must be positive, got {c}")
    if args.grid < 2:
        raise ValueError(f"--grid must be >= 2, got {args.grid}")
    n_points = args.grid * args.grid
    rng = np.random.default_rng(args.seed)
    d = 1.0 / (2.0 * c)
    delta = rng.uniform(0.0, 4.0 / c, n_points)
    gamma = rng.uniform(0.0, delta / 2.0)
    t = rng.uniform(0.0, 4.0 / (c * c), n_points)

    gap_form = q_gap_form(c, delta, gamma)
    i_min = int(np.argmin(gap_form))
    params_q = QParams(c=c, d=d)
    identity_resid = float(
        np.max(np.abs(q_value(params_q, delta, gamma, t) - payoff(delta, t, c) - gap_form))
    )

    # delta = 2d seam: both neighbouring branch expressions, evaluated directly
    gb = rng.uniform(0.0, d, args.grid)
    b_narrow = 3.0 * d - 2.0 * d - c * (gb * (2.0 * d - gb) + 3.0 * d * d - 2.0 * d * d)
    b_wide = (d - gb) * (1.0 - c * (d + gb))
    delta_seam = float(np.max(np.abs(b_narrow - b_wide)))
    # gamma = d seam (only reachable for delta >= 2d): the premium must vanish
    # continuously as gamma approaches the stopping boundary from below
    db = rng.uniform(2.0 * d, 4.0 / c, args.grid)
    gamma_seam = float(np.max(np.abs(q_gap_form(c, db, np.full_like(db, d * (1.0 - 1e-8))))))

    d_probe = rng.uniform(0.1 / c, 2.0 / c, 8)
    origin_resid = float(
        max(
            abs(q_value(QParams(c=c, d=float(di)), 0.0, 0.0, 0.0) - (3.0 * di - 3.0 * c * di * di))
            for di in d_probe
        )
    )

    stopped_mask = gamma >= d
    zero_on_stopped = float(np.max(np.abs(gap_form[stopped_mask]))) if stopped_mask.any() else 0.0
    min_active = float(np.min(gap_form[~stopped_mask])) if (~stopped_mask).any() else float("inf")

    results = {
        "min_gap_form": {
            "value": float(gap_form[i_min]),
            "at_delta": float(delta[i_min]),
            "at_gamma": float(gamma[i_min]),
        },
        "identity_residual": identity_resid,
        "continuity_residual_delta_seam": delta_seam,
        "continuity_residual_gamma_seam": gamma_seam,
        "origin_payoff_residual": origin_resid,
        "zero_on_stopped_set": zero_on_stopped,
        "min_off_stopped_set": min_active,
        "points": n_points,
    }
    params = {"c": c, "grid": args.grid, "points": n_points}
    table = (("key", "value"), _flat_rows(results))
    failures = []
    if not (results["min_gap_form"]["value"] >= 0.0):
        failures.append(f"min(Q - payoff) = {results['min_gap_form']['value']} < 0")
    for key in ("identity_residual", "continuity_residual_delta_seam",
                "continuity_residual_gamma_seam", "origin_payoff_residual"):
        if not (results[key] < 1e-12):
            failures.append(f"{key} = {results[key]:.3e} >= 1e-12")
    if zero_on_stopped != 0.0:
        failures.append(f"gap form nonzero ({zero_on_stopped:.3e}) on the stopped set gamma >= {d}")
    if not (min_active > 0.0):
        failures.append(f"gap form not strictly positive off the stopped set (min {min_active:.3e})")
    return params, results, 0, table, failures


def _cmd_dp(args):
    c = args.c
    if not (c > 0.0):
        raise ValueError(f"--c must be positive, got {c}")
    h = args.h if args.h is not None else 1.0 / (40.0 * c)
    cap = args.cap if args.cap is not None else int(math.ceil(5.0 / (c * h)))
    spec = WalkDP(c=c, h=h, cap=cap, tol=args.tol)
    sol = dp_solve(spec)
    boundary = []
    for a in range(cap + 1):
        row = sol.stop_region[a]
        b_min = int(np.argmax(row))
        boundary.append([a, b_min])
    target_value = 3.0 / (4.0 * c)
    target_units = round((1.0 / (2.0 * c)) / h)
    results = {
        "value_origin": sol.value_origin,
        "iterations": sol.iterations,
        "stop_boundary": boundary,
    }
    params = {"c": c, "h": h, "cap": cap, "tol": args.tol}
    table = (("a", "b_min"), [tuple(r) for r in boundary])
    failures = []
    if abs(sol.value_origin - target_value) > 0.05 * target_value:
        failures.append(
            f"value_origin {sol.value_origin:.5f} more than 5% from {target_value:.5f}"
        )
    # The forced stop at the cap depresses continuation values nearby, so the
    # computed region stops early in a band hugging the cap corner.  The box
    # law is only claimed in the bulk, a safe margin away from that band.
    bulk = cap - 4 * target_units
    for a, b_min in boundary:
        if a > bulk:
            continue
        if a >= target_units:
            if abs(b_min - target_units) > 1:
                failures.append(
                    f"stop boundary at a={a} is b={b_min}, more than one cell from {target_units}"
                )
                break
        elif a <= target_units - 2:
            if b_min <= bulk:
                failures.append(
                    f"interior stop state at a={a} (b={b_min}) below the threshold band"
                )
                break
    return params, results, 0, table, failures


def _cmd_sweep(args):
    c = args.c
    if not (c > 0.0):
        raise ValueError(f"--c must be positive, got {c}")
    try:
        grid = [float(tok) for tok in args.grid.split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"--grid must be comma-separated numbers, got {args.grid!r}") from exc
    if not grid:
        raise ValueError("--grid is empty")
    h = args.h if args.h is not None else min(grid) / 40.0
    spec = LatticeSpec(h=h)
    result = sweep_payoff(c, grid, spec, args.trials, args.seed, args.workers)
    curve = [
        {
            "d": p.d,
            "mean": p.payoff.mean,
            "ci_low": p.payoff.ci_low,
            "ci_high": p.payoff.ci_high,
            "n": p.payoff.n,
        }
        for p in result.points
    ]
    censored = sum(p.payoff.censored for p in result.points)
    results = {"curve": curve, "argmax_d": result.argmax_d}
    params = {"c": c, "grid": grid, "h": h, "trials": args.trials}
    table = (
        ("d", "mean", "ci_low", "ci_high"),
        [(p["d"], p["mean"], p["ci_low"], p["ci_high"]) for p in curve],
    )
    failures = []
    d_star = 1.0 / (2.0 * c)
    cell = max(
        (abs(b - a) for a, b in zip(sorted(grid), sorted(grid)[1:])), default=0.0
    )
    if abs(result.argmax_d - d_star) > cell + 1e-12:
        failures.append(
            f"argmax_d = {result.argmax_d} more than one grid cell from {d_star}"
        )
    for p in curve:
        exact = 3.0 * p["d"] - 3.0 * c * p["d"] ** 2
        if not (p["ci_low"] <= exact <= p["ci_high"]):
            failures.append(
                f"payoff curve at d={p['d']}: CI [{p['ci_low']:.4f}, {p['ci_high']:.4f}] "
                f"misses exact {exact:.4f}"
            )
    if censored:
        failures.append(f"censored trials: {censored} (expected 0)")
    return params, results, censored, table, failures


def _cmd_closed_forms(args):
    table_cf = closed_forms(args.c, args.d)
    c, d = args.c, args.d
    results = {k: v for k, v in table_cf.items() if not callable(v)}
    results["E_delta_2d"] = table_cf["E_delta_h"](2.0 * d)
    results["delta_increment_0_2d"] = table_cf["delta_increment"](0.0, 2.0 * d)
    params = {"c": c, "d": d}
    table = (("key", "value"), sorted(results.items()))
    failures = []
    chain = results["delta_increment_0_2d"] + results["E_tau_d"]
    if not math.isclose(chain, results["E_T_gap"], rel_tol=1e-12):
        failures.append(
            f"decomposition {results['delta_increment_0_2d']} + {results['E_tau_d']} "
            f"!= {results['E_T_gap']}"
        )
    if not math.isclose(
        results["payoff_gap"],
        3.0 * d - 3.0 * c * d * d,
        rel_tol=1e-12,
        abs_tol=1e-15,
    ):
        failures.append("payoff_gap does not match 3d - 3cd^2")
    return params, results, 0, table, failures


_HANDLERS = {
    "simulate": _cmd_simulate,
    "bounds": _cmd_bounds,
    "dist": _cmd_dist,
    "qcheck": _cmd_qcheck,
    "dp": _cmd_dp,
    "sweep": _cmd_sweep,
    "closed-forms": _cmd_closed_forms,
}


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get("MDL_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"MDL_SEED={raw!r} is not an integer") from None


def _csv_text(table) -> str:
    header, rows = table
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
        return
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        sys.stderr.write(f"{_PROG}: cannot write output: {out_path}: {exc.strerror}\n")
        raise SystemExit(1) from None


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    try:
        args.seed = _resolve_seed(args)
        if args.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {args.seed}")
        if getattr(args, "workers", 1) < 1:
            raise ValueError(f"--workers must be >= 1, got {args.workers}")
        params, results, censored, table, failures = _HANDLERS[args.command](args)
    except LatticeError as exc:
        sys.stderr.write(f"{_PROG}: lattice mismatch: {exc}\n")
        return 1
    except ValueError as exc:
        sys.stderr.write(f"{_PROG}: invalid parameters: {exc}\n")
        return 1

    if args.out_format == "csv":
        text = _csv_text(table)
    else:
        payload = {
            "command": args.command,
            "params": params,
            "results": results,
            "censored": censored,
            "seed": args.seed,
        }
        if not args.no_meta:
            payload["runtime_s"] = round(time.perf_counter() - t0, 3)
            payload["timestamp"] = datetime.now(timezone.utc).isoformat()
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    _emit(text, args.out)

    if args.run_checks and failures:
        for failure in failures:
            sys.stderr.write(f"{_PROG}: check failed: {failure}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
