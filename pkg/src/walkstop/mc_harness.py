"""Deterministic parallel Monte Carlo estimation and hypothesis testing.

The stream for trial k is a counter-based generator keyed by (seed, k), and
trials are dispatched to workers in fixed-size chunks merged back in trial
order, so every result is bit-identical for a given seed regardless of the
worker count.  Censored trials (step guard exhausted) are excluded from all
moments but always counted and reported.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from scipy import stats as sps

from .exact_walk import exact_stop_steps, walk_diameter_pmf
from .path_engine import LatticeError, LatticeSpec
from .q_process import QParams, q_value
from .stopping_rules import (
    Gap,
    StopRule,
    default_max_steps,
    drive_units,
    rule_units,
)

__all__ = [
    "Z99",
    "REWARD_NAMES",
    "TrialStats",
    "RatioReport",
    "CollectResult",
    "collect_rewards",
    "stats_from_sample",
    "estimate",
    "ratio_report",
    "ratio_report_from",
    "Exponential",
    "Uniform",
    "VShape",
    "Empirical",
    "GofResult",
    "gof_test",
    "DriftRow",
    "DriftReport",
    "drift_check",
    "levy_samples",
    "SweepPoint",
    "SweepResult",
    "sweep_payoff",
]

# Two-sided 99% normal quantile (checked against scipy in the test suite).
Z99 = 2.5758293035489004

REWARD_NAMES = (
    "max",
    "min_abs",
    "abs_sup",
    "diameter",
    "drop_sup",
    "stop_time",
    "terminal_sq",
    "terminal_x",
)

# Trials per worker task; fixed so the trial->chunk assignment (and hence
# every byte of output) is independent of the worker count.
_CHUNK = 4096

_EXTRACTORS = {
    "max": lambda r, h, tps: r.imax * h,
    "min_abs": lambda r, h, tps: -r.imin * h,
    "abs_sup": lambda r, h, tps: max(r.imax, -r.imin) * h,
    "diameter": lambda r, h, tps: (r.imax - r.imin) * h,
    "drop_sup": lambda r, h, tps: r.idrop * h,
    "stop_time": lambda r, h, tps: r.steps * tps,
    "terminal_sq": lambda r, h, tps: (r.ix * h) ** 2,
    "terminal_x": lambda r, h, tps: r.ix * h,
}


@dataclass(frozen=True)
class TrialStats:
    """Pooled sample moments with a 99% normal-approximation interval."""

    n: int
    mean: float
    variance: float
    ci_low: float
    ci_high: float
    censored: int


@dataclass(frozen=True)
class RatioReport:
    """Reward mean over the terminal standard deviation, with a delta-method CI.

    The denominator uses sqrt(E[terminal position squared]), which equals
    sqrt(E[stop time]) for the driftless walk.
    """

    reward_mean: TrialStats
    terminal_second_moment: TrialStats
    ratio: float
    ratio_ci: tuple[float, float]


def _philox_stream(seed: int, trial: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, trial], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _block_hint(rule: StopRule, spec: LatticeSpec) -> int:
    """First vectorized block size: a bit over the expected step count."""
    try:
        expected = exact_stop_steps(rule, spec)
    except ValueError:
        kind, k, _, _ = rule_units(rule, spec)
        expected = 2 * k * k + 2 * k  # AbsGap: same scale as the drop rule
    return int(min(32768, max(64, 1.25 * expected + 8)))


def _run_chunk(
    rule: StopRule,
    spec: LatticeSpec,
    seed: int,
    lo: int,
    hi: int,
    rewards: tuple[str, ...],
    max_steps: int,
    need_drop: bool,
    hint: int,
) -> tuple[list[np.ndarray], np.ndarray]:
    kind, k, klo, khi = rule_units(rule, spec)
    h = spec.h
    tps = spec.time_per_step
    m = hi - lo
    arrays = [np.empty(m) for _ in rewards]
    extractors = [_EXTRACTORS[name] for name in rewards]
    fired = np.zeros(m, dtype=bool)
    for j in range(m):
        gen = _philox_stream(seed, lo + j)

        def draw(length: int, _g: np.random.Generator = gen) -> np.ndarray:
            return 2 * _g.integers(0, 2, size=length, dtype=np.int64) - 1

        res = drive_units(kind, k, klo, khi, draw, max_steps, need_drop, False, hint)
        fired[j] = res.fired
        if res.fired:
            for arr, extract in zip(arrays, extractors):
                arr[j] = extract(res, h, tps)
        else:
            for arr in arrays:
                arr[j] = np.nan
    return arrays, fired


def _chunk_task(args):
    return _run_chunk(*args)


@dataclass(frozen=True)
class CollectResult:
    """Per-trial reward values in trial order; censored slots hold NaN."""

    values: dict[str, np.ndarray]
    fired: np.ndarray

    @property
    def n(self) -> int:
        return int(self.fired.size)

    @property
    def censored(self) -> int:
        return int(self.fired.size - self.fired.sum())


def collect_rewards(
    rule: StopRule,
    rewards,
    spec: LatticeSpec,
    n: int,
    seed: int,
    workers: int = 1,
    max_steps: int | None = None,
) -> CollectResult:
    """Run n independent trials of the rule, collecting the named rewards.

    One underlying run serves any subset of REWARD_NAMES, so quantities that
    must be compared (reward vs terminal second moment, diameter vs stop
    time) come from the same paths.
    """
    rewards = tuple(rewards)
    if not rewards:
        raise ValueError("at least one reward is required")
    unknown = [r for r in rewards if r not in REWARD_NAMES]
    if unknown:
        raise ValueError(f"unknown rewards {unknown}; choose from {REWARD_NAMES}")
    if len(set(rewards)) != len(rewards):
        raise ValueError(f"duplicate reward names in {rewards}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")

    kind, _, _, _ = rule_units(rule, spec)
    if max_steps is None:
        max_steps = default_max_steps(rule, spec)
    need_drop = kind == "dropdd" or "drop_sup" in rewards
    hint = _block_hint(rule, spec)
    tasks = [
        (rule, spec, seed, lo, min(lo + _CHUNK, n), rewards, max_steps, need_drop, hint)
        for lo in range(0, n, _CHUNK)
    ]
    if workers <= 1 or len(tasks) == 1:
        parts = [_chunk_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, tasks))

    values = {
        name: np.concatenate([p[0][i] for p in parts])
        for i, name in enumerate(rewards)
    }
    fired = np.concatenate([p[1] for p in parts])
    return CollectResult(values=values, fired=fired)


def stats_from_sample(sample, censored: int = 0) -> TrialStats:
    """Pooled moments of a sample; NaN entries count as censored trials."""
    arr = np.asarray(sample, dtype=float)
    finite = arr[~np.isnan(arr)]
    censored_total = int(censored) + int(arr.size - finite.size)
    m = int(finite.size)
    if m < 1:
        raise ValueError("no contributing trials (all censored)")
    mean = float(np.mean(finite))
    variance = float(np.var(finite, ddof=1)) if m > 1 else 0.0
    half = Z99 * sqrt(variance / m)
    return TrialStats(
        n=m,
        mean=mean,
        variance=variance,
        ci_low=mean - half,
        ci_high=mean + half,
        censored=censored_total,
    )


def estimate(
    rule: StopRule,
    reward: str,
    spec: LatticeSpec,
    n: int,
    seed: int,
    workers: int = 1,
    max_steps: int | None = None,
) -> TrialStats:
    """Monte Carlo estimate of one reward under one stopping rule."""
    result = collect_rewards(rule, (reward,), spec, n, seed, workers, max_steps)
    return stats_from_sample(result.values[reward])


def ratio_report_from(result: CollectResult, reward: str) -> RatioReport:
    """Ratio statistics computed from an existing collection.

    Requires the collection to contain `reward` and `terminal_sq`; the delta
    method uses the empirical covariance of the two per-trial series.
    """
    x = result.values[reward]
    y = result.values["terminal_sq"]
    keep = ~np.isnan(x)
    xf, yf = x[keep], y[keep]
    sx = stats_from_sample(x)
    sy = stats_from_sample(y)
    if not (sy.mean > 0.0):
        raise ValueError("terminal second moment must be positive")

    ratio = sx.mean / sqrt(sy.mean)
    n = sx.n
    if n > 1:
        cov = np.cov(xf, yf, ddof=1)
        gx = 1.0 / sqrt(sy.mean)
        gy = -sx.mean / (2.0 * sy.mean**1.5)
        var_ratio = (
            gx * gx * cov[0, 0] + 2.0 * gx * gy * cov[0, 1] + gy * gy * cov[1, 1]
        ) / n
        se = sqrt(max(var_ratio, 0.0))
    else:
        se = 0.0
    return RatioReport(
        reward_mean=sx,
        terminal_second_moment=sy,
        ratio=ratio,
        ratio_ci=(ratio - Z99 * se, ratio + Z99 * se),
    )


def ratio_report(
    rule: StopRule,
    reward: str,
    spec: LatticeSpec,
    n: int,
    seed: int,
    workers: int = 1,
) -> RatioReport:
    """Reward-to-terminal-standard-deviation ratio for a rule, with 99% CI."""
    names = (reward,) if reward == "terminal_sq" else (reward, "terminal_sq")
    result = collect_rewards(rule, names, spec, n, seed, workers)
    return ratio_report_from(result, reward)


# --- goodness of fit -------------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    """Exponential law with the given mean, support (0, inf)."""

    mean: float

    def __post_init__(self) -> None:
        if not (self.mean > 0.0):
            raise ValueError(f"mean must be positive, got {self.mean}")


@dataclass(frozen=True)
class Uniform:
    """Uniform law on (0, hi)."""

    hi: float

    def __post_init__(self) -> None:
        if not (self.hi > 0.0):
            raise ValueError(f"hi must be positive, got {self.hi}")


@dataclass(frozen=True)
class VShape:
    """Discrete termination law of the unit walk at first diameter hdiam.

    Samples must be integer lattice offsets in [-hdiam, hdiam] \\ {0}.
    """

    hdiam: int

    def __post_init__(self) -> None:
        if self.hdiam < 1:
            raise ValueError(f"hdiam must be a positive integer, got {self.hdiam}")


@dataclass(frozen=True)
class Empirical:
    """Two-sample comparison against a reference sample."""

    values: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class GofResult:
    statistic: float
    p_value: float
    kind: str


def gof_test(sample, target) -> GofResult:
    """Goodness-of-fit test of a sample against a target law.

    One-sample Kolmogorov-Smirnov for the continuous targets, two-sample KS
    for Empirical, chi-square on counts for the discrete VShape; p-values
    use the standard asymptotics in every case.
    """
    arr = np.asarray(sample, dtype=float)
    if arr.size == 0:
        raise ValueError("sample is empty")
    if np.isnan(arr).any():
        raise ValueError("sample contains NaN (censored trials must be excluded)")
    if np.ptp(arr) == 0.0:
        raise ValueError("degenerate sample: all values equal")

    if isinstance(target, Exponential):
        if not (target.mean > 0.0):
            raise ValueError(f"mean must be positive, got {target.mean}")
        stat, p = sps.kstest(arr, "expon", args=(0.0, target.mean), method="asymp")
        return GofResult(float(stat), float(p), "ks_exponential")
    if isinstance(target, Uniform):
        if not (target.hi > 0.0):
            raise ValueError(f"hi must be positive, got {target.hi}")
        stat, p = sps.kstest(arr, "uniform", args=(0.0, target.hi), method="asymp")
        return GofResult(float(stat), float(p), "ks_uniform")
    if isinstance(target, VShape):
        pmf = walk_diameter_pmf(target.hdiam)
        support = np.array(sorted(pmf), dtype=float)
        rounded = np.rint(arr)
        if not np.array_equal(rounded, arr):
            raise ValueError("VShape samples must be integer lattice offsets")
        counts = np.array([(arr == x).sum() for x in support], dtype=float)
        if counts.sum() != arr.size:
            raise ValueError(
                f"sample values outside the support [-{target.hdiam}, {target.hdiam}]"
            )
        expected = arr.size * np.array([pmf[int(x)] for x in support])
        stat, p = sps.chisquare(counts, expected)
        return GofResult(float(stat), float(p), "chisquare_vshape")
    if isinstance(target, Empirical):
        ref = np.asarray(target.values, dtype=float)
        if ref.size == 0:
            raise ValueError("reference sample is empty")
        stat, p = sps.ks_2samp(arr, ref, method="asymp")
        return GofResult(float(stat), float(p), "ks_two_sample")
    raise TypeError(f"unknown target {target!r}")


# --- drift checks ----------------------------------------------------------


@dataclass(frozen=True)
class DriftRow:
    """Paired estimate of E[value(t_end) - value(t_start)] over n paths."""

    t_start: float
    t_end: float
    mean: float
    stderr: float


@dataclass(frozen=True)
class DriftReport:
    """Checkpointed drift estimates for the certificate process.

    `unstopped` rows estimate the raw increments (nonpositive in expectation:
    the certificate is a supermartingale); `stopped` rows estimate increments
    of the process frozen at the gap rule's firing time (zero in expectation
    in the continuum limit).  `q_origin` is the exact starting value 3/(4c).
    """

    c: float
    d: float
    h: float
    n: int
    checkpoints: tuple[float, ...]
    unstopped: tuple[DriftRow, ...]
    stopped: tuple[DriftRow, ...]
    q_origin: float


def _time_units(t: float, spec: LatticeSpec, name: str) -> int:
    steps = t / spec.time_per_step
    rounded = round(steps)
    if abs(steps - rounded) > 1e-9 * max(1.0, abs(steps)):
        raise LatticeError(
            f"{name}={t} is not an integer number of steps (step time "
            f"{spec.time_per_step})"
        )
    return int(rounded)


def _drift_chunk(
    spec: LatticeSpec,
    seed: int,
    lo: int,
    hi: int,
    n_steps: int,
    cp_units: tuple[int, ...],
    k: int,
) -> tuple[np.ndarray, ...]:
    h = spec.h
    tps = spec.time_per_step
    m = hi - lo
    K = len(cp_units)
    cp_idx = np.array(cp_units, dtype=np.int64)
    cp_times = cp_idx * tps
    d_un = np.empty((m, K))
    g_un = np.empty((m, K))
    d_st = np.empty((m, K))
    g_st = np.empty((m, K))
    t_st = np.empty((m, K))
    for j in range(m):
        gen = _philox_stream(seed, lo + j)
        sgn = 2 * gen.integers(0, 2, size=n_steps, dtype=np.int64) - 1
        pos = np.cumsum(sgn)
        rmax = np.maximum.accumulate(pos)
        np.maximum(rmax, 0, out=rmax)
        rmin = np.minimum.accumulate(pos)
        np.minimum(rmin, 0, out=rmin)
        gap = np.minimum(rmax - pos, pos - rmin)
        diam = rmax - rmin
        # Prepend the initial state so checkpoint index u is "after u steps".
        diam_full = np.concatenate(([0], diam))
        gap_full = np.concatenate(([0], gap))
        d_un[j] = diam_full[cp_idx] * h
        g_un[j] = gap_full[cp_idx] * h

        fire_mask = gap >= k
        if fire_mask.any():
            s = int(fire_mask.argmax()) + 1  # firing step count
            stopped = cp_idx >= s
            d_st[j] = np.where(stopped, diam_full[s] * h, d_un[j])
            g_st[j] = np.where(stopped, k * h, g_un[j])
            t_st[j] = np.where(stopped, s * tps, cp_times)
        else:
            d_st[j] = d_un[j]
            g_st[j] = g_un[j]
            t_st[j] = cp_times
    return d_un, g_un, d_st, g_st, t_st


def _drift_chunk_task(args):
    return _drift_chunk(*args)


def _paired_rows(
    q_matrix: np.ndarray, checkpoints: tuple[float, ...]
) -> tuple[DriftRow, ...]:
    diffs = np.diff(q_matrix, axis=1)
    n = q_matrix.shape[0]
    rows = []
    for i in range(diffs.shape[1]):
        col = diffs[:, i]
        rows.append(
            DriftRow(
                t_start=checkpoints[i],
                t_end=checkpoints[i + 1],
                mean=float(np.mean(col)),
                stderr=float(np.std(col, ddof=1) / sqrt(n)),
            )
        )
    return tuple(rows)


def drift_check(
    c: float,
    horizon: float,
    n: int,
    seed: int,
    checkpoints,
    spec: LatticeSpec | None = None,
    workers: int = 1,
) -> DriftReport:
    """Estimate certificate drift between checkpoints at d = 1/(2c).

    Simulates n walk paths to the horizon and forms paired increments of
    Q(t) = q(D(t), G(t), t) at consecutive checkpoints, both for the raw
    process and for the process frozen at the gap rule's firing time.
    """
    if not (c > 0.0):
        raise ValueError(f"c must be positive, got {c}")
    if not (horizon > 0.0):
        raise ValueError(f"horizon must be positive, got {horizon}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    d = 1.0 / (2.0 * c)
    if spec is None:
        spec = LatticeSpec(h=d / 20.0)
    k = spec.units(d, "d")
    n_steps = _time_units(horizon, spec, "horizon")
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")

    cps = tuple(float(t) for t in checkpoints)
    if len(cps) < 2:
        raise ValueError("need at least two checkpoints")
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError(f"checkpoints must be strictly increasing, got {cps}")
    if cps[0] < 0.0 or cps[-1] > horizon + 1e-12:
        raise ValueError(f"checkpoints must lie in [0, horizon], got {cps}")
    cp_units = tuple(_time_units(t, spec, "checkpoint") for t in cps)

    tasks = [
        (spec, seed, lo, min(lo + _CHUNK, n), n_steps, cp_units, k)
        for lo in range(0, n, _CHUNK)
    ]
    if workers <= 1 or len(tasks) == 1:
        parts = [_drift_chunk_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_drift_chunk_task, tasks))
    d_un, g_un, d_st, g_st, t_st = (
        np.concatenate([p[i] for p in parts]) for i in range(5)
    )

    params = QParams(c=c, d=d)
    cp_times = np.array(cp_units, dtype=float) * spec.time_per_step
    q_un = q_value(params, d_un, g_un, np.broadcast_to(cp_times, d_un.shape))
    q_st = q_value(params, d_st, g_st, t_st)
    return DriftReport(
        c=c,
        d=d,
        h=spec.h,
        n=n,
        checkpoints=cps,
        unstopped=_paired_rows(q_un, cps),
        stopped=_paired_rows(q_st, cps),
        q_origin=q_value(params, 0.0, 0.0, 0.0),
    )


# --- fixed-time ensembles --------------------------------------------------


def _fixed_time_chunk(
    spec: LatticeSpec, seed: int, lo: int, hi: int, n_steps: int
) -> tuple[np.ndarray, np.ndarray]:
    h = spec.h
    m = hi - lo
    drop = np.empty(m)
    abs_x = np.empty(m)
    for j in range(m):
        gen = _philox_stream(seed, lo + j)
        sgn = 2 * gen.integers(0, 2, size=n_steps, dtype=np.int64) - 1
        pos = int(np.sum(sgn))
        top = int(max(np.max(np.cumsum(sgn)), 0))
        drop[j] = (top - pos) * h
        abs_x[j] = abs(pos) * h
    return drop, abs_x


def _fixed_time_task(args):
    return _fixed_time_chunk(*args)


def levy_samples(
    t: float,
    spec: LatticeSpec,
    n: int,
    seed: int,
    workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Two independent fixed-time ensembles: run_max - x and |x| at time t.

    Uses 2n trials: the first n contribute the drop values M(t) - x(t), the
    second n contribute |x(t)|, so the two samples are independent and fit
    for a two-sample test of their (continuum-identical) laws.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    n_steps = _time_units(t, spec, "t")
    if n_steps < 1:
        raise ValueError("t shorter than one step")
    tasks = [
        (spec, seed, lo, min(lo + _CHUNK, 2 * n), n_steps)
        for lo in range(0, 2 * n, _CHUNK)
    ]
    if workers <= 1 or len(tasks) == 1:
        parts = [_fixed_time_task(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_fixed_time_task, tasks))
    drop = np.concatenate([p[0] for p in parts])
    abs_x = np.concatenate([p[1] for p in parts])
    return drop[:n], abs_x[n:]


# --- payoff sweep ----------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    d: float
    payoff: TrialStats


@dataclass(frozen=True)
class SweepResult:
    """Estimated payoff curve d -> E[D - cT] under the gap rule."""

    c: float
    n: int
    points: tuple[SweepPoint, ...]
    argmax_d: float


def sweep_payoff(
    c: float,
    d_grid,
    spec: LatticeSpec,
    n: int,
    seed: int,
    workers: int = 1,
) -> SweepResult:
    """Estimate the gap-rule payoff at each threshold in d_grid.

    The same seed (hence the same sign sequences) is reused across grid
    points — common random numbers — which leaves each point's estimate
    unbiased while stabilizing comparisons across d.
    """
    if not (c > 0.0):
        raise ValueError(f"c must be positive, got {c}")
    grid = [float(d) for d in d_grid]
    if not grid:
        raise ValueError("d_grid is empty")
    points = []
    for d in grid:
        result = collect_rewards(
            Gap(d), ("diameter", "stop_time"), spec, n, seed, workers
        )
        payoff = result.values["diameter"] - c * result.values["stop_time"]
        points.append(SweepPoint(d=d, payoff=stats_from_sample(payoff)))
    best = max(points, key=lambda p: p.payoff.mean)
    return SweepResult(c=c, n=n, points=tuple(points), argmax_d=best.d)
