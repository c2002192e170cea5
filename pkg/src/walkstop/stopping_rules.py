"""Stopping rules over lattice walk paths and the driver that runs them.

Each rule is a small frozen dataclass; `should_stop` evaluates the rule
predicate on a PathState, and `run_until_stop` advances a fresh path until
the predicate first holds (or a step guard runs out).  The driver works in
integer lattice units internally, so threshold comparisons are exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .path_engine import LatticeSpec, PathState

__all__ = [
    "Drawdown",
    "Rise",
    "AbsGap",
    "Gap",
    "DropDrawdown",
    "DiameterReach",
    "FirstExit",
    "StopRule",
    "StoppedPath",
    "should_stop",
    "default_max_steps",
    "run_until_stop",
]


def _require_positive(value: float, name: str) -> None:
    if not (value > 0.0):
        raise ValueError(f"{name} must be positive, got {value}")


@dataclass(frozen=True)
class Drawdown:
    """Stop when the walk sits d below its running maximum."""

    d: float

    def __post_init__(self) -> None:
        _require_positive(self.d, "d")


@dataclass(frozen=True)
class Rise:
    """Stop when the walk sits d above its running minimum."""

    d: float

    def __post_init__(self) -> None:
        _require_positive(self.d, "d")


@dataclass(frozen=True)
class AbsGap:
    """Stop when sup|x| exceeds the current |x| by d."""

    d: float

    def __post_init__(self) -> None:
        _require_positive(self.d, "d")


@dataclass(frozen=True)
class Gap:
    """Stop when the walk is at least d away from both running extremes."""

    d: float

    def __post_init__(self) -> None:
        _require_positive(self.d, "d")


@dataclass(frozen=True)
class DropDrawdown:
    """Stop when the drop process (run_max - x) falls d below its own sup."""

    d: float

    def __post_init__(self) -> None:
        _require_positive(self.d, "d")


@dataclass(frozen=True)
class DiameterReach:
    """Stop when the diameter (run_max - run_min) first reaches hdiam."""

    hdiam: float

    def __post_init__(self) -> None:
        _require_positive(self.hdiam, "hdiam")


@dataclass(frozen=True)
class FirstExit:
    """Stop on first exit from the open interval (lo, hi) around the origin."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (self.lo < 0.0 < self.hi):
            raise ValueError(f"need lo < 0 < hi, got lo={self.lo}, hi={self.hi}")


StopRule = Union[Drawdown, Rise, AbsGap, Gap, DropDrawdown, DiameterReach, FirstExit]


@dataclass(frozen=True)
class StoppedPath:
    """Result of driving a path: where and when the rule fired."""

    stop_time: float
    terminal_x: float
    final_state: PathState
    fired: bool


def should_stop(rule: StopRule, state: PathState) -> bool:
    """Evaluate the rule predicate on a path state."""
    if isinstance(rule, Drawdown):
        return state.run_max - state.x >= rule.d
    if isinstance(rule, Rise):
        return state.x - state.run_min >= rule.d
    if isinstance(rule, AbsGap):
        return state.abs_sup - abs(state.x) >= rule.d
    if isinstance(rule, Gap):
        return state.gap >= rule.d
    if isinstance(rule, DropDrawdown):
        return state.drop_sup - (state.run_max - state.x) >= rule.d
    if isinstance(rule, DiameterReach):
        return state.diameter >= rule.hdiam
    if isinstance(rule, FirstExit):
        return state.x <= rule.lo or state.x >= rule.hi
    raise TypeError(f"unknown rule {rule!r}")


# Internal integer-unit encoding of a rule under a given lattice.

_GAP_FAMILY = {
    Drawdown: "drawdown",
    Rise: "rise",
    AbsGap: "absgap",
    Gap: "gap",
    DropDrawdown: "dropdd",
}


def rule_units(rule: StopRule, spec: LatticeSpec) -> tuple[str, int, int, int]:
    """Validate rule thresholds against the lattice; return (kind, k, klo, khi)."""
    kind = _GAP_FAMILY.get(type(rule))
    if kind is not None:
        k = spec.units(rule.d, "d")
        if k < 1:
            raise ValueError(f"threshold {rule.d} is below one lattice step")
        return kind, k, 0, 0
    if isinstance(rule, DiameterReach):
        k = spec.units(rule.hdiam, "hdiam")
        if k < 1:
            raise ValueError(f"hdiam {rule.hdiam} is below one lattice step")
        return "diam", k, 0, 0
    if isinstance(rule, FirstExit):
        klo = spec.units(rule.lo, "lo")
        khi = spec.units(rule.hi, "hi")
        return "exit", 0, klo, khi
    raise TypeError(f"unknown rule {rule!r}")


def default_max_steps(rule: StopRule, spec: LatticeSpec) -> int:
    """Step guard: 400 * (scale/h)**2, roughly 100x the expected step count."""
    kind, k, klo, khi = rule_units(rule, spec)
    if kind == "exit":
        half = max(-klo, khi)
        return 400 * half * half
    return 400 * k * k


@dataclass
class KernelResult:
    """Integer-unit outcome of a kernel run (not part of the public API)."""

    fired: bool
    steps: int
    ix: int
    imax: int
    imin: int
    idrop: int
    irise: int


_FIRST_BLOCK = 2048
_MAX_BLOCK = 32768


def drive_units(
    kind: str,
    k: int,
    klo: int,
    khi: int,
    draw: Callable[[int], np.ndarray],
    max_steps: int,
    track_drop: bool,
    track_rise: bool,
    first_block: int = _FIRST_BLOCK,
) -> KernelResult:
    """Run the walk in vectorized blocks until the predicate first holds.

    `draw(L)` must return L signed unit steps.  All comparisons happen in
    integer lattice units, so firing levels are exact.  `first_block` sizes
    the initial vectorized chunk (it then doubles up to a cap); the block
    schedule is a pure function of the arguments, so results for a given
    draw stream never depend on the caller's worker count.
    """
    steps = 0
    ix = 0
    imax = 0
    imin = 0
    idrop = 0
    irise = 0
    need_drop = track_drop or kind == "dropdd"
    remaining = max_steps
    block = max(min(first_block, remaining, _MAX_BLOCK), 1)

    while remaining > 0:
        length = min(block, remaining)
        sgn = draw(length)
        pos = np.cumsum(sgn)
        if ix:
            pos += ix
        # Clamp against the carried extremes; the initial 0 counts as visited,
        # so the clamp applies even on the first block (imax=imin=0).
        rmax = np.maximum.accumulate(pos)
        np.maximum(rmax, imax, out=rmax)
        rmin = np.minimum.accumulate(pos)
        np.minimum(rmin, imin, out=rmin)

        drop_run = None
        if need_drop:
            drop_run = np.maximum.accumulate(rmax - pos)
            if idrop > 0:
                np.maximum(drop_run, idrop, out=drop_run)

        if kind == "drawdown":
            mask = rmax - pos >= k
        elif kind == "rise":
            mask = pos - rmin >= k
        elif kind == "absgap":
            mask = np.maximum(rmax, -rmin) - np.abs(pos) >= k
        elif kind == "gap":
            mask = (rmax - pos >= k) & (pos - rmin >= k)
        elif kind == "dropdd":
            mask = drop_run - (rmax - pos) >= k
        elif kind == "diam":
            mask = rmax - rmin >= k
        elif kind == "exit":
            mask = (pos <= klo) | (pos >= khi)
        else:
            raise ValueError(f"unknown kind {kind!r}")

        if mask.any():
            j = int(mask.argmax())
            steps += j + 1
            ixj = int(pos[j])
            imaxj = int(rmax[j])
            iminj = int(rmin[j])
            if need_drop:
                idrop = int(drop_run[j])
            if track_rise:
                irise = max(irise, int((pos[: j + 1] - rmin[: j + 1]).max()))
            return KernelResult(True, steps, ixj, imaxj, iminj, idrop, irise)

        steps += length
        remaining -= length
        ix = int(pos[-1])
        imax = int(rmax[-1])
        imin = int(rmin[-1])
        if need_drop:
            idrop = int(drop_run[-1])
        if track_rise:
            irise = max(irise, int((pos - rmin).max()))
        block = min(block * 2, _MAX_BLOCK)

    return KernelResult(False, steps, ix, imax, imin, idrop, irise)


def _state_from_units(res: KernelResult, spec: LatticeSpec) -> PathState:
    h = spec.h
    drop = res.imax - res.ix
    rise = res.ix - res.imin
    return PathState(
        t=res.steps * spec.time_per_step,
        x=res.ix * h,
        run_max=res.imax * h,
        run_min=res.imin * h,
        diameter=(res.imax - res.imin) * h,
        gap=min(drop, rise) * h,
        abs_sup=max(res.imax, -res.imin) * h,
        drop_sup=res.idrop * h,
        rise_sup=res.irise * h,
        steps=res.steps,
    )


def run_until_stop(
    rule: StopRule,
    spec: LatticeSpec,
    stream: np.random.Generator,
    max_steps: int | None = None,
) -> StoppedPath:
    """Drive a fresh path from the origin until the rule first fires.

    Consumes steps from `stream`; firing is checked after every step, so
    the returned state is the first one satisfying the predicate.  When the
    step guard is exhausted instead, `fired` is False and the caller must
    treat the trial as censored rather than dropping it.
    """
    kind, k, klo, khi = rule_units(rule, spec)
    if max_steps is None:
        max_steps = default_max_steps(rule, spec)
    if max_steps < 1:
        raise ValueError(f"max_steps must be >= 1, got {max_steps}")

    def draw(length: int) -> np.ndarray:
        return 2 * stream.integers(0, 2, size=length, dtype=np.int64) - 1

    res = drive_units(kind, k, klo, khi, draw, max_steps, True, True)
    state = _state_from_units(res, spec)
    return StoppedPath(
        stop_time=state.t,
        terminal_x=state.x,
        final_state=state,
        fired=res.fired,
    )
