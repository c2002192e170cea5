"""Stopping predicates and the vectorized kernel: exhaustive equivalence with
the step-by-step reference, firing-order properties, and censoring semantics."""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from walkstop import (
    AbsGap,
    DiameterReach,
    Drawdown,
    DropDrawdown,
    FirstExit,
    Gap,
    LatticeError,
    LatticeSpec,
    PathState,
    Rise,
    advance,
    init_state,
    run_until_stop,
    should_stop,
)
from walkstop.stopping_rules import default_max_steps, rule_units

UNIT = LatticeSpec(h=1.0)


def mk_state(**kw) -> PathState:
    base = dict(
        t=0.0, x=0.0, run_max=0.0, run_min=0.0, diameter=0.0, gap=0.0,
        abs_sup=0.0, drop_sup=0.0, rise_sup=0.0, steps=0,
    )
    base.update(kw)
    return PathState(**base)


class ScriptStream:
    """Deterministic stand-in for a Generator: replays a fixed U/D word."""

    def __init__(self, word: str):
        self.bits = np.array([1 if ch == "U" else 0 for ch in word], dtype=np.int64)
        self.cursor = 0

    def integers(self, low, high, size, dtype=np.int64):
        assert (low, high) == (0, 2)
        assert self.cursor + size <= len(self.bits), "script exhausted"
        out = self.bits[self.cursor : self.cursor + size].astype(dtype)
        self.cursor += size
        return out


def reference_run(rule, word: str, spec: LatticeSpec):
    """Step-by-step first-firing via advance + should_stop."""
    state = init_state()
    for i, ch in enumerate(word, start=1):
        state = advance(state, "up" if ch == "U" else "down", spec)
        if should_stop(rule, state):
            return True, i, state
    return False, len(word), state


RULES = [
    Drawdown(1.0), Rise(1.0), AbsGap(1.0), Gap(1.0), DropDrawdown(1.0),
    DiameterReach(1.0), DiameterReach(2.0), FirstExit(-1.0, 1.0),
    FirstExit(-2.0, 1.0), Drawdown(2.0), Gap(2.0),
]


# --- predicate unit checks ---------------------------------------------------

def test_should_stop_hand_states():
    assert should_stop(Drawdown(2.0), mk_state(run_max=5.0, x=3.0))
    assert not should_stop(Drawdown(2.0), mk_state(run_max=5.0, x=3.5))
    assert should_stop(Rise(1.0), mk_state(x=0.0, run_min=-1.0))
    assert should_stop(AbsGap(1.0), mk_state(abs_sup=3.0, x=-2.0))
    assert not should_stop(AbsGap(1.0), mk_state(abs_sup=3.0, x=-2.5))
    assert should_stop(Gap(1.0), mk_state(gap=1.0))
    assert not should_stop(Gap(1.0), mk_state(gap=0.5))
    assert should_stop(
        DropDrawdown(1.0), mk_state(drop_sup=2.0, run_max=3.0, x=2.0)
    )
    assert not should_stop(
        DropDrawdown(1.0), mk_state(drop_sup=2.0, run_max=3.0, x=1.5)
    )
    assert should_stop(DiameterReach(2.0), mk_state(diameter=2.0))
    assert should_stop(FirstExit(-1.0, 2.0), mk_state(x=2.0))
    assert should_stop(FirstExit(-1.0, 2.0), mk_state(x=-1.0))
    assert not should_stop(FirstExit(-1.0, 2.0), mk_state(x=1.0))


def test_rule_validation():
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            Drawdown(bad)
        with pytest.raises(ValueError):
            Gap(bad)
        with pytest.raises(ValueError):
            DiameterReach(bad)
    with pytest.raises(ValueError):
        FirstExit(1.0, 2.0)  # lower bound must be below the start
    with pytest.raises(ValueError):
        FirstExit(-1.0, -0.5)


def test_rule_units_and_lattice_errors():
    spec = LatticeSpec(h=0.25)
    assert rule_units(Gap(1.0), spec) == ("gap", 4, 0, 0)
    assert rule_units(FirstExit(-0.5, 1.0), spec) == ("exit", 0, -2, 4)
    with pytest.raises(LatticeError):
        rule_units(Gap(0.3), spec)
    with pytest.raises(LatticeError):
        rule_units(FirstExit(-0.3, 1.0), spec)


def test_default_max_steps_formula():
    assert default_max_steps(Gap(1.0), UNIT) == 400
    assert default_max_steps(Gap(2.0), UNIT) == 1600
    assert default_max_steps(FirstExit(-3.0, 2.0), UNIT) == 400 * 9


# --- kernel vs reference -------------------------------------------------------

def assert_kernel_matches_reference(rule, word, spec):
    fired_ref, steps_ref, state_ref = reference_run(rule, word, spec)
    out = run_until_stop(rule, spec, ScriptStream(word), max_steps=len(word))
    assert out.fired == fired_ref
    assert out.final_state.steps == steps_ref
    assert out.stop_time == pytest.approx(steps_ref * spec.time_per_step)
    assert out.terminal_x == state_ref.x
    for field in ("x", "run_max", "run_min", "diameter", "gap",
                  "abs_sup", "drop_sup", "rise_sup", "steps"):
        assert getattr(out.final_state, field) == getattr(state_ref, field), (
            field, rule, word,
        )


def test_exhaustive_words_all_rules():
    for word_bits in itertools.product("UD", repeat=10):
        word = "".join(word_bits)
        for rule in RULES:
            assert_kernel_matches_reference(rule, word, UNIT)


@given(
    st.text(alphabet="UD", min_size=1, max_size=250),
    st.sampled_from(RULES),
    st.sampled_from([0.25, 1.0]),
)
def test_random_words_all_rules(word, rule_unit, h):
    # rescale the rule thresholds to the lattice
    scale = {0.25: 0.25, 1.0: 1.0}[h]
    if isinstance(rule_unit, FirstExit):
        rule = FirstExit(rule_unit.lo * scale, rule_unit.hi * scale)
    elif isinstance(rule_unit, DiameterReach):
        rule = DiameterReach(rule_unit.hdiam * scale)
    else:
        rule = type(rule_unit)(rule_unit.d * scale)
    assert_kernel_matches_reference(rule, word, LatticeSpec(h=h))


def test_first_firing_is_minimal():
    """The kernel reports the FIRST step at which the predicate holds."""
    word = "UDDUUDDDUU"
    out = run_until_stop(Gap(1.0), UNIT, ScriptStream(word), max_steps=len(word))
    assert out.fired
    # replay: the predicate must be false strictly before the firing step
    state = init_state()
    for i, ch in enumerate(word[: out.final_state.steps], start=1):
        state = advance(state, "up" if ch == "U" else "down", UNIT)
        held = should_stop(Gap(1.0), state)
        assert held == (i == out.final_state.steps)


def test_censoring_semantics():
    out = run_until_stop(Gap(1.0), UNIT, ScriptStream("UU"), max_steps=2)
    assert not out.fired
    assert out.final_state.steps == 2
    assert out.stop_time == pytest.approx(2.0)
    assert out.terminal_x == 2.0


# --- firing-order properties -------------------------------------------------------

@given(st.text(alphabet="UD", min_size=1, max_size=300))
def test_drawdown_rise_mirror_duality(word):
    mirrored = word.translate(str.maketrans("UD", "DU"))
    a = reference_run(Drawdown(1.0), word, UNIT)
    b = reference_run(Rise(1.0), mirrored, UNIT)
    assert a[0] == b[0] and a[1] == b[1]
    assert a[2].x == -b[2].x


@given(st.text(alphabet="UD", min_size=1, max_size=300))
def test_drop_drawdown_fires_strictly_after_drawdown(word):
    fired_dd, step_dd, _ = reference_run(DropDrawdown(1.0), word, UNIT)
    fired_d, step_d, _ = reference_run(Drawdown(1.0), word, UNIT)
    if fired_dd:
        assert fired_d and step_d < step_dd


@given(st.text(alphabet="UD", min_size=1, max_size=300))
def test_gap_fires_strictly_after_double_diameter(word):
    """Two-stage structure: a gap of d needs diameter 2d first, and the step
    that completes the diameter leaves the path at an extreme (gap 0)."""
    fired_g, step_g, _ = reference_run(Gap(1.0), word, UNIT)
    fired_2, step_2, _ = reference_run(DiameterReach(2.0), word, UNIT)
    if fired_g:
        assert fired_2 and step_2 < step_g


@given(st.text(alphabet="UD", min_size=1, max_size=200))
def test_gap_dominates_absgap(word):
    """abs_sup - |x| >= min-gap always, so AbsGap fires no later than Gap."""
    fired_g, step_g, _ = reference_run(Gap(1.0), word, UNIT)
    fired_a, step_a, _ = reference_run(AbsGap(1.0), word, UNIT)
    if fired_g:
        assert fired_a and step_a <= step_g
