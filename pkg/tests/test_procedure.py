import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vascusim.mechanism import Event, EventKind
from vascusim.procedure import (STEP_FOR_PHASE, FailureMode, Outcome, Phase,
                                ProcedureCommand, ProcedureState,
                                TransitionError, brute_force_guidewire_oracle,
                                classify_tip, guidewire_attempt,
                                lumen_entry_monitor, record_events, transition)

C = ProcedureCommand

HAPPY_PATH = [
    (C.START_WAYPOINT_SELECTION, Phase.WAYPOINT_SELECTION),
    (C.ADD_WAYPOINT, Phase.WAYPOINT_SELECTION),
    (C.ADD_WAYPOINT, Phase.WAYPOINT_SELECTION),
    (C.START_SCAN, Phase.SCANNING),
    (C.SAVE_MARK, Phase.SCANNING),
    (C.SCAN_COMPLETE, Phase.MARK_REVIEW),
    (C.GOTO_MARK, Phase.CENTERING),
    (C.CLICK_CENTER, Phase.CENTERING),
    (C.ROTATE_NUDGE, Phase.CENTERING),
    (C.SET_ANGLE, Phase.NEEDLE_ALIGNING),
    (C.NEEDLE_TARGET, Phase.INSERTING),
    (C.INSERTION_SETTLED, Phase.TWEAKING),
    (C.NEEDLE_TWEAK, Phase.INSERTING),
    (C.INSERTION_SETTLED, Phase.TWEAKING),
    (C.INSERT_GUIDEWIRE, Phase.GUIDEWIRE_INSERTING),
    (C.RETRACT_NEEDLE, Phase.RETRACTING),
    (C.RETRACT_COMPLETE, Phase.COMPLETE),
]


def test_happy_path():
    state = ProcedureState()
    for cmd, expected in HAPPY_PATH:
        state = transition(state, cmd)
        assert state.phase is expected


def test_step_numbers_monotone_along_happy_path():
    state = ProcedureState()
    last = 0
    for cmd, _ in HAPPY_PATH:
        state = transition(state, cmd)
        step = STEP_FOR_PHASE.get(state.phase)
        if cmd is not C.NEEDLE_TWEAK:   # the tweak loop revisits step 5
            assert step >= last
            last = step
    assert last == 8


def test_click_center_rejected_while_scanning():
    state = ProcedureState(phase=Phase.SCANNING)
    with pytest.raises(TransitionError):
        transition(state, C.CLICK_CENTER)


def test_idle_rejects_everything_but_start():
    state = ProcedureState()
    for cmd in C:
        if cmd in (C.START_WAYPOINT_SELECTION, C.ABORT):
            continue
        with pytest.raises(TransitionError):
            transition(state, cmd)


def test_abort_from_every_phase():
    for phase in Phase:
        state = transition(ProcedureState(phase=phase), C.ABORT)
        assert state.phase is Phase.ABORTED


def test_rejection_leaves_state_unchanged():
    state = ProcedureState(phase=Phase.SCANNING, marks=(("m",),))
    try:
        transition(state, C.NEEDLE_TARGET)
    except TransitionError as e:
        assert e.phase is Phase.SCANNING
        assert e.command is C.NEEDLE_TARGET
    assert state.phase is Phase.SCANNING
    assert state.marks == (("m",),)


def test_marks_accumulate_in_order():
    state = ProcedureState(phase=Phase.SCANNING)
    state = transition(state, C.SAVE_MARK, mark=(1.0, 2.0))
    state = transition(state, C.SAVE_MARK, mark=(3.0, 4.0))
    assert state.marks == ((1.0, 2.0), (3.0, 4.0))
    assert state.phase is Phase.SCANNING


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(list(C)), max_size=30))
def test_fsm_fuzz_never_undefined(cmds):
    state = ProcedureState()
    for cmd in cmds:
        try:
            state = transition(state, cmd)
        except TransitionError:
            pass
        assert state.phase in Phase


def test_record_events_appends():
    ev = Event(kind=EventKind.SKIN_PUNCTURE, tick=5, detail="")
    state = record_events(ProcedureState(), [ev])
    state = record_events(state, [])
    assert state.events == (ev,)


def test_lumen_entry_monitor():
    entry = Event(kind=EventKind.LUMEN_ENTRY, tick=10, detail="a")
    retract = Event(kind=EventKind.NEEDLE_RETRACTED, tick=20, detail="a")
    assert not lumen_entry_monitor([])
    assert lumen_entry_monitor([entry])
    assert not lumen_entry_monitor([entry, retract])
    assert lumen_entry_monitor([entry, retract, entry])
    # events for another vessel are ignored when filtering
    other = Event(kind=EventKind.LUMEN_ENTRY, tick=10, detail="b")
    assert not lumen_entry_monitor([other], vessel_id="a")


def test_outcome_validation():
    with pytest.raises(ValueError):
        Outcome(success=True, failure_mode=FailureMode.WALL_CATCH,
                tip_offset_fraction=0.0, insertion_angle=0.5)


# -- guidewire grading -------------------------------------------------------

STRAIGHT = np.array([[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]])
RADIUS = 3.5


def attempt(tip, origin, direction, angle=math.radians(40.0), entered=True,
            back_wall=False):
    return guidewire_attempt(np.asarray(tip, float), STRAIGHT, RADIUS,
                             np.asarray(origin, float),
                             np.asarray(direction, float), angle, entered,
                             back_wall)


def test_grade_on_centerline_success():
    out = attempt([50.0, 0.0, 0.0], [40.0, 0.0, 10.0], [1.0, 0.0, -1.0])
    assert out.success
    assert out.failure_mode is None
    assert out.tip_offset_fraction == pytest.approx(0.0)


def test_grade_offset_wall_catch():
    out = attempt([50.0, 0.9 * RADIUS, 0.0], [40.0, 0.9 * RADIUS, 10.0],
                  [1.0, 0.0, -1.0])
    assert not out.success
    assert out.failure_mode is FailureMode.WALL_CATCH
    assert out.tip_offset_fraction == pytest.approx(0.9)


def test_grade_steep_angle_wall_catch():
    out = attempt([50.0, 0.0, 0.0], [49.0, 0.0, 10.0], [0.1, 0.0, -1.0],
                  angle=math.radians(60.0))
    assert out.failure_mode is FailureMode.WALL_CATCH


def test_grade_unpunctured_wall_catch():
    out = attempt([50.0, 0.0, 0.0], [40.0, 0.0, 10.0], [1.0, 0.0, -1.0],
                  entered=False)
    assert out.failure_mode is FailureMode.WALL_CATCH


def test_grade_beyond_far_wall():
    origin = np.array([40.0, 0.0, 10.0])
    d = np.array([1.0, 0.0, -1.0]) / math.sqrt(2.0)
    tip = origin + 25.0 * d    # z = -7.7, two radii past the lumen
    out = attempt(tip, origin, d)
    assert out.failure_mode is FailureMode.BACK_WALL_PUNCTURE


def test_grade_back_wall_flag():
    out = attempt([50.0, 0.0, 0.0], [40.0, 0.0, 10.0], [1.0, 0.0, -1.0],
                  back_wall=True)
    assert out.failure_mode is FailureMode.BACK_WALL_PUNCTURE


def test_grade_outside():
    out = attempt([50.0, 20.0, 0.0], [50.0, 20.0, 10.0], [0.0, 0.0, -1.0])
    assert out.failure_mode is FailureMode.OUT_OF_WORKSPACE


def random_placements(n, seed):
    """Randomized needle placements around the straight test tube."""
    rng = np.random.default_rng(seed)
    for _ in range(n):
        x = rng.uniform(20.0, 80.0)
        y = rng.uniform(-2.0 * RADIUS, 2.0 * RADIUS)
        angle = rng.uniform(math.radians(20.0), math.radians(60.0))
        length = rng.uniform(5.0, 25.0)
        origin = np.array([x, y, rng.uniform(6.0, 12.0)])
        d = np.array([math.cos(angle), 0.0, -math.sin(angle)])
        tip = origin + length * d
        entered = bool(rng.integers(0, 2))
        back_wall = bool(rng.integers(0, 2)) and not entered
        yield tip, origin, d, angle, entered, back_wall


def test_grader_agrees_with_marching_oracle():
    disagreements = 0
    for tip, origin, d, angle, entered, back_wall in random_placements(
            300, seed=42):
        a = guidewire_attempt(tip, STRAIGHT, RADIUS, origin, d, angle,
                              entered, back_wall)
        b = brute_force_guidewire_oracle(tip, STRAIGHT, RADIUS, origin, d,
                                         angle, entered, back_wall)
        if (a.success, a.failure_mode) != (b.success, b.failure_mode):
            disagreements += 1
    assert disagreements == 0


def test_grader_agrees_on_curved_tube():
    s = np.linspace(0.0, 1.0, 200)
    curved = np.stack([100.0 * s, 10.0 * np.sin(2.0 * math.pi * s),
                       np.zeros_like(s)], axis=1)
    disagreements = 0
    for tip, origin, d, angle, entered, back_wall in random_placements(
            200, seed=7):
        a = guidewire_attempt(tip, curved, RADIUS, origin, d, angle,
                              entered, back_wall)
        b = brute_force_guidewire_oracle(tip, curved, RADIUS, origin, d,
                                         angle, entered, back_wall)
        if (a.success, a.failure_mode) != (b.success, b.failure_mode):
            disagreements += 1
    assert disagreements == 0


def test_classify_tip_regions():
    origin = np.array([40.0, 0.0, 10.0])
    d = np.array([1.0, 0.0, -1.0]) / math.sqrt(2.0)
    region, frac = classify_tip(origin + 14.15 * d, STRAIGHT, RADIUS, origin,
                                d)
    assert region == "inside"
    region, _ = classify_tip(origin + 2.0 * d, STRAIGHT, RADIUS, origin, d)
    assert region == "outside"
    region, _ = classify_tip(origin + 25.0 * d, STRAIGHT, RADIUS, origin, d)
    assert region == "beyond"
