"""The 8-step Seldinger workflow as a state machine, with the geometric
guidewire success oracle.

Success is graded purely against ground-truth geometry (the displaced
vessel), never against calibrated estimates, mirroring how the physical
system was graded against physical reality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .geom import point_to_polyline
from .mechanism import Event, EventKind

GUIDEWIRE_ADVANCE_MM = 150.0
DEFAULT_ALPHA = 0.5                      # max tip offset as fraction of radius
DEFAULT_WIRE_MAX_ANGLE = math.radians(50.0)   # from the skin plane


class Phase(str, Enum):
    IDLE = "Idle"
    WAYPOINT_SELECTION = "WaypointSelection"
    SCANNING = "Scanning"
    MARK_REVIEW = "MarkReview"
    CENTERING = "Centering"
    NEEDLE_ALIGNING = "NeedleAligning"
    INSERTING = "Inserting"
    TWEAKING = "Tweaking"
    GUIDEWIRE_INSERTING = "GuidewireInserting"
    RETRACTING = "Retracting"
    COMPLETE = "Complete"
    ABORTED = "Aborted"


class FailureMode(str, Enum):
    WALL_CATCH = "WallCatch"
    BACK_WALL_PUNCTURE = "BackWallPuncture"
    OUT_OF_WORKSPACE = "OutOfWorkspace"
    ABORTED = "Aborted"


class ProcedureCommand(str, Enum):
    START_WAYPOINT_SELECTION = "StartWaypointSelection"
    ADD_WAYPOINT = "AddWaypoint"
    START_SCAN = "StartScan"
    SAVE_MARK = "SaveMark"
    SCAN_COMPLETE = "ScanComplete"
    GOTO_MARK = "GotoMark"
    CLICK_CENTER = "ClickCenter"
    ROTATE_NUDGE = "RotateNudge"
    NUDGE = "Nudge"
    SET_ANGLE = "SetAngle"
    NEEDLE_TARGET = "NeedleTarget"
    INSERTION_SETTLED = "InsertionSettled"
    NEEDLE_TWEAK = "NeedleTweak"
    INSERT_GUIDEWIRE = "InsertGuidewire"
    RETRACT_NEEDLE = "RetractNeedle"
    RETRACT_COMPLETE = "RetractComplete"
    ABORT = "Abort"


#: Commands accepted in each phase and the phase they lead to (None = stay).
_EDGES: dict[Phase, dict[ProcedureCommand, Optional[Phase]]] = {
    Phase.IDLE: {
        ProcedureCommand.START_WAYPOINT_SELECTION: Phase.WAYPOINT_SELECTION,
    },
    Phase.WAYPOINT_SELECTION: {
        ProcedureCommand.ADD_WAYPOINT: None,
        ProcedureCommand.START_SCAN: Phase.SCANNING,
    },
    Phase.SCANNING: {
        ProcedureCommand.SAVE_MARK: None,
        ProcedureCommand.SCAN_COMPLETE: Phase.MARK_REVIEW,
    },
    Phase.MARK_REVIEW: {
        ProcedureCommand.GOTO_MARK: Phase.CENTERING,
    },
    Phase.CENTERING: {
        ProcedureCommand.CLICK_CENTER: None,
        ProcedureCommand.ROTATE_NUDGE: None,
        ProcedureCommand.NUDGE: None,
        ProcedureCommand.SAVE_MARK: None,
        ProcedureCommand.SET_ANGLE: Phase.NEEDLE_ALIGNING,
    },
    Phase.NEEDLE_ALIGNING: {
        ProcedureCommand.SET_ANGLE: None,
        ProcedureCommand.NEEDLE_TARGET: Phase.INSERTING,
    },
    Phase.INSERTING: {
        ProcedureCommand.INSERTION_SETTLED: Phase.TWEAKING,
    },
    Phase.TWEAKING: {
        ProcedureCommand.NEEDLE_TWEAK: Phase.INSERTING,
        ProcedureCommand.NEEDLE_TARGET: Phase.INSERTING,
        ProcedureCommand.INSERT_GUIDEWIRE: Phase.GUIDEWIRE_INSERTING,
    },
    Phase.GUIDEWIRE_INSERTING: {
        ProcedureCommand.RETRACT_NEEDLE: Phase.RETRACTING,
    },
    Phase.RETRACTING: {
        ProcedureCommand.RETRACT_COMPLETE: Phase.COMPLETE,
    },
    Phase.COMPLETE: {},
    Phase.ABORTED: {},
}

STEP_FOR_PHASE = {
    Phase.WAYPOINT_SELECTION: 1, Phase.SCANNING: 2, Phase.MARK_REVIEW: 3,
    Phase.CENTERING: 4, Phase.NEEDLE_ALIGNING: 5, Phase.INSERTING: 5,
    Phase.TWEAKING: 6, Phase.GUIDEWIRE_INSERTING: 7, Phase.RETRACTING: 8,
    Phase.COMPLETE: 8,
}


class TransitionError(ValueError):
    def __init__(self, phase: Phase, command: ProcedureCommand):
        super().__init__(f"command {command.value} not allowed in phase "
                         f"{phase.value}")
        self.phase = phase
        self.command = command


@dataclass(frozen=True)
class Outcome:
    success: bool
    failure_mode: Optional[FailureMode]
    tip_offset_fraction: float
    insertion_angle: float

    def __post_init__(self):
        if self.success and self.failure_mode is not None:
            raise ValueError("a successful outcome cannot carry a failure mode")


@dataclass(frozen=True)
class ProcedureState:
    phase: Phase = Phase.IDLE
    marks: tuple = ()                # saved probe poses (opaque tuples)
    events: tuple[Event, ...] = ()
    outcome: Optional[Outcome] = None


def transition(state: ProcedureState, command: ProcedureCommand,
               mark: Optional[tuple] = None) -> ProcedureState:
    """Apply one command; invalid commands raise and leave state unchanged."""
    if command is ProcedureCommand.ABORT:
        return replace(state, phase=Phase.ABORTED)
    allowed = _EDGES[state.phase]
    if command not in allowed:
        raise TransitionError(state.phase, command)
    nxt = allowed[command]
    new = state if nxt is None else replace(state, phase=nxt)
    if command is ProcedureCommand.SAVE_MARK and mark is not None:
        new = replace(new, marks=state.marks + (mark,))
    return new


def record_events(state: ProcedureState, events: Sequence[Event]
                  ) -> ProcedureState:
    if not events:
        return state
    return replace(state, events=state.events + tuple(events))


def lumen_entry_monitor(events: Sequence[Event],
                        vessel_id: Optional[str] = None) -> bool:
    """True from the first LumenEntry until the needle leaves the vessel."""
    flash = False
    for ev in events:
        if vessel_id is not None and ev.detail not in ("", vessel_id):
            continue
        if ev.kind is EventKind.LUMEN_ENTRY:
            flash = True
        elif ev.kind is EventKind.NEEDLE_RETRACTED:
            flash = False
    return flash


# ---------------------------------------------------------------------------
# Guidewire oracle
# ---------------------------------------------------------------------------

def classify_tip(tip: np.ndarray, centerline: np.ndarray, radius: float,
                 origin: np.ndarray, needle_direction: np.ndarray
                 ) -> tuple[str, float]:
    """Geometric classification of the tip against a (displaced) tube.

    Returns (region, offset_fraction) with region one of ``inside``,
    ``outside`` (the ray never reached the lumen) or ``beyond`` (the ray
    crossed the lumen and the tip sits past the far wall).
    """
    from .geom import ray_tube_entry
    tip = np.asarray(tip, float)
    origin = np.asarray(origin, float)
    d = np.asarray(needle_direction, float)
    d = d / np.linalg.norm(d)
    dist, _, _ = point_to_polyline(tip, centerline)
    frac = dist / radius
    if dist < radius:
        return "inside", frac
    t_in = ray_tube_entry(origin, d, centerline, radius)
    t_tip = float((tip - origin) @ d)
    if t_in is not None and t_tip > t_in:
        return "beyond", frac
    return "outside", frac


def guidewire_attempt(tip: np.ndarray, centerline: np.ndarray, radius: float,
                      origin: np.ndarray,
                      needle_direction: np.ndarray, insertion_angle: float,
                      lumen_entered: bool, back_wall_punctured: bool,
                      alpha: float = DEFAULT_ALPHA,
                      wire_max_angle: float = DEFAULT_WIRE_MAX_ANGLE
                      ) -> Outcome:
    """Grade a guidewire attempt against ground-truth displaced geometry.

    Success needs the tip strictly inside the lumen of a punctured vessel,
    close to the centerline, at a shallow enough angle, with no back-wall
    puncture.  A tip pressing the intact wall or riding near it catches the
    wire; a tip past the far wall is a back-wall puncture.
    """
    region, frac = classify_tip(tip, centerline, radius, origin,
                                needle_direction)
    if back_wall_punctured or region == "beyond":
        return Outcome(False, FailureMode.BACK_WALL_PUNCTURE, frac,
                       insertion_angle)
    if region == "outside":
        return Outcome(False, FailureMode.OUT_OF_WORKSPACE, frac,
                       insertion_angle)
    # inside the (displaced) lumen footprint
    if not lumen_entered:
        # wall tented around the tip but never punctured: the wire catches
        return Outcome(False, FailureMode.WALL_CATCH, frac, insertion_angle)
    if frac > alpha or insertion_angle > wire_max_angle:
        return Outcome(False, FailureMode.WALL_CATCH, frac, insertion_angle)
    return Outcome(True, None, frac, insertion_angle)


def brute_force_guidewire_oracle(tip: np.ndarray, centerline: np.ndarray,
                                 radius: float, origin: np.ndarray,
                                 direction: np.ndarray,
                                 insertion_angle: float, lumen_entered: bool,
                                 back_wall_punctured: bool,
                                 alpha: float = DEFAULT_ALPHA,
                                 wire_max_angle: float = DEFAULT_WIRE_MAX_ANGLE,
                                 step: float = 0.01) -> Outcome:
    """Independent oracle: march the needle ray at ``step`` mm resolution.

    Walks from the pivot to the tip sampling the distance to the displaced
    tube, tracking entry into and exit out of the lumen, and classifies the
    final sample.  Shares no code path with :func:`guidewire_attempt`'s
    closed-form projections beyond raw polyline distance.
    """
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    t_tip = float((np.asarray(tip, float) - np.asarray(origin, float))
                  @ direction)
    ts = np.arange(0.0, max(t_tip, 0.0) + step, step)
    ts = ts[ts <= t_tip + 1e-12]
    entered = False
    exited_beyond = False
    last_inside = False
    for t in ts:
        p = np.asarray(origin) + t * direction
        d, _, _ = point_to_polyline(p, centerline)
        inside = d < radius
        if inside:
            entered = True
        if entered and not inside and last_inside:
            exited_beyond = True
        last_inside = inside
    tip_p = np.asarray(origin) + t_tip * direction
    d_tip, _, _ = point_to_polyline(tip_p, centerline)
    frac = d_tip / radius
    if back_wall_punctured or exited_beyond or (entered and not last_inside):
        return Outcome(False, FailureMode.BACK_WALL_PUNCTURE, frac,
                       insertion_angle)
    if not last_inside:
        return Outcome(False, FailureMode.OUT_OF_WORKSPACE, frac,
                       insertion_angle)
    if not lumen_entered:
        return Outcome(False, FailureMode.WALL_CATCH, frac, insertion_angle)
    if frac > alpha or insertion_angle > wire_max_angle:
        return Outcome(False, FailureMode.WALL_CATCH, frac, insertion_angle)
    return Outcome(True, None, frac, insertion_angle)
