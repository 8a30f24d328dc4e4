"""Headless scripted operator and log replay.

A script is a list of entries, each either ``{"send": <message>}`` or
``{"wait": <predicate>}``.  The runner feeds messages into a Session,
ticking the simulation between entries until each wait predicate holds.
Replay re-runs the command stream of a saved log against a fresh session
and compares the 10 Hz snapshot hashes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .logio import SessionLog, snapshot_hash
from .mechanism import DT, DeviceConfig, device_config_hash
from .phantom import PhantomModel, PhantomProfile, phantom_hash
from .procedure import Outcome, Phase
from .session import Session

DEFAULT_WAIT_TIMEOUT_S = 30.0


class ScriptError(ValueError):
    pass


@dataclass
class ScriptResult:
    session: Session
    outcome: Optional[Outcome]
    ticks: int
    rejections: list[dict]


def _predicate(session: Session, wait: dict) -> Callable[[], bool]:
    kind = wait.get("for")
    if kind == "phase":
        want = Phase(wait["phase"])
        return lambda: session.proc.phase is want
    if kind == "event":
        want_ev = wait["event"]
        n0 = len(session.proc.events)
        return lambda: any(ev.kind.value == want_ev
                           for ev in session.proc.events[n0:])
    if kind == "force_settled":
        return session.force_settled
    if kind == "settled":
        return session.motion_settled
    if kind == "probe_at":
        x, y = wait["x"], wait["y"]
        tol = wait.get("tol", 0.5)
        return lambda: math.hypot(
            session.sim.state.probe_position[0] - x,
            session.sim.state.probe_position[1] - y) <= tol
    if kind == "elapsed":
        target = session.sim_time + float(wait["seconds"])
        return lambda: session.sim_time >= target - DT / 2
    raise ScriptError(f"unknown wait predicate {kind!r}")


def run_script(session: Session, script: list[dict],
               timeout_s: float = DEFAULT_WAIT_TIMEOUT_S) -> ScriptResult:
    """Execute a script to completion.

    A wait that fails to satisfy its predicate within ``timeout_s`` of
    simulated time aborts the procedure, producing an Aborted outcome
    rather than hanging.
    """
    rejections: list[dict] = []
    for entry in script:
        if "send" in entry:
            reply = session.handle_message(entry["send"])
            if reply.get("type") == "Rejection":
                rejections.append({"message": entry["send"],
                                   "reason": reply["reason"]})
        elif "wait" in entry:
            pred = _predicate(session, entry["wait"])
            deadline = session.sim_time + entry["wait"].get(
                "timeout", timeout_s)
            while not pred():
                if session.sim_time >= deadline:
                    session.handle_message({"type": "Abort"})
                    return ScriptResult(session, session.proc.outcome,
                                        session.tick_count, rejections)
                session.tick()
        else:
            raise ScriptError(f"script entry needs 'send' or 'wait': {entry}")
    return ScriptResult(session, session.proc.outcome, session.tick_count,
                        rejections)


def load_script(path) -> list[dict]:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ScriptError("script file must contain a JSON list of entries")
    return data


# ---------------------------------------------------------------------------
# Canonical full-procedure script
# ---------------------------------------------------------------------------

#: Image-space targets per phantom profile.  The centering click and the
#: insertion target are in pixels; the tweak click nudges the tip along the
#: calibrated needle axis after the estimate-vs-physics mismatch shows up.
_PROFILE_TARGETS = {
    PhantomProfile.HUMAN_PHANTOM: {
        "center_click": (400.0, 120.0),
        "needle_target": (480.0, 108.0),
        "tweak_click": None,
    },
    PhantomProfile.PORCINE_IN_VIVO: {
        "center_click": (400.0, 120.0),
        "needle_target": (576.0, 168.0),
        # +5 mm along the needle axis at 45 deg: (+3.536, +3.536) mm
        # = (+56.6 px u, +21.2 px v) from the target pixel
        "tweak_click": (576.0 + 5.0 * math.cos(math.radians(45.0)) * 16.0,
                        168.0 + 5.0 * math.sin(math.radians(45.0)) * 6.0),
    },
}


def make_canonical_script(profile: PhantomProfile,
                          include_tweak: Optional[bool] = None) -> list[dict]:
    """The standard 8-step procedure as a script.

    The step sequence is identical for every profile; only the image-space
    click coordinates are instantiated per profile.  ``include_tweak``
    defaults to whatever the profile needs.
    """
    targets = _PROFILE_TARGETS[profile]
    if include_tweak is None:
        include_tweak = targets["tweak_click"] is not None

    script: list[dict] = [
        {"send": {"type": "Hello"}},
        {"send": {"type": "StartScan",
                  "waypoints": [[20.0, 50.0], [140.0, 50.0]]}},
        {"wait": {"for": "force_settled", "timeout": 10.0}},
        {"wait": {"for": "probe_at", "x": 60.0, "y": 50.0, "tol": 0.5,
                  "timeout": 30.0}},
        {"send": {"type": "SaveMark"}},
        {"wait": {"for": "event", "event": "ScanComplete", "timeout": 30.0}},
        {"send": {"type": "GotoMark", "index": 0}},
        {"wait": {"for": "settled", "timeout": 10.0}},
        {"send": {"type": "ClickCenter",
                  "u": targets["center_click"][0],
                  "v": targets["center_click"][1]}},
        {"wait": {"for": "settled", "timeout": 10.0}},
    ]
    # rotate from transverse (yaw 90 deg) to longitudinal (yaw 0)
    for _ in range(45):
        script.append({"send": {"type": "RotateNudge", "direction": "cw",
                                "increment_deg": 2.0}})
        script.append({"wait": {"for": "settled", "timeout": 5.0}})
    script += [
        {"send": {"type": "SetAngle", "deg": 40.0}},
        {"wait": {"for": "settled", "timeout": 10.0}},
        {"send": {"type": "NeedleTarget",
                  "u": targets["needle_target"][0],
                  "v": targets["needle_target"][1]}},
        {"wait": {"for": "phase", "phase": "Tweaking", "timeout": 30.0}},
    ]
    if include_tweak and targets["tweak_click"] is not None:
        script += [
            {"send": {"type": "NeedleTweak",
                      "u": targets["tweak_click"][0],
                      "v": targets["tweak_click"][1]}},
            {"wait": {"for": "phase", "phase": "Tweaking", "timeout": 30.0}},
        ]
    script += [
        {"send": {"type": "InsertGuidewire"}},
        {"send": {"type": "RetractNeedle"}},
        {"wait": {"for": "phase", "phase": "Complete", "timeout": 30.0}},
    ]
    return script


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    matched: bool
    snapshots_checked: int
    first_divergence_tick: Optional[int] = None
    detail: str = ""


def replay(log: SessionLog, phantom: PhantomModel, config: DeviceConfig
           ) -> ReplayResult:
    """Re-run a logged command stream and compare snapshot hashes.

    The phantom and device config must hash-match the log header; commands
    are re-applied at their recorded ticks and every recorded snapshot is
    checked against the recomputed state hash.
    """
    if phantom_hash(phantom) != log.phantom_hash:
        return ReplayResult(False, 0, None, "phantom hash mismatch")
    if device_config_hash(config) != log.config_hash:
        return ReplayResult(False, 0, None, "device config hash mismatch")

    session = Session(phantom, config, seed=log.seed, record=False)
    checked = 0
    for rec in log.records:
        tick, kind, payload = rec["tick"], rec["kind"], rec["payload"]
        while session.tick_count < tick:
            session.tick()
        if kind == "command":
            reply = session.handle_message(payload)
            if reply.get("type") == "Rejection":
                return ReplayResult(False, checked, tick,
                                    f"command rejected on replay: "
                                    f"{reply['reason']}")
        elif kind == "rejection":
            # rejected commands never mutated state; re-check the guard
            reply = session.handle_message(payload["message"])
            if reply.get("type") != "Rejection":
                return ReplayResult(False, checked, tick,
                                    "command accepted on replay but was "
                                    "rejected live")
        elif kind == "snapshot":
            got = snapshot_hash(session.sim.state, session.proc)
            if got != payload["hash"]:
                return ReplayResult(False, checked, tick,
                                    f"snapshot hash mismatch at tick {tick}: "
                                    f"{got} != {payload['hash']}")
            checked += 1
    return ReplayResult(True, checked)
