import math

import numpy as np
import pytest

from vascusim.mechanism import DeviceConfig
from vascusim.phantom import default_human_phantom
from vascusim.procedure import Phase
from vascusim.session import Session


@pytest.fixture
def session():
    return Session(default_human_phantom(), DeviceConfig(), seed=1)


def run_ticks(session, n):
    for _ in range(n):
        session.tick()


def test_hello_returns_state_update_with_workspace(session):
    reply = session.handle_message({"type": "Hello"})
    assert reply["type"] == "StateUpdate"
    assert reply["phase"] == "Idle"
    assert len(reply["workspace"]) >= 3
    assert reply["tick"] == 0
    assert reply["outcome"] is None
    # Hello is not part of the replayable command stream
    assert session.log.records == []


def test_unknown_message_rejected(session):
    reply = session.handle_message({"type": "Quux"})
    assert reply["type"] == "Rejection"
    reply = session.handle_message({})
    assert reply["type"] == "Rejection"


def test_wrong_phase_rejected_and_logged(session):
    reply = session.handle_message({"type": "ClickCenter", "u": 320, "v": 100})
    assert reply["type"] == "Rejection"
    assert session.proc.phase is Phase.IDLE
    kinds = [r["kind"] for r in session.log.records]
    assert kinds == ["rejection"]
    assert session.log.records[0]["payload"]["message"]["type"] \
        == "ClickCenter"


def test_start_scan_decomposes_to_scanning(session):
    reply = session.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    assert reply["type"] == "StateUpdate"
    assert session.proc.phase is Phase.SCANNING
    kinds = [r["kind"] for r in session.log.records]
    assert kinds == ["command"]


def test_scan_reaches_force_band_and_completes(session):
    session.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    for _ in range(800):
        session.tick()
        if session.force_settled():
            break
    assert session.force_settled()
    assert abs(session.sim.state.axial_force - session.config.f_ref) <= 0.5
    while session.proc.phase is Phase.SCANNING and session.tick_count < 3000:
        session.tick()
    assert session.proc.phase is Phase.MARK_REVIEW


def test_save_and_goto_mark(session):
    session.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    run_ticks(session, 800)
    assert session.proc.phase is Phase.SCANNING
    session.handle_message({"type": "SaveMark"})
    saved = session.proc.marks[0]
    while session.proc.phase is Phase.SCANNING:
        session.tick()
    session.handle_message({"type": "GotoMark", "index": 0})
    assert session.proc.phase is Phase.CENTERING
    run_ticks(session, 300)
    pos = session.sim.state.probe_position
    assert math.hypot(pos[0] - saved[0], pos[1] - saved[1]) < 0.01
    assert abs(session.sim.state.probe_yaw - saved[3]) < 1e-9


def test_goto_missing_mark_rejected(session):
    session.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    while session.proc.phase is Phase.SCANNING:
        session.tick()
    reply = session.handle_message({"type": "GotoMark", "index": 3})
    assert reply["type"] == "Rejection"
    assert session.proc.phase is Phase.MARK_REVIEW


def centered_session():
    """Drive a session to the Centering phase over the artery."""
    s = Session(default_human_phantom(), DeviceConfig(), seed=1)
    s.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    marked = False
    while s.proc.phase is Phase.SCANNING:
        s.tick()
        pos = s.sim.state.probe_position
        if not marked and abs(pos[0] - 60.0) <= 0.2:
            s.handle_message({"type": "SaveMark"})
            marked = True
    s.handle_message({"type": "GotoMark", "index": 0})
    for _ in range(400):
        s.tick()
    return s


def test_click_center_moves_probe_laterally():
    s = centered_session()
    u0 = s.state_update()["needle_estimate_px"]
    before = s.sim.state.probe_position.copy()
    s.handle_message({"type": "ClickCenter", "u": 400.0, "v": 120.0})
    for _ in range(300):
        s.tick()
    after = s.sim.state.probe_position
    moved = after[:2] - before[:2]
    # click 80 px right of center = 5 mm along the lateral axis (yaw 90 deg)
    assert np.linalg.norm(moved) == pytest.approx(5.0, abs=0.05)
    assert abs(moved[1]) == pytest.approx(5.0, abs=0.05)


def test_rotate_nudges_accumulate():
    s = centered_session()
    for _ in range(45):
        s.handle_message({"type": "RotateNudge", "direction": "cw",
                          "increment_deg": 2.0})
        for _ in range(20):
            s.tick()
    assert s.sim.state.probe_yaw == pytest.approx(0.0, abs=1e-6)


def test_set_angle_gated_on_elongation():
    s = centered_session()
    # still transverse: the section is round, angle setting refused
    reply = s.handle_message({"type": "SetAngle", "deg": 40.0})
    assert reply["type"] == "Rejection"
    assert "longitudinal" in reply["reason"]
    assert s.proc.phase is Phase.CENTERING


def test_abort_from_any_phase_produces_outcome(session):
    session.handle_message(
        {"type": "StartScan", "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    reply = session.handle_message({"type": "Abort"})
    assert reply["type"] == "StateUpdate"
    assert session.proc.phase is Phase.ABORTED
    assert session.proc.outcome is not None
    assert not session.proc.outcome.success
    assert session.proc.outcome.failure_mode.value == "Aborted"


def test_snapshots_logged_at_10hz(session):
    run_ticks(session, 25)
    snaps = [r for r in session.log.records if r["kind"] == "snapshot"]
    assert [r["tick"] for r in snaps] == [10, 20]


def test_frame_dump(tmp_path):
    s = Session(default_human_phantom(), DeviceConfig(), seed=1,
                frames_dir=str(tmp_path), frame_every_ticks=10)
    run_ticks(s, 20)
    pgms = sorted(tmp_path.glob("*.pgm"))
    assert len(pgms) == 2
    assert pgms[0].read_bytes().startswith(b"P5\n")
    refs = [r for r in s.log.records if r["kind"] == "frame"]
    assert len(refs) == 2


def test_nudge_limited():
    s = centered_session()
    reply = s.handle_message({"type": "Nudge", "axis": "lateral", "mm": 11.0})
    assert reply["type"] == "Rejection"
    reply = s.handle_message({"type": "Nudge", "axis": "up", "mm": 1.0})
    assert reply["type"] == "Rejection"
    before = s.sim.state.probe_position.copy()
    reply = s.handle_message({"type": "Nudge", "axis": "normal", "mm": 2.0})
    assert reply["type"] == "StateUpdate"
    for _ in range(100):
        s.tick()
    moved = s.sim.state.probe_position[:2] - before[:2]
    assert np.linalg.norm(moved) == pytest.approx(2.0, abs=0.05)
