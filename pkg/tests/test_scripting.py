import copy
import json
import math

import pytest

from vascusim.logio import SessionLog
from vascusim.mechanism import DeviceConfig
from vascusim.phantom import (PhantomProfile, default_human_phantom,
                              default_porcine_phantom)
from vascusim.procedure import FailureMode, Phase
from vascusim.scripting import (ScriptError, load_script,
                                make_canonical_script, replay, run_script)
from vascusim.session import Session


def run_canonical(phantom, profile, seed=1, include_tweak=None):
    session = Session(phantom, DeviceConfig(), seed=seed)
    script = make_canonical_script(profile, include_tweak=include_tweak)
    return run_script(session, script)


@pytest.fixture(scope="module")
def human_result():
    return run_canonical(default_human_phantom(),
                         PhantomProfile.HUMAN_PHANTOM)


@pytest.fixture(scope="module")
def porcine_plain_result():
    return run_canonical(default_porcine_phantom(),
                         PhantomProfile.PORCINE_IN_VIVO, include_tweak=False)


@pytest.fixture(scope="module")
def porcine_tweak_result():
    return run_canonical(default_porcine_phantom(),
                         PhantomProfile.PORCINE_IN_VIVO, include_tweak=True)


# -- canonical outcomes ------------------------------------------------------

def test_human_canonical_success(human_result):
    out = human_result.outcome
    assert out is not None and out.success
    assert out.tip_offset_fraction <= 0.5
    assert out.insertion_angle <= math.radians(50.0)
    assert human_result.session.proc.phase is Phase.COMPLETE
    assert human_result.rejections == []


def test_porcine_without_tweak_wall_catch(porcine_plain_result):
    out = porcine_plain_result.outcome
    assert out is not None and not out.success
    assert out.failure_mode is FailureMode.WALL_CATCH
    assert porcine_plain_result.session.proc.phase is Phase.COMPLETE


def test_porcine_with_tweak_success(porcine_tweak_result):
    out = porcine_tweak_result.outcome
    assert out is not None and out.success
    assert porcine_tweak_result.rejections == []


def test_same_seed_identical_trajectory():
    a = run_canonical(default_human_phantom(), PhantomProfile.HUMAN_PHANTOM)
    b = run_canonical(default_human_phantom(), PhantomProfile.HUMAN_PHANTOM)
    assert a.session.log.overall_hash() == b.session.log.overall_hash()
    assert a.ticks == b.ticks


# -- runner mechanics --------------------------------------------------------

def test_wait_timeout_aborts():
    session = Session(default_human_phantom(), DeviceConfig(), seed=1)
    script = [
        {"send": {"type": "StartScan",
                  "waypoints": [[20.0, 50.0], [140.0, 50.0]]}},
        # the phase can never be reached from Scanning without more commands
        {"wait": {"for": "phase", "phase": "Inserting", "timeout": 2.0}},
    ]
    result = run_script(session, script)
    assert session.proc.phase is Phase.ABORTED
    assert result.outcome.failure_mode is FailureMode.ABORTED


def test_rejections_collected_and_procedure_continues():
    session = Session(default_human_phantom(), DeviceConfig(), seed=1)
    script = [
        {"send": {"type": "ClickCenter", "u": 320.0, "v": 100.0}},
        {"send": {"type": "StartScan",
                  "waypoints": [[20.0, 50.0], [140.0, 50.0]]}},
        {"wait": {"for": "elapsed", "seconds": 1.0}},
    ]
    result = run_script(session, script)
    assert len(result.rejections) == 1
    assert session.proc.phase is Phase.SCANNING


def test_bad_entries_raise():
    session = Session(default_human_phantom(), DeviceConfig(), seed=1)
    with pytest.raises(ScriptError):
        run_script(session, [{"neither": 1}])
    with pytest.raises(ScriptError):
        run_script(session, [{"wait": {"for": "bogus"}}])


def test_load_script(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps([{"send": {"type": "Hello"}}]))
    assert load_script(path) == [{"send": {"type": "Hello"}}]
    path.write_text(json.dumps({"send": {}}))
    with pytest.raises(ScriptError):
        load_script(path)


# -- replay ------------------------------------------------------------------

def test_replay_matches(human_result):
    log = human_result.session.log
    result = replay(log, default_human_phantom(), DeviceConfig())
    assert result.matched, result.detail
    assert result.snapshots_checked > 100


def test_replay_roundtrips_through_serialization(porcine_tweak_result):
    text = porcine_tweak_result.session.log.dumps()
    log = SessionLog.loads(text)
    result = replay(log, default_porcine_phantom(), DeviceConfig())
    assert result.matched, result.detail


def test_replay_detects_tampering(human_result):
    log = SessionLog.loads(human_result.session.log.dumps())
    snaps = [r for r in log.records if r["kind"] == "snapshot"]
    snaps[len(snaps) // 2]["payload"]["hash"] = "0" * 16
    result = replay(log, default_human_phantom(), DeviceConfig())
    assert not result.matched
    assert result.first_divergence_tick == snaps[len(snaps) // 2]["tick"]


def test_replay_rejects_wrong_phantom(human_result):
    result = replay(human_result.session.log, default_porcine_phantom(),
                    DeviceConfig())
    assert not result.matched
    assert "phantom" in result.detail


def test_replay_rejects_wrong_config(human_result):
    cfg = DeviceConfig(f_ref=5.0)
    result = replay(human_result.session.log, default_human_phantom(), cfg)
    assert not result.matched
    assert "config" in result.detail
