import numpy as np
import pytest

from vascusim.logio import SessionLog, fnv1a64, snapshot_hash
from vascusim.mechanism import MechanismState
from vascusim.procedure import Phase, ProcedureState


def mech(tick=0, x=20.0):
    return MechanismState(probe_position=np.array([x, 50.0, 18.0]),
                          probe_yaw=1.5707963267948966, l_act=0.0,
                          theta_act=40.0, axial_force=0.0, tick=tick)


# -- hashing ----------------------------------------------------------------

def test_fnv1a64_reference_vectors():
    # classic published FNV-1a 64-bit test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_snapshot_hash_deterministic_and_sensitive():
    proc = ProcedureState()
    a = snapshot_hash(mech(), proc)
    assert a == snapshot_hash(mech(), proc)
    assert len(a) == 16
    assert a != snapshot_hash(mech(x=20.0 + 1e-12), proc)
    assert a != snapshot_hash(mech(tick=1), proc)
    assert a != snapshot_hash(mech(), ProcedureState(phase=Phase.SCANNING))


# -- log structure ----------------------------------------------------------

def test_ticks_must_be_nondecreasing():
    log = SessionLog(seed=1, phantom_hash="p", config_hash="c")
    log.command(5, {"type": "Hello"})
    log.command(5, {"type": "Hello"})
    with pytest.raises(ValueError):
        log.command(4, {"type": "Hello"})


def test_roundtrip():
    log = SessionLog(seed=9, phantom_hash="ph", config_hash="ch")
    log.command(0, {"type": "StartScan", "waypoints": [[20, 50], [140, 50]]})
    log.snapshot(10, snapshot_hash(mech(tick=10), ProcedureState()),
                 mech(tick=10), ProcedureState())
    text = log.dumps()
    back = SessionLog.loads(text)
    assert back.seed == 9
    assert back.phantom_hash == "ph"
    assert back.records == log.records
    assert back.dumps() == text


def test_loads_rejects_bad_format():
    with pytest.raises(ValueError):
        SessionLog.loads('{"format": 99, "seed": 0}\n')
    with pytest.raises(ValueError):
        SessionLog.loads("")


def test_overall_hash_covers_snapshots_only():
    proc = ProcedureState()
    a = SessionLog(seed=1, phantom_hash="p", config_hash="c")
    b = SessionLog(seed=1, phantom_hash="p", config_hash="c")
    for log in (a, b):
        log.snapshot(10, snapshot_hash(mech(tick=10), proc), mech(tick=10),
                     proc)
    a.command(11, {"type": "Hello"})
    assert a.overall_hash() == b.overall_hash()
    b.snapshot(20, snapshot_hash(mech(tick=20), proc), mech(tick=20), proc)
    assert a.overall_hash() != b.overall_hash()
