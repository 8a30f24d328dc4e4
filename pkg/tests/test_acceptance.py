"""Acceptance suite: every criterion prints one pass/fail line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they
are produced.
"""

import math
import time

import cv2
import numpy as np
import pytest

from vascusim.calibration import fit, plan_sweep, simulate_sweep
from vascusim.control import ControllerGains, ScanPlan, ScanState, scan_step
from vascusim.imaging import FrameGeometry, plane_to_pixel
from vascusim.logio import SessionLog
from vascusim.mechanism import (DT, ActuatorLimits, CalibrationParams,
                                Command, DeviceConfig, Simulator,
                                WorkspaceError, image_plane, needle_fk,
                                needle_ik, workspace_mask)
from vascusim.phantom import (PhantomProfile, default_human_phantom,
                              default_porcine_phantom, vessel_cross_section)
from vascusim.procedure import (FailureMode, brute_force_guidewire_oracle,
                                guidewire_attempt)
from vascusim.scripting import make_canonical_script, replay, run_script
from vascusim.session import Session

SWEEP_LIMITS = ActuatorLimits(l_min=20.0, l_max=320.0, theta_min=15.0,
                              theta_max=60.0)
TRUE = CalibrationParams(p_l=0.1, l_off=0.5, p_theta=math.radians(1.0),
                         theta_off=math.radians(2.0), x_scale=16.0,
                         y_scale=6.0, x_off=-128.0, y_off=4.0)
CFG = DeviceConfig()
GEOM = FrameGeometry()


def report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def test_calibration_exact_recovery():
    plan = plan_sweep(SWEEP_LIMITS, 10, 10)
    samples = simulate_sweep(TRUE, plan, 0.0, seed=0)
    t0 = time.perf_counter()
    params, rep = fit(samples, known_x_scale=16.0)
    elapsed = time.perf_counter() - t0
    ok = rep.rms_px < 1e-6 and elapsed < 5.0
    report("calibration exact recovery", ok,
           f"rms {rep.rms_px:.2e} px (< 1e-6), fit time {elapsed:.2f} s "
           f"(< 5 s)")


def test_calibration_noisy_recovery():
    plan = plan_sweep(SWEEP_LIMITS, 10, 10)
    sq = []
    for seed in range(20):
        samples = simulate_sweep(TRUE, plan, 1.0, seed=seed)
        params, _ = fit(samples, known_x_scale=16.0)
        held = simulate_sweep(TRUE, plan, 1.0, seed=1000 + seed)
        for s in held:
            pu, pv = needle_fk(params, s.l_act, s.theta_act)
            sq.append((pu - s.u) ** 2 + (pv - s.v) ** 2)
    rms = math.sqrt(np.mean(sq))
    report("calibration noisy recovery", rms < 1.5,
           f"held-out RMS {rms:.3f} px over 20 seeds (< 1.5)")


def test_gauge_invariance():
    plan = plan_sweep(SWEEP_LIMITS, 10, 10)
    samples = simulate_sweep(TRUE, plan, 1.0, seed=5)
    pa, _ = fit(samples, known_x_scale=16.0)
    pb, _ = fit(samples, known_x_scale=32.0)
    ls = np.linspace(SWEEP_LIMITS.l_min, SWEEP_LIMITS.l_max, 50)
    ts = np.linspace(SWEEP_LIMITS.theta_min, SWEEP_LIMITS.theta_max, 50)
    diffs = [abs(a - b)
             for l in ls for t in ts
             for a, b in zip(needle_fk(pa, l, t), needle_fk(pb, l, t))]
    worst = max(diffs)
    report("gauge invariance", worst < 1e-6,
           f"max |prediction delta| {worst:.2e} px over 50x50 grid (< 1e-6)")


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def test_fk_ik_roundtrip():
    rng = np.random.default_rng(0)
    worst = 0.0
    n = 0
    while n < 1000:
        u = rng.uniform(0.0, GEOM.width)
        v = rng.uniform(0.0, GEOM.height)
        try:
            l_act, theta_act = needle_ik(CFG.calibrated, u, v, CFG.limits)
        except WorkspaceError:
            continue
        u2, v2 = needle_fk(CFG.calibrated, l_act, theta_act)
        worst = max(worst, math.hypot(u2 - u, v2 - v))
        n += 1
    report("fk/ik roundtrip", worst <= 0.5,
           f"worst |fk(ik(p)) - p| {worst:.2e} px over 1000 pixels (<= 0.5)")


def _raster_polygon(verts):
    mask = np.zeros((GEOM.height, GEOM.width), np.uint8)
    pts = np.array([[int(round(u)), int(round(v))] for u, v in verts],
                   np.int32)
    cv2.fillPoly(mask, [pts], 1)
    return mask


def test_workspace_oracle():
    verts = workspace_mask(CFG.calibrated, CFG.limits, GEOM)
    poly = _raster_polygon(verts)

    n = 200
    ls = np.linspace(CFG.limits.l_min, CFG.limits.l_max, n)
    ts = np.linspace(CFG.limits.theta_min, CFG.limits.theta_max, n)
    grid = np.array([[needle_fk(CFG.calibrated, l, t) for t in ts]
                     for l in ls])
    brute = np.zeros_like(poly)
    for i in range(n - 1):
        quads = np.stack([grid[i, :-1], grid[i, 1:], grid[i + 1, 1:],
                          grid[i + 1, :-1]], axis=1)
        for q in np.round(quads).astype(np.int32):
            cv2.fillConvexPoly(brute, q, 1)
    # compare inside the frame only
    inter = np.logical_and(poly, brute).sum()
    union = np.logical_or(poly, brute).sum()
    iou = inter / union
    report("workspace oracle", iou >= 0.99,
           f"polygon vs brute-force FK raster IoU {iou:.4f} "
           f"over 200x200 grid (>= 0.99)")


# ---------------------------------------------------------------------------
# force tracking
# ---------------------------------------------------------------------------

def test_force_tracking():
    phantom = default_human_phantom()   # 120 mm path, +/- 8 mm surface
    plan = ScanPlan(waypoints=((20.0, 50.0), (140.0, 50.0)))
    sim = Simulator(phantom, DeviceConfig(initial_position=(20.0, 50.0,
                                                            18.0)))
    gains = ControllerGains()
    scan = ScanState()
    forces = []
    for _ in range(20000):
        cmd, scan = scan_step(sim.state, plan, gains, scan, DT)
        sim.step(Command(probe_velocity=cmd.velocity))
        forces.append(sim.state.axial_force)
        if cmd.done:
            break
    forces = np.array(forces)
    settled = forces[int(1.0 / DT):]
    frac = float(np.mean(np.abs(settled - 4.0) <= 0.5))
    lost = int(np.sum(settled <= 0.0))
    ok = cmd.done and frac >= 0.95 and lost == 0
    report("force tracking", ok,
           f"{100 * frac:.1f}% of ticks within +/-0.5 N after 1 s "
           f"(>= 95%), {lost} contact-loss ticks (= 0)")


# ---------------------------------------------------------------------------
# click to center
# ---------------------------------------------------------------------------

def _session_over_artery():
    s = Session(default_human_phantom(), DeviceConfig(), seed=1)
    s.handle_message({"type": "StartScan",
                      "waypoints": [[20.0, 50.0], [140.0, 50.0]]})
    marked = False
    while s.proc.phase.value == "Scanning":
        s.tick()
        if not marked and abs(s.sim.state.probe_position[0] - 60.0) <= 0.2:
            s.handle_message({"type": "SaveMark"})
            marked = True
    s.handle_message({"type": "GotoMark", "index": 0})
    for _ in range(400):
        s.tick()
    return s


def _artery_center_pixel(session):
    artery = session.phantom.vessel(session.target_vessel_id)
    cs = vessel_cross_section(artery, image_plane(session.sim.state))
    return plane_to_pixel(cs.center[0], cs.center[1], GEOM)


def test_click_to_center():
    s = _session_over_artery()
    u0, v0 = _artery_center_pixel(s)
    s.handle_message({"type": "ClickCenter", "u": u0, "v": v0})
    for _ in range(400):
        s.tick()
    u1, v1 = _artery_center_pixel(s)
    err1 = abs(u1 - GEOM.width / 2.0)
    # a second click at the observed centroid must command almost nothing
    s.handle_message({"type": "ClickCenter", "u": u1, "v": v1})
    for _ in range(400):
        s.tick()
    u2, _ = _artery_center_pixel(s)
    err2 = abs(u2 - GEOM.width / 2.0)
    ok = err1 <= 1.0 and err2 <= 1.0
    report("click-to-center", ok,
           f"centroid offset after click {err1:.3f} px (<= 1), "
           f"after second click {err2:.3f} px (<= 1)")


# ---------------------------------------------------------------------------
# end-to-end
# ---------------------------------------------------------------------------

def _canonical(phantom, profile, include_tweak=None, seed=1):
    session = Session(phantom, DeviceConfig(), seed=seed)
    script = make_canonical_script(profile, include_tweak=include_tweak)
    result = run_script(session, script)
    return result, session.log


@pytest.fixture(scope="module")
def human_runs():
    return [_canonical(default_human_phantom(), PhantomProfile.HUMAN_PHANTOM)
            for _ in range(5)]


def test_end_to_end_seldinger(human_runs):
    hashes = {log.overall_hash() for _, log in human_runs}
    human_ok = all(r.outcome is not None and r.outcome.success
                   for r, _ in human_runs) and len(hashes) == 1

    porcine = default_porcine_phantom()
    plain, _ = _canonical(porcine, PhantomProfile.PORCINE_IN_VIVO,
                          include_tweak=False)
    tweaked, _ = _canonical(porcine, PhantomProfile.PORCINE_IN_VIVO,
                            include_tweak=True)
    porcine_ok = (plain.outcome is not None and not plain.outcome.success
                  and plain.outcome.failure_mode is FailureMode.WALL_CATCH
                  and tweaked.outcome is not None and tweaked.outcome.success)
    ok = human_ok and porcine_ok
    report("end-to-end scripted run", ok,
           f"human success x5 with {len(hashes)} distinct log hash(es) (= 1); "
           f"porcine no-tweak -> "
           f"{plain.outcome.failure_mode.value if plain.outcome.failure_mode else 'success'}"
           f" (WallCatch), with tweak -> "
           f"{'success' if tweaked.outcome.success else 'failure'}")


# ---------------------------------------------------------------------------
# guidewire oracle
# ---------------------------------------------------------------------------

def test_guidewire_oracle_equivalence():
    centerline = np.array([[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]])
    radius = 3.5
    rng = np.random.default_rng(2024)
    disagreements = 0
    for _ in range(500):
        x = rng.uniform(20.0, 80.0)
        y = rng.uniform(-2.0 * radius, 2.0 * radius)
        angle = rng.uniform(math.radians(20.0), math.radians(60.0))
        length = rng.uniform(5.0, 25.0)
        origin = np.array([x, y, rng.uniform(6.0, 12.0)])
        d = np.array([math.cos(angle), 0.0, -math.sin(angle)])
        tip = origin + length * d
        entered = bool(rng.integers(0, 2))
        back_wall = bool(rng.integers(0, 2)) and not entered
        a = guidewire_attempt(tip, centerline, radius, origin, d, angle,
                              entered, back_wall)
        b = brute_force_guidewire_oracle(tip, centerline, radius, origin, d,
                                         angle, entered, back_wall,
                                         step=0.01)
        if (a.success, a.failure_mode) != (b.success, b.failure_mode):
            disagreements += 1
    report("guidewire oracle equivalence", disagreements == 0,
           f"{disagreements} disagreements over 500 placements vs 0.01 mm "
           f"marching oracle (= 0)")


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_fidelity(human_runs):
    _, log = human_runs[0]
    round_tripped = SessionLog.loads(log.dumps())
    result = replay(round_tripped, default_human_phantom(), DeviceConfig())
    report("replay fidelity", result.matched,
           f"{result.snapshots_checked} snapshot hashes verified "
           f"bitwise-identical" if result.matched else result.detail)
