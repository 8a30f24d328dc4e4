"""Single-operator teleoperation session core.

One instance owns the mechanism simulator, the procedure state machine and
the controllers, advances them at a fixed 100 Hz tick, and is the only
writer of simulation state.  Commands arrive as protocol messages (JSON
dicts with a ``type`` tag), are validated against the current procedure
phase, and take effect at tick boundaries.  Every message is answered with
a StateUpdate or a Rejection.

The same core backs the WebSocket server, the headless scripted operator,
and replay.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import control, imaging, procedure
from .control import ControllerGains, ScanPlan, ScanState
from .imaging import FrameGeometry, NeedleGeometry, UltrasoundFrame
from .logio import SessionLog, snapshot_hash
from .mechanism import (DT, Command, DeviceConfig, Event, EventKind,
                        Simulator, WorkspaceError, device_config_hash,
                        image_plane, needle_fk, workspace_mask)
from .phantom import PhantomModel, VesselKind, phantom_hash, surface_height
from .procedure import (FailureMode, Outcome, Phase, ProcedureCommand,
                        ProcedureState, TransitionError)

SNAPSHOT_EVERY_TICKS = 10       # 10 Hz state logging
FRAME_EVERY_TICKS = 5           # 20 Hz frame broadcast
RETRACT_CLEARANCE_MM = 10.0
LONGITUDINAL_MIN_ELONGATION = 3.0
DEFAULT_NUDGE_DEG = 2.0


def _rejection(reason: str) -> dict:
    return {"type": "Rejection", "reason": reason}


class Session:
    def __init__(self, phantom: PhantomModel, config: DeviceConfig,
                 seed: int, record: bool = True,
                 frames_dir: Optional[str] = None,
                 frame_every_ticks: int = 50):
        self.phantom = phantom
        self.config = config
        self.seed = seed
        self.sim = Simulator(phantom, config)
        self.proc = ProcedureState()
        self.gains = ControllerGains(
            k_p=config.k_p, k_i=config.k_i,
            settle_tolerance=config.settle_tolerance,
            settle_window=config.settle_window)
        arteries = [v for v in phantom.vessels if v.kind is VesselKind.ARTERY]
        self.target_vessel_id = arteries[0].id if arteries else \
            phantom.vessels[0].id
        self._workspace = workspace_mask(config.calibrated, config.limits,
                                         config.frame)
        # controller memory
        self.scan_plan: Optional[ScanPlan] = None
        self.scan_state = ScanState()
        self.integral = 0.0
        self.hold_vertical = False          # freeze z once aligning begins
        self.xy_target: Optional[np.ndarray] = None
        self.goto_target: Optional[tuple] = None   # (x, y, z, yaw)
        self.retract_up_to: Optional[float] = None
        self._stages: deque = deque()       # pending (kind, target) stages
        self._stage_active: Optional[tuple] = None
        self.force_history: deque = deque(
            maxlen=max(1, int(config.settle_window / DT)))
        self.log = SessionLog(seed=seed, phantom_hash=phantom_hash(phantom),
                              config_hash=device_config_hash(config)) \
            if record else None
        self.frames_dir = frames_dir
        self.frame_every_ticks = frame_every_ticks

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------

    @property
    def tick_count(self) -> int:
        return self.sim.state.tick

    @property
    def sim_time(self) -> float:
        return self.tick_count * DT

    def flash_indicator(self) -> bool:
        return procedure.lumen_entry_monitor(self.proc.events,
                                             self.target_vessel_id)

    def force_settled(self) -> bool:
        h = self.force_history
        return (len(h) == h.maxlen
                and all(abs(f - self.config.f_ref)
                        <= self.config.settle_tolerance for f in h))

    def motion_settled(self) -> bool:
        return (self.sim.settled() and not self._stages
                and self._stage_active is None
                and self.goto_target is None and self.xy_target is None)

    def state_update(self) -> dict:
        s = self.sim.state
        u, v = self.sim.calibrated_tip_pixel()
        out = None
        if self.proc.outcome is not None:
            o = self.proc.outcome
            out = {"success": o.success,
                   "failure_mode": o.failure_mode.value if o.failure_mode
                   else None,
                   "tip_offset_fraction": o.tip_offset_fraction,
                   "insertion_angle": o.insertion_angle}
        return {
            "type": "StateUpdate",
            "tick": s.tick,
            "phase": self.proc.phase.value,
            "probe_pose": {"x": float(s.probe_position[0]),
                           "y": float(s.probe_position[1]),
                           "z": float(s.probe_position[2]),
                           "yaw": float(s.probe_yaw)},
            "needle_estimate_px": {"u": float(u), "v": float(v)},
            "workspace": [[float(a), float(b)] for a, b in self._workspace],
            "flash": self.flash_indicator(),
            "timer_s": self.sim_time,
            "axial_force": float(s.axial_force),
            "outcome": out,
        }

    def render_frame(self) -> UltrasoundFrame:
        from .mechanism import PIVOT_LATERAL_MM
        s = self.sim.state
        lat, dep = self.sim.needle_tip_plane()
        needle = NeedleGeometry(pivot=(PIVOT_LATERAL_MM, 0.0), tip=(lat, dep),
                                inserted=self.sim.needle_length_mm() >= 1.0)
        return imaging.render(
            self.phantom, image_plane(s), needle, s.axial_force, self.seed,
            tick=s.tick, geom=self.config.frame,
            displaced_centerlines=self.sim.displaced_centerlines())

    # ------------------------------------------------------------------
    # message handling
    # ------------------------------------------------------------------

    def handle_message(self, msg: dict) -> dict:
        try:
            reply = self._dispatch(msg)
        except (TransitionError, WorkspaceError, control.TweakError,
                control.LockoutError, control.ScanPlanError,
                ValueError) as exc:
            reply = _rejection(str(exc))
        if self.log is not None and msg.get("type") != "Hello":
            if reply.get("type") == "Rejection":
                self.log.append(self.tick_count, "rejection",
                                {"message": msg, "reason": reply["reason"]})
            else:
                self.log.command(self.tick_count, msg)
        return reply

    def _dispatch(self, msg: dict) -> dict:
        mtype = msg.get("type")
        handler = getattr(self, f"_on_{mtype}", None)
        if mtype is None or handler is None:
            return _rejection(f"unknown message type {mtype!r}")
        reply = handler(msg)
        return reply if reply is not None else self.state_update()

    def _transition(self, cmd: ProcedureCommand, mark=None) -> None:
        self.proc = procedure.transition(self.proc, cmd, mark=mark)

    def _on_Hello(self, msg: dict):
        return None

    def _on_StartScan(self, msg: dict):
        waypoints = msg.get("waypoints") or []
        plan = ScanPlan(waypoints=tuple((p[0], p[1]) for p in waypoints),
                        f_ref=msg.get("f_ref", self.config.f_ref),
                        lateral_speed=msg.get("lateral_speed", 8.0))
        plan.validate_domain(self.phantom)
        self._transition(ProcedureCommand.START_WAYPOINT_SELECTION)
        for _ in waypoints:
            self._transition(ProcedureCommand.ADD_WAYPOINT)
        self._transition(ProcedureCommand.START_SCAN)
        self.scan_plan = plan
        self.scan_state = ScanState()
        return None

    def _on_SaveMark(self, msg: dict):
        s = self.sim.state
        mark = (float(s.probe_position[0]), float(s.probe_position[1]),
                float(s.probe_position[2]), float(s.probe_yaw))
        self._transition(ProcedureCommand.SAVE_MARK, mark=mark)
        return None

    def _on_GotoMark(self, msg: dict):
        index = int(msg.get("index", 0))
        if not 0 <= index < len(self.proc.marks):
            return _rejection(f"no saved mark {index}")
        self._transition(ProcedureCommand.GOTO_MARK)
        self.goto_target = self.proc.marks[index]
        self.scan_plan = None
        return None

    def _on_ClickCenter(self, msg: dict):
        self._require_phase(Phase.CENTERING, "ClickCenter")
        self._transition(ProcedureCommand.CLICK_CENTER)
        delta = control.click_to_center(msg["u"], msg["v"], self.config.frame)
        plane = image_plane(self.sim.state)
        target = self.sim.state.probe_position + delta * plane.e_lat
        self.xy_target = np.array([target[0], target[1]])
        return None

    def _on_RotateNudge(self, msg: dict):
        self._require_phase(Phase.CENTERING, "RotateNudge")
        self._transition(ProcedureCommand.ROTATE_NUDGE)
        inc = math.radians(msg.get("increment_deg", DEFAULT_NUDGE_DEG))
        delta = control.rotate_nudge(msg["direction"], inc)
        self.sim._yaw_target += delta
        return None

    def _on_Nudge(self, msg: dict):
        self._require_phase(Phase.CENTERING, "Nudge")
        self._transition(ProcedureCommand.NUDGE)
        axis = msg.get("axis")
        mm = float(msg.get("mm", 0.0))
        if abs(mm) > 10.0:
            return _rejection("nudge limited to 10 mm")
        plane = image_plane(self.sim.state)
        if axis == "lateral":
            d = plane.e_lat
        elif axis == "normal":
            d = plane.normal
        else:
            return _rejection(f"unknown nudge axis {axis!r}")
        base = self.xy_target if self.xy_target is not None else \
            self.sim.state.probe_position[:2]
        self.xy_target = np.asarray(base, float) + mm * d[:2]
        return None

    def _on_SetAngle(self, msg: dict):
        if self.proc.phase is Phase.CENTERING:
            elong = self._target_elongation()
            if elong < LONGITUDINAL_MIN_ELONGATION:
                return _rejection(
                    "vessel section is not longitudinal enough "
                    f"(elongation {elong:.2f} < "
                    f"{LONGITUDINAL_MIN_ELONGATION}); keep rotating")
        self._transition(ProcedureCommand.SET_ANGLE)
        deg = float(msg.get("deg", 40.0))
        p = self.config.calibrated
        theta_act = (math.radians(deg) - p.theta_off) / p.p_theta
        theta_act = float(np.clip(theta_act, self.config.limits.theta_min,
                                  self.config.limits.theta_max))
        self._stages.append(("theta", theta_act))
        self.hold_vertical = True
        return None

    def _on_NeedleTarget(self, msg: dict):
        if self.proc.phase not in (Phase.NEEDLE_ALIGNING, Phase.TWEAKING):
            raise TransitionError(self.proc.phase,
                                  ProcedureCommand.NEEDLE_TARGET)
        plan = control.needle_target(
            msg["u"], msg["v"], self.config.calibrated, self.config.limits,
            self.sim.state, self.sim.needle_depth_in_tissue())
        self._transition(ProcedureCommand.NEEDLE_TARGET)
        for kind, target in plan.phases:
            self._stages.append((kind, target))
        return None

    def _on_NeedleTweak(self, msg: dict):
        self._require_phase(Phase.TWEAKING, "NeedleTweak")
        l_target = control.needle_tweak(
            msg["u"], msg["v"], self.config.calibrated, self.config.limits,
            self.sim.state, self.config.frame)
        self._transition(ProcedureCommand.NEEDLE_TWEAK)
        self._stages.append(("l", l_target))
        return None

    def _on_InsertGuidewire(self, msg: dict):
        self._transition(ProcedureCommand.INSERT_GUIDEWIRE)
        outcome = self._grade_guidewire()
        self.proc = procedure.ProcedureState(
            phase=self.proc.phase, marks=self.proc.marks,
            events=self.proc.events, outcome=outcome)
        if self.log is not None:
            self.log.outcome(self.tick_count, outcome)
        return None

    def _on_RetractNeedle(self, msg: dict):
        self._transition(ProcedureCommand.RETRACT_NEEDLE)
        self._stages.clear()
        self._stage_active = None
        self._stages.append(("l", self.config.limits.l_min))
        s = self.sim.state
        surf = surface_height(self.phantom, s.probe_position[0],
                              s.probe_position[1])
        self.retract_up_to = surf + RETRACT_CLEARANCE_MM
        self.hold_vertical = True
        return None

    def _on_Abort(self, msg: dict):
        self._transition(ProcedureCommand.ABORT)
        if self.proc.outcome is None:
            outcome = Outcome(False, FailureMode.ABORTED, float("nan"),
                              self.sim.needle_angle_rad())
            self.proc = procedure.ProcedureState(
                phase=self.proc.phase, marks=self.proc.marks,
                events=self.proc.events, outcome=outcome)
        self.scan_plan = None
        self._stages.clear()
        self._stage_active = None
        return None

    def _require_phase(self, phase: Phase, what: str) -> None:
        if self.proc.phase is not phase:
            raise ValueError(f"command {what} not allowed in phase "
                             f"{self.proc.phase.value}")

    # ------------------------------------------------------------------
    # grading
    # ------------------------------------------------------------------

    def _target_elongation(self) -> float:
        from .phantom import section_elongation
        vessel = self.phantom.vessel(self.target_vessel_id)
        return section_elongation(vessel, image_plane(self.sim.state))

    def _grade_guidewire(self) -> Outcome:
        vessel = self.phantom.vessel(self.target_vessel_id)
        flags = self.sim.vessel_flags(self.target_vessel_id)
        centerline = self.sim.displaced_centerline(self.target_vessel_id)
        tip = self.sim.needle_tip_world()
        origin = self.sim.pivot_world()
        direction = self.sim.needle_direction_world()
        return procedure.guidewire_attempt(
            tip=tip, centerline=centerline, radius=vessel.radius,
            origin=origin, needle_direction=direction,
            insertion_angle=self.sim.needle_angle_rad(),
            lumen_entered=flags.punctured,
            back_wall_punctured=flags.back_wall)

    # ------------------------------------------------------------------
    # ticking
    # ------------------------------------------------------------------

    def tick(self) -> list[Event]:
        velocity = np.zeros(3)
        scan_done = False

        if self.scan_plan is not None and self.proc.phase is Phase.SCANNING:
            cmd, self.scan_state = control.scan_step(
                self.sim.state, self.scan_plan, self.gains, self.scan_state,
                DT)
            velocity = np.asarray(cmd.velocity)
            scan_done = cmd.done
        elif self.goto_target is not None:
            velocity = self._goto_velocity()
        else:
            if self.xy_target is not None:
                dx = self.xy_target - self.sim.state.probe_position[:2]
                if np.linalg.norm(dx) < 1e-6:
                    self.xy_target = None
                else:
                    velocity[:2] = dx / DT
            if self.retract_up_to is not None:
                dz = self.retract_up_to - self.sim.state.probe_position[2]
                if dz > 1e-6:
                    velocity[2] = dz / DT
            elif not self.hold_vertical and self.proc.phase in (
                    Phase.CENTERING, Phase.NEEDLE_ALIGNING):
                vz, self.integral = control.vertical_admittance(
                    self.sim.state, self.config.f_ref, self.gains,
                    self.integral, DT)
                velocity[2] = vz

        command = self._stage_command()
        state, events = self.sim.step(Command(
            probe_velocity=tuple(velocity),
            l_target=command.get("l"), theta_target=command.get("theta")))

        if scan_done:
            events.append(Event(EventKind.SCAN_COMPLETE, state.tick))
            self._transition(ProcedureCommand.SCAN_COMPLETE)
            self.scan_plan = None
        if self.goto_target is not None and self._goto_reached():
            self.goto_target = None
        if self.proc.phase is Phase.INSERTING and not self._stages \
                and self._stage_active is None and self.sim.settled():
            events.append(Event(EventKind.INSERTION_SETTLED, state.tick))
            self._transition(ProcedureCommand.INSERTION_SETTLED)
        if self.proc.phase is Phase.RETRACTING \
                and self.sim.needle_length_mm() < 1.0 \
                and (self.retract_up_to is None
                     or state.probe_position[2] >= self.retract_up_to - 1e-6):
            self._transition(ProcedureCommand.RETRACT_COMPLETE)
            self.retract_up_to = None

        self.proc = procedure.record_events(self.proc, events)
        self.force_history.append(state.axial_force)

        if self.log is not None:
            for ev in events:
                self.log.event(ev)
            if state.tick % SNAPSHOT_EVERY_TICKS == 0:
                self.log.snapshot(state.tick,
                                  snapshot_hash(state, self.proc),
                                  state, self.proc)
            if self.frames_dir is not None \
                    and state.tick % self.frame_every_ticks == 0:
                self._dump_frame(state.tick)
        return events

    def _dump_frame(self, tick: int) -> None:
        import os
        path = os.path.join(self.frames_dir, f"frame_{tick:07d}.pgm")
        with open(path, "wb") as f:
            f.write(imaging.frame_to_pgm(self.render_frame()))
        self.log.frame_ref(tick, path)

    def _stage_command(self) -> dict:
        out: dict = {}
        if self._stage_active is not None:
            kind, target = self._stage_active
            current = self.sim.state.l_act if kind == "l" \
                else self.sim.state.theta_act
            if abs(current - target) < 1e-9:
                self._stage_active = None
        if self._stage_active is None and self._stages:
            self._stage_active = self._stages.popleft()
            kind, target = self._stage_active
            out[kind] = target
        return out

    def _goto_velocity(self) -> np.ndarray:
        x, y, z, yaw = self.goto_target
        self.sim._yaw_target = yaw
        d = np.array([x, y, z]) - self.sim.state.probe_position
        return d / DT

    def _goto_reached(self) -> bool:
        x, y, z, yaw = self.goto_target
        d = np.array([x, y, z]) - self.sim.state.probe_position
        return bool(np.linalg.norm(d) < 1e-6
                    and abs(self.sim.state.probe_yaw - yaw) < 1e-9)
