"""Probe carrier + 2-DOF needle insertion mechanism.

The probe carrier is an ideal Cartesian stage with a yaw axis; the needle
mechanism is a linear actuator on a curved guide rotating about a fixed
pivot ("point of needle insertion") that sits 12 mm lateral of the probe
face center, on the probe face plane.  The needle guide keeps the needle
inside the ultrasound image plane.

Two parameter sets exist: the *true* actuator-to-length/angle affine maps
drive the physics, while the *calibrated* pixel-space parameters are what
controllers and the UI see.  A configurable mismatch between them forces
use of the tweak controller.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import phantom as ph
from .geom import clip_polygon_rect, point_to_polyline, ray_tube_entry
from .imaging import FrameGeometry
from .phantom import ImagePlane, NeedleContact, PhantomModel

DEVICE_FORMAT = 1
DT = 0.01                       # s, fixed physics tick
PIVOT_LATERAL_MM = -12.0        # pivot offset from the probe face centerline
ANGLE_LOCKOUT_DEPTH_MM = 2.0    # no angle changes past this tissue depth


class WorkspaceError(ValueError):
    """Target outside the reachable workspace."""

    def __init__(self, message: str, limit: str):
        super().__init__(message)
        self.limit = limit      # "linear" or "angular"


@dataclass(frozen=True)
class CalibrationParams:
    """The 8 parameters mapping actuator feedback to needle-tip pixels."""
    p_l: float
    l_off: float
    p_theta: float
    theta_off: float
    x_scale: float
    y_scale: float
    x_off: float
    y_off: float

    def __post_init__(self):
        if self.x_scale <= 0 or self.y_scale <= 0:
            raise ValueError("pixel scales must be positive")
        if self.p_l == 0 or self.p_theta == 0:
            raise ValueError("p_l and p_theta must be nonzero")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_l, self.l_off, self.p_theta, self.theta_off,
                         self.x_scale, self.y_scale, self.x_off, self.y_off])


IDENTITY_PARAMS = CalibrationParams(1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class ActuatorLimits:
    l_min: float = 0.0
    l_max: float = 1000.0       # actuator units (0..100 mm with p_l = 0.1)
    theta_min: float = 15.0
    theta_max: float = 60.0     # actuator units (degrees with p_theta = 1 deg)


@dataclass(frozen=True)
class TrueKinematics:
    """Actuator feedback to physical insertion length (mm) and angle (rad)."""
    p_l: float = 0.1
    l_off: float = 0.0
    p_theta: float = math.radians(1.0)
    theta_off: float = 0.0

    def length(self, l_act: float) -> float:
        return self.p_l * l_act + self.l_off

    def angle(self, theta_act: float) -> float:
        return self.p_theta * theta_act + self.theta_off


def needle_fk(params: CalibrationParams, l_act: float, theta_act: float
              ) -> tuple[float, float]:
    """Needle-tip pixel from actuator feedback; exact, no clamping."""
    length = params.p_l * l_act + params.l_off
    angle = params.p_theta * theta_act + params.theta_off
    x = length * math.cos(angle) * params.x_scale - params.x_off
    y = length * math.sin(angle) * params.y_scale - params.y_off
    return (x, y)


def needle_ik(params: CalibrationParams, u: float, v: float,
              limits: Optional[ActuatorLimits] = None) -> tuple[float, float]:
    """Actuator targets whose FK reproduces pixel (u, v).

    With ``limits`` given, out-of-workspace targets raise WorkspaceError
    naming the violated degree of freedom.
    """
    X = (u + params.x_off) / params.x_scale
    Y = (v + params.y_off) / params.y_scale
    r = math.hypot(X, Y)
    a = math.atan2(Y, X)
    theta_act = (a - params.theta_off) / params.p_theta
    l_act = (r - params.l_off) / params.p_l
    if limits is not None:
        if not limits.l_min - 1e-9 <= l_act <= limits.l_max + 1e-9:
            raise WorkspaceError(
                f"pixel ({u:.1f}, {v:.1f}) needs linear actuator {l_act:.1f}, "
                f"outside [{limits.l_min}, {limits.l_max}]", "linear")
        if not limits.theta_min - 1e-9 <= theta_act <= limits.theta_max + 1e-9:
            raise WorkspaceError(
                f"pixel ({u:.1f}, {v:.1f}) needs angular actuator "
                f"{theta_act:.1f}, outside [{limits.theta_min}, "
                f"{limits.theta_max}]", "angular")
    return (l_act, theta_act)


def workspace_mask(params: CalibrationParams, limits: ActuatorLimits,
                   geom: FrameGeometry, arc_samples: int = 64,
                   edge_samples: int = 16) -> np.ndarray:
    """Image of the actuator-limit rectangle under FK, clipped to the frame.

    Returned as an (N, 2) polygon with N <= 256 vertices in pixel coords.
    """
    th = np.linspace(limits.theta_min, limits.theta_max, arc_samples)
    ll = np.linspace(limits.l_min, limits.l_max, edge_samples)
    boundary = (
        [(limits.l_min, t) for t in th]
        + [(l, limits.theta_max) for l in ll[1:]]
        + [(limits.l_max, t) for t in th[::-1][1:]]
        + [(l, limits.theta_min) for l in ll[::-1][1:-1]]
    )
    poly = np.array([needle_fk(params, l, t) for l, t in boundary])
    return clip_polygon_rect(poly, 0.0, 0.0, geom.width - 1.0, geom.height - 1.0)


def pixel_in_workspace(params: CalibrationParams, limits: ActuatorLimits,
                       u: float, v: float) -> bool:
    try:
        needle_ik(params, u, v, limits)
    except WorkspaceError:
        return False
    return True


# ---------------------------------------------------------------------------
# Simulation state, commands, events
# ---------------------------------------------------------------------------

class EventKind(str, Enum):
    SKIN_PUNCTURE = "SkinPuncture"
    VESSEL_WALL_CONTACT = "VesselWallContact"
    LUMEN_ENTRY = "LumenEntry"
    BACK_WALL_PUNCTURE = "BackWallPuncture"
    NEEDLE_RETRACTED = "NeedleRetracted"
    CLAMPED = "Clamped"
    SCAN_COMPLETE = "ScanComplete"
    SCAN_ABORTED = "ScanAborted"
    INSERTION_SETTLED = "InsertionSettled"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    tick: int
    detail: str = ""


@dataclass(frozen=True)
class MechanismState:
    probe_position: np.ndarray      # (3,) world mm, probe face center
    probe_yaw: float                # rad about vertical; 0 => lateral = +x
    l_act: float
    theta_act: float
    axial_force: float              # N, along the probe axis
    tick: int

    def __post_init__(self):
        object.__setattr__(self, "probe_position",
                           np.asarray(self.probe_position, float))


@dataclass(frozen=True)
class Command:
    """One tick worth of commands; None leaves the target unchanged."""
    probe_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)  # mm/s world
    yaw_target: Optional[float] = None
    l_target: Optional[float] = None
    theta_target: Optional[float] = None


@dataclass(frozen=True)
class Rates:
    linear: float = 200.0       # actuator units/s (20 mm/s with p_l = 0.1)
    angular: float = 30.0       # actuator units/s (30 deg/s)
    probe: float = 50.0         # mm/s
    yaw: float = math.radians(30.0)  # rad/s


@dataclass(frozen=True)
class DeviceConfig:
    limits: ActuatorLimits = ActuatorLimits()
    rates: Rates = Rates()
    true_kin: TrueKinematics = TrueKinematics()
    calibrated: CalibrationParams = CalibrationParams(
        p_l=0.1, l_off=0.0, p_theta=math.radians(1.0), theta_off=0.0,
        x_scale=16.0, y_scale=6.0, x_off=-(PIVOT_LATERAL_MM * 16.0 + 320.0),
        y_off=0.0)
    frame: FrameGeometry = FrameGeometry()
    initial_position: tuple[float, float, float] = (20.0, 50.0, 18.0)
    initial_yaw: float = math.pi / 2.0
    f_ref: float = 4.0          # N, scanning contact force setpoint
    k_p: float = 3.0            # mm/(N*s)
    k_i: float = 6.0            # mm/(N*s^2)
    settle_tolerance: float = 0.5   # N
    settle_window: float = 1.0      # s


def device_config_to_dict(cfg: DeviceConfig) -> dict:
    return {
        "format": DEVICE_FORMAT,
        "limits": vars(cfg.limits).copy(),
        "rates": vars(cfg.rates).copy(),
        "true_kin": vars(cfg.true_kin).copy(),
        "calibrated": vars(cfg.calibrated).copy(),
        "frame": {"width": cfg.frame.width, "height": cfg.frame.height,
                  "sx": cfg.frame.sx, "sy": cfg.frame.sy,
                  "f_couple": cfg.frame.f_couple},
        "initial_position": list(cfg.initial_position),
        "initial_yaw": cfg.initial_yaw,
        "f_ref": cfg.f_ref, "k_p": cfg.k_p, "k_i": cfg.k_i,
        "settle_tolerance": cfg.settle_tolerance,
        "settle_window": cfg.settle_window,
    }


def device_config_from_dict(d: dict) -> DeviceConfig:
    if d.get("format") != DEVICE_FORMAT:
        raise ValueError(f"unsupported device config format: {d.get('format')!r}")
    return DeviceConfig(
        limits=ActuatorLimits(**d["limits"]),
        rates=Rates(**d["rates"]),
        true_kin=TrueKinematics(**d["true_kin"]),
        calibrated=CalibrationParams(**d["calibrated"]),
        frame=FrameGeometry(**d["frame"]),
        initial_position=tuple(d["initial_position"]),
        initial_yaw=d["initial_yaw"],
        f_ref=d["f_ref"], k_p=d["k_p"], k_i=d["k_i"],
        settle_tolerance=d["settle_tolerance"],
        settle_window=d["settle_window"],
    )


def save_device_config(cfg: DeviceConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(device_config_to_dict(cfg), f)


def load_device_config(path) -> DeviceConfig:
    with open(path) as f:
        return device_config_from_dict(json.load(f))


def device_config_hash(cfg: DeviceConfig) -> str:
    blob = json.dumps(device_config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def image_plane(state: MechanismState) -> ImagePlane:
    e_lat = np.array([math.cos(state.probe_yaw), math.sin(state.probe_yaw), 0.0])
    return ImagePlane(origin=state.probe_position.copy(), e_lat=e_lat,
                      e_down=np.array([0.0, 0.0, -1.0]))


def _toward(current: float, target: float, max_step: float) -> float:
    return current + np.clip(target - current, -max_step, max_step)


@dataclass
class _VesselContact:
    contacted: bool = False
    punctured: bool = False
    in_lumen: bool = False
    back_wall: bool = False
    frozen_force: float = 0.0


class Simulator:
    """Single-writer 100 Hz stepper over an immutable state snapshot."""

    def __init__(self, phantom: PhantomModel, config: DeviceConfig):
        self.phantom = phantom
        self.config = config
        self.state = MechanismState(
            probe_position=np.array(config.initial_position, float),
            probe_yaw=config.initial_yaw,
            l_act=config.limits.l_min,
            theta_act=config.limits.theta_min,
            axial_force=0.0, tick=0)
        self._yaw_target = config.initial_yaw
        self._l_target = config.limits.l_min
        self._theta_target = config.limits.theta_min
        self._skin_punctured = False
        self._contacts = {v.id: _VesselContact() for v in phantom.vessels}

    # -- kinematic ground truth -------------------------------------------

    def needle_length_mm(self, state: Optional[MechanismState] = None) -> float:
        s = state or self.state
        return self.config.true_kin.length(s.l_act)

    def needle_angle_rad(self, state: Optional[MechanismState] = None) -> float:
        s = state or self.state
        return self.config.true_kin.angle(s.theta_act)

    def pivot_world(self, state: Optional[MechanismState] = None) -> np.ndarray:
        s = state or self.state
        plane = image_plane(s)
        return plane.origin + PIVOT_LATERAL_MM * plane.e_lat

    def needle_direction_world(self, state: Optional[MechanismState] = None
                               ) -> np.ndarray:
        s = state or self.state
        plane = image_plane(s)
        a = self.config.true_kin.angle(s.theta_act)
        return math.cos(a) * plane.e_lat + math.sin(a) * plane.e_down

    def needle_tip_world(self, state: Optional[MechanismState] = None
                         ) -> np.ndarray:
        s = state or self.state
        return self.pivot_world(s) + self.needle_length_mm(s) * \
            self.needle_direction_world(s)

    def needle_tip_plane(self, state: Optional[MechanismState] = None
                         ) -> tuple[float, float]:
        """Ground-truth tip in (lateral, depth) mm of the image plane."""
        s = state or self.state
        a = self.config.true_kin.angle(s.theta_act)
        L = self.config.true_kin.length(s.l_act)
        return (PIVOT_LATERAL_MM + L * math.cos(a), L * math.sin(a))

    def needle_depth_in_tissue(self, state: Optional[MechanismState] = None
                               ) -> float:
        """Tip depth below the local skin surface, <= 0 when outside.

        A retracted needle (under 1 mm of extension) rides inside the probe
        dimple and never counts as being in tissue.
        """
        s = state or self.state
        if self.needle_length_mm(s) < 1.0:
            return -np.inf
        tip = self.needle_tip_world(s)
        try:
            surf = ph.surface_height(self.phantom, tip[0], tip[1])
        except ph.DomainError:
            return -np.inf
        return surf - tip[2]

    def calibrated_tip_pixel(self, state: Optional[MechanismState] = None
                             ) -> tuple[float, float]:
        s = state or self.state
        return needle_fk(self.config.calibrated, s.l_act, s.theta_act)

    # -- vessel interaction -----------------------------------------------

    def _contact_normal(self, direction: np.ndarray, axis: np.ndarray
                        ) -> np.ndarray:
        perp = direction - (direction @ axis) * axis
        n = np.linalg.norm(perp)
        if n < 1e-9:
            return np.array([0.0, 0.0, -1.0])
        return perp / n

    def vessel_contact_force(self, vessel_id: str) -> float:
        """Current quasi-static load the needle applies to the vessel wall."""
        c = self._contacts[vessel_id]
        if c.punctured:
            return self.phantom.vessel(vessel_id).wall_puncture_force
        pen = self._penetration(vessel_id)
        if pen is None or pen <= 0.0:
            return 0.0
        return self.phantom.vessel(vessel_id).roll_stiffness * pen

    def _ray(self) -> tuple[np.ndarray, np.ndarray, float]:
        origin = self.pivot_world()
        direction = self.needle_direction_world()
        return origin, direction, self.needle_length_mm()

    def _penetration(self, vessel_id: str) -> Optional[float]:
        vessel = self.phantom.vessel(vessel_id)
        origin, direction, t_tip = self._ray()
        t_wall = ray_tube_entry(origin, direction, vessel.centerline,
                                vessel.radius)
        if t_wall is None:
            return None
        return t_tip - t_wall

    def displaced_centerline(self, vessel_id: str) -> np.ndarray:
        vessel = self.phantom.vessel(vessel_id)
        force = self.vessel_contact_force(vessel_id)
        if force <= 0.0:
            return vessel.centerline
        origin, direction, t_tip = self._ray()
        # the wall dimples around the tip, not the nominal entry point
        tip = origin + t_tip * direction
        _, closest, s0 = point_to_polyline(tip, vessel.centerline)
        axis = self._local_axis(vessel.centerline, s0)
        normal = self._contact_normal(direction, axis)
        return ph.displaced_vessel(
            vessel, NeedleContact(point=closest, force=force, normal=normal))

    @staticmethod
    def _local_axis(cl: np.ndarray, s0: float) -> np.ndarray:
        from .geom import polyline_arclength
        s = polyline_arclength(cl)
        i = int(np.clip(np.searchsorted(s, s0) - 1, 0, len(cl) - 2))
        axis = cl[i + 1] - cl[i]
        return axis / np.linalg.norm(axis)

    def displaced_centerlines(self) -> dict:
        return {v.id: self.displaced_centerline(v.id)
                for v in self.phantom.vessels}

    def _update_vessel_events(self, events: list[Event], tick: int) -> None:
        for vessel in self.phantom.vessels:
            c = self._contacts[vessel.id]
            pen = self._penetration(vessel.id)
            if pen is None or pen <= 0.0:
                if c.contacted:
                    events.append(Event(EventKind.NEEDLE_RETRACTED, tick,
                                        vessel.id))
                self._contacts[vessel.id] = _VesselContact()
                continue
            if not c.contacted:
                c.contacted = True
                events.append(Event(EventKind.VESSEL_WALL_CONTACT, tick,
                                    vessel.id))
            if not c.punctured:
                force = vessel.roll_stiffness * pen
                if force >= vessel.wall_puncture_force:
                    c.punctured = True
                    c.in_lumen = True
                    events.append(Event(EventKind.LUMEN_ENTRY, tick, vessel.id))
            if c.punctured and not c.back_wall:
                tip = self.needle_tip_world()
                cl = self.displaced_centerline(vessel.id)
                dist, closest, _ = point_to_polyline(tip, cl)
                if dist > vessel.radius:
                    _, direction, _ = self._ray()
                    ahead = (tip - closest) @ direction > 0.0
                    if ahead:
                        c.back_wall = True
                        events.append(Event(EventKind.BACK_WALL_PUNCTURE,
                                            tick, vessel.id))

    def vessel_flags(self, vessel_id: str) -> _VesselContact:
        return self._contacts[vessel_id]

    # -- stepping ----------------------------------------------------------

    def step(self, command: Command) -> tuple[MechanismState, list[Event]]:
        cfg = self.config
        s = self.state
        tick = s.tick + 1
        events: list[Event] = []

        if command.yaw_target is not None:
            self._yaw_target = command.yaw_target
        if command.l_target is not None:
            tgt = command.l_target
            if not cfg.limits.l_min <= tgt <= cfg.limits.l_max:
                tgt = float(np.clip(tgt, cfg.limits.l_min, cfg.limits.l_max))
                events.append(Event(EventKind.CLAMPED, tick,
                                    "linear target clamped"))
            self._l_target = tgt
        if command.theta_target is not None:
            if self.needle_depth_in_tissue(s) > ANGLE_LOCKOUT_DEPTH_MM:
                events.append(Event(EventKind.CLAMPED, tick,
                                    "angle change locked out while inserted"))
            else:
                tgt = command.theta_target
                if not cfg.limits.theta_min <= tgt <= cfg.limits.theta_max:
                    tgt = float(np.clip(tgt, cfg.limits.theta_min,
                                        cfg.limits.theta_max))
                    events.append(Event(EventKind.CLAMPED, tick,
                                        "angular target clamped"))
                self._theta_target = tgt

        vel = np.asarray(command.probe_velocity, float)
        speed = np.linalg.norm(vel)
        if speed > cfg.rates.probe:
            vel = vel * (cfg.rates.probe / speed)
        pos = s.probe_position + vel * DT
        yaw = _toward(s.probe_yaw, self._yaw_target, cfg.rates.yaw * DT)
        l_act = _toward(s.l_act, self._l_target, cfg.rates.linear * DT)
        theta_lock = self.needle_depth_in_tissue(s) > ANGLE_LOCKOUT_DEPTH_MM
        if theta_lock:
            theta_act = s.theta_act
        else:
            theta_act = _toward(s.theta_act, self._theta_target,
                                cfg.rates.angular * DT)

        try:
            surf = ph.surface_height(self.phantom, pos[0], pos[1])
            pen = max(0.0, surf - pos[2])
        except ph.DomainError:
            pen = 0.0
        force = self.phantom.skin_stiffness * pen

        self.state = MechanismState(probe_position=pos, probe_yaw=yaw,
                                    l_act=l_act, theta_act=theta_act,
                                    axial_force=force, tick=tick)

        depth = self.needle_depth_in_tissue()
        if depth > 0.0 and not self._skin_punctured:
            self._skin_punctured = True
            events.append(Event(EventKind.SKIN_PUNCTURE, tick))
        elif depth <= 0.0:
            self._skin_punctured = False

        self._update_vessel_events(events, tick)
        return self.state, events

    def settled(self) -> bool:
        """Actuator and yaw targets reached (within slew quantization)."""
        s = self.state
        return (abs(s.l_act - self._l_target) < 1e-9
                and abs(s.theta_act - self._theta_target) < 1e-9
                and abs(s.probe_yaw - self._yaw_target) < 1e-9)
