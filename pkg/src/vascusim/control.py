"""The three teleoperation controllers.

* Hybrid force-position scanning: position control along the surface path,
  admittance (PI on force error) in the vertical probe axis.
* Image-space click-to-center: lateral probe translation that brings the
  clicked column to the frame center.
* Needle target / tweak: image-space inverse kinematics plus the
  click-along-the-axis depth correction for kinematic estimate error.

All controllers are pure functions of (state, input, gains): replaying the
same inputs reproduces the same outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import phantom as ph
from .imaging import FrameGeometry, pixel_to_plane
from .mechanism import (ActuatorLimits, CalibrationParams, MechanismState,
                        WorkspaceError, needle_fk, needle_ik)
from .phantom import PhantomModel

MAX_TWEAK_MM = 20.0
INTEGRAL_CLAMP_MM_S = 10.0   # clamp on the integral term's velocity share
MAX_NUDGE_RAD = math.radians(15.0)


class ScanPlanError(ValueError):
    pass


class TweakError(ValueError):
    pass


class LockoutError(ValueError):
    """Angle change requested while the needle is inserted."""


@dataclass(frozen=True)
class ScanPlan:
    waypoints: tuple[tuple[float, float], ...]   # (x, y) mm on the surface
    f_ref: float = 4.0
    lateral_speed: float = 8.0                   # mm/s

    def __post_init__(self):
        object.__setattr__(self, "waypoints",
                           tuple((float(x), float(y))
                                 for x, y in self.waypoints))
        if len(self.waypoints) < 2:
            raise ScanPlanError("scan plan needs at least 2 waypoints")
        if self.f_ref <= 0 or self.lateral_speed <= 0:
            raise ScanPlanError("f_ref and lateral_speed must be positive")

    def validate_domain(self, phantom: PhantomModel) -> None:
        for x, y in self.waypoints:
            ph.surface_height(phantom, x, y)   # raises DomainError

    def point_at(self, progress: float) -> tuple[float, float]:
        """Point at ``progress`` mm of path length along the waypoints."""
        pts = np.asarray(self.waypoints)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        p = float(np.clip(progress, 0.0, s[-1]))
        x = float(np.interp(p, s, pts[:, 0]))
        y = float(np.interp(p, s, pts[:, 1]))
        return (x, y)

    @property
    def length(self) -> float:
        pts = np.asarray(self.waypoints)
        return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


@dataclass(frozen=True)
class ControllerGains:
    k_p: float = 3.0               # mm/(N*s)
    k_i: float = 6.0               # mm/(N*s^2)
    settle_tolerance: float = 0.5  # N
    settle_window: float = 1.0     # s

    def __post_init__(self):
        if self.k_p <= 0 or self.k_i < 0:
            raise ValueError("k_p must be > 0 and k_i >= 0")


@dataclass(frozen=True)
class ScanState:
    """Controller memory carried across ticks."""
    progress: float = 0.0          # mm along the path
    integral: float = 0.0          # N*s of accumulated force error
    descending: bool = True        # still establishing contact


@dataclass(frozen=True)
class ProbeCommand:
    velocity: tuple[float, float, float]
    done: bool = False


def scan_step(state: MechanismState, plan: ScanPlan, gains: ControllerGains,
              scan: ScanState, dt: float) -> tuple[ProbeCommand, ScanState]:
    """One tick of hybrid force-position scanning.

    Lateral motion follows the waypoint polyline at ``lateral_speed``;
    vertical velocity is PI admittance on the force error, sign chosen so a
    force deficit always drives the probe down.
    """
    err = plan.f_ref - state.axial_force
    integral = scan.integral + err * dt
    # clamp so the integral share of velocity stays within +-10 mm/s
    if gains.k_i > 0:
        integral = float(np.clip(integral, -INTEGRAL_CLAMP_MM_S / gains.k_i,
                                 INTEGRAL_CLAMP_MM_S / gains.k_i))
    vz_down = gains.k_p * err + gains.k_i * integral

    descending = scan.descending and state.axial_force < plan.f_ref * 0.9
    progress = scan.progress
    if not descending:
        progress = min(progress + plan.lateral_speed * dt, plan.length)
    tx, ty = plan.point_at(progress)
    vx = (tx - state.probe_position[0]) / dt
    vy = (ty - state.probe_position[1]) / dt
    lat_speed = math.hypot(vx, vy)
    if lat_speed > plan.lateral_speed * 2.0:
        scale = plan.lateral_speed * 2.0 / lat_speed
        vx *= scale
        vy *= scale
    done = progress >= plan.length and not descending
    return (ProbeCommand(velocity=(vx, vy, -vz_down), done=done),
            ScanState(progress=progress, integral=integral,
                      descending=descending))


def vertical_admittance(state: MechanismState, f_ref: float,
                        gains: ControllerGains, integral: float, dt: float
                        ) -> tuple[float, float]:
    """Vertical-only force hold; returns (vz_world, new_integral)."""
    err = f_ref - state.axial_force
    integral += err * dt
    if gains.k_i > 0:
        integral = float(np.clip(integral, -INTEGRAL_CLAMP_MM_S / gains.k_i,
                                 INTEGRAL_CLAMP_MM_S / gains.k_i))
    vz_down = gains.k_p * err + gains.k_i * integral
    return -vz_down, integral


def click_to_center(u: float, v: float, geom: FrameGeometry
                    ) -> float:
    """Lateral probe translation (mm along the probe lateral axis) that puts
    the clicked column at the frame center.  Depth is never commanded."""
    lateral, _ = pixel_to_plane(u, v, geom)
    return lateral


def rotate_nudge(direction: str, increment: float) -> float:
    """Signed yaw increment (rad); ``cw`` is negative yaw."""
    if not 0.0 < increment <= MAX_NUDGE_RAD:
        raise ValueError(f"increment must be in (0, 15] degrees, got "
                         f"{math.degrees(increment):.1f}")
    if direction == "cw":
        return -increment
    if direction == "ccw":
        return increment
    raise ValueError(f"unknown nudge direction {direction!r}")


@dataclass(frozen=True)
class InsertionPlan:
    """Two-phase angle-then-depth insertion command."""
    theta_target: float
    l_target: float
    rotate_first: bool           # phase 1 needed (angle change)

    @property
    def phases(self) -> tuple[tuple[str, float], ...]:
        if self.rotate_first:
            return (("theta", self.theta_target), ("l", self.l_target))
        return (("l", self.l_target),)


def needle_target(u: float, v: float, params: CalibrationParams,
                  limits: ActuatorLimits, state: MechanismState,
                  inserted_depth: float,
                  angle_tol_act: float = 0.5) -> InsertionPlan:
    """Stage the two-phase insertion toward a clicked pixel.

    Raises WorkspaceError outside the workspace and LockoutError when an
    angle change is requested while the needle sits deeper than the lockout
    depth.
    """
    from .mechanism import ANGLE_LOCKOUT_DEPTH_MM
    l_act, theta_act = needle_ik(params, u, v, limits)
    angle_change = abs(theta_act - state.theta_act) > angle_tol_act
    if angle_change and inserted_depth > ANGLE_LOCKOUT_DEPTH_MM:
        raise LockoutError(
            "angle change requested while the needle is inserted "
            f"{inserted_depth:.1f} mm; retract first")
    return InsertionPlan(theta_target=theta_act, l_target=l_act,
                         rotate_first=angle_change)


def needle_tweak(u: float, v: float, params: CalibrationParams,
                 limits: ActuatorLimits, state: MechanismState,
                 geom: FrameGeometry) -> float:
    """Depth adjustment from a click along the needle axis.

    Returns the new linear actuator target.  The click is projected onto
    the calibrated needle direction; the perpendicular component is
    discarded.  Implausible corrections (over 20 mm) are rejected.
    """
    tip_u, tip_v = needle_fk(params, state.l_act, state.theta_act)
    click_mm = np.array(pixel_to_plane(u, v, geom))
    tip_mm = np.array(((tip_u - geom.width / 2.0) * geom.sx, tip_v * geom.sy))
    phi = params.p_theta * state.theta_act + params.theta_off
    axis = np.array([math.cos(phi), math.sin(phi)])
    delta_mm = float((click_mm - tip_mm) @ axis)
    if abs(delta_mm) > MAX_TWEAK_MM:
        raise TweakError(f"tweak of {delta_mm:.1f} mm exceeds the "
                         f"{MAX_TWEAK_MM:.0f} mm safety bound")
    l_target = state.l_act + delta_mm / params.p_l
    return float(np.clip(l_target, limits.l_min, limits.l_max))
