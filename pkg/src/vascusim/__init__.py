"""Deterministic desk-scale simulator and teleoperation stack for robotic
femoral vascular access."""

from .calibration import (FitReport, SweepSample, fit, plan_sweep,
                          residual_report, simulate_sweep)
from .control import (ControllerGains, ScanPlan, click_to_center,
                      needle_target, needle_tweak, rotate_nudge)
from .imaging import FrameGeometry, UltrasoundFrame, frame_to_pgm, render
from .logio import SessionLog, snapshot_hash
from .mechanism import (ActuatorLimits, CalibrationParams, DeviceConfig,
                        Simulator, TrueKinematics, WorkspaceError, needle_fk,
                        needle_ik, workspace_mask)
from .phantom import (PhantomModel, PhantomProfile, Vessel, VesselKind,
                      default_human_phantom, default_phantom,
                      default_porcine_phantom, load_phantom, save_phantom)
from .procedure import (FailureMode, Outcome, Phase, ProcedureState,
                        guidewire_attempt)
from .scripting import make_canonical_script, replay, run_script
from .session import Session

__version__ = "0.1.0"

__all__ = [
    "ActuatorLimits", "CalibrationParams", "ControllerGains", "DeviceConfig",
    "FailureMode", "FitReport", "FrameGeometry", "Outcome", "Phase",
    "PhantomModel", "PhantomProfile", "ProcedureState", "ScanPlan",
    "Session", "SessionLog", "Simulator", "SweepSample", "TrueKinematics",
    "UltrasoundFrame", "Vessel", "VesselKind", "WorkspaceError",
    "click_to_center", "default_human_phantom", "default_phantom",
    "default_porcine_phantom", "fit", "frame_to_pgm", "guidewire_attempt",
    "load_phantom", "make_canonical_script", "needle_fk", "needle_ik",
    "needle_target", "needle_tweak", "plan_sweep", "render", "replay",
    "residual_report", "rotate_nudge", "run_script", "save_phantom",
    "simulate_sweep", "snapshot_hash", "workspace_mask",
]
