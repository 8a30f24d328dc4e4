"""Command line entry points: serve, calibrate, run-script, replay."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import calibration
from .logio import SessionLog
from .mechanism import DeviceConfig, load_device_config
from .phantom import (PhantomModel, PhantomProfile, default_phantom,
                      load_phantom)
from .scripting import load_script, replay, run_script
from .session import Session


def _load_phantom_arg(arg: Optional[str]) -> PhantomModel:
    if arg is None:
        return default_phantom(PhantomProfile.HUMAN_PHANTOM)
    if arg in PhantomProfile._value2member_map_:
        return default_phantom(arg)
    return load_phantom(arg)


def _load_config_arg(arg: Optional[str]) -> DeviceConfig:
    return DeviceConfig() if arg is None else load_device_config(arg)


def _cmd_serve(args) -> int:
    from .server import serve
    serve(_load_phantom_arg(args.phantom), _load_config_arg(args.config),
          seed=args.seed, host=args.host, port=args.port, log_path=args.log)
    return 0


def _cmd_calibrate(args) -> int:
    samples = []
    with open(args.sweep) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(calibration.SweepSample(
                l_act=rec["l_act"], theta_act=rec["theta_act"],
                u=rec["u"], v=rec["v"], weight=rec.get("weight", 1.0)))
    params, report = calibration.fit(samples, known_x_scale=args.x_scale,
                                     huber=args.huber)
    out = {"p_l": params.p_l, "l_off": params.l_off,
           "p_theta": params.p_theta, "theta_off": params.theta_off,
           "x_scale": params.x_scale, "y_scale": params.y_scale,
           "x_off": params.x_off, "y_off": params.y_off}
    text = json.dumps(out, indent=2)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)
    print(f"rms {report.rms_px:.3f} px over {len(samples)} samples "
          f"({report.iterations} iterations, "
          f"{'converged' if report.converged else 'not converged'})",
          file=sys.stderr)
    return 0


def _cmd_run_script(args) -> int:
    phantom = _load_phantom_arg(args.phantom)
    config = _load_config_arg(args.config)
    if args.script in PhantomProfile._value2member_map_:
        from .scripting import make_canonical_script
        script = make_canonical_script(PhantomProfile(args.script))
    else:
        script = load_script(args.script)
    if args.frames:
        import os
        os.makedirs(args.frames, exist_ok=True)
    session = Session(phantom, config, seed=args.seed,
                      frames_dir=args.frames or None)
    result = run_script(session, script)
    if args.log:
        session.log.save(args.log)
    for rej in result.rejections:
        print(f"rejected: {rej['message'].get('type')}: {rej['reason']}",
              file=sys.stderr)
    if result.outcome is None:
        print(f"no outcome after {result.ticks} ticks")
        return 1
    o = result.outcome
    print(f"outcome: {'success' if o.success else 'failure'}"
          f"{'' if o.success else ' (' + o.failure_mode.value + ')'}"
          f" tip_offset_fraction={o.tip_offset_fraction:.3f}"
          f" insertion_angle={o.insertion_angle:.3f}"
          f" ticks={result.ticks}")
    return 0 if o.success else 1


def _cmd_replay(args) -> int:
    log = SessionLog.load(args.log)
    phantom = _load_phantom_arg(args.phantom)
    config = _load_config_arg(args.config)
    result = replay(log, phantom, config)
    if result.matched:
        print(f"replay matched: {result.snapshots_checked} snapshots verified")
        return 0
    print(f"replay diverged: {result.detail}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vascusim",
        description="Deterministic femoral access simulator and "
                    "teleoperation server")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", help="run the WebSocket teleoperation server")
    s.add_argument("--phantom", help="phantom JSON file or profile name")
    s.add_argument("--config", help="device config JSON file")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8765)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log", help="write the session log here on disconnect")
    s.set_defaults(func=_cmd_serve)

    c = sub.add_parser("calibrate",
                       help="fit kinematic parameters from a sweep log")
    c.add_argument("--sweep", required=True,
                   help="JSONL of {l_act, theta_act, u, v} records")
    c.add_argument("--x-scale", type=float, required=True,
                   help="known lateral pixel scale (px/mm) pinning the gauge")
    c.add_argument("--out", help="write fitted parameters JSON here")
    c.add_argument("--huber", action="store_true",
                   help="downweight outlier samples")
    c.set_defaults(func=_cmd_calibrate)

    r = sub.add_parser("run-script", help="run a scripted procedure headless")
    r.add_argument("script",
                   help="script JSON file, or a profile name for the "
                        "canonical procedure")
    r.add_argument("--phantom", help="phantom JSON file or profile name")
    r.add_argument("--config", help="device config JSON file")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--log", help="write the session log here")
    r.add_argument("--frames",
                   help="directory for sidecar PGM frames (2 Hz)")
    r.set_defaults(func=_cmd_run_script)

    rp = sub.add_parser("replay",
                        help="re-run a session log and verify state hashes")
    rp.add_argument("log", help="session log (JSONL)")
    rp.add_argument("--phantom", help="phantom JSON file or profile name")
    rp.add_argument("--config", help="device config JSON file")
    rp.set_defaults(func=_cmd_replay)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
