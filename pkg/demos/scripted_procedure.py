"""Run the full scripted access procedure headlessly and narrate it.

Drives the canonical 8-step script (scan, mark, center, rotate to the
longitudinal view, set the angle, insert, optionally tweak, wire, retract)
against a fresh session, printing each emitted event and the final outcome.
The porcine profile demonstrates the vessel-rolling failure: run it with
and without --tweak to see WallCatch flip to success.
"""

import argparse

from vascusim.mechanism import DeviceConfig
from vascusim.phantom import PhantomProfile, default_phantom
from vascusim.scripting import make_canonical_script, run_script
from vascusim.session import Session


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", default="HumanPhantom",
                    choices=["HumanPhantom", "PorcineInVivo"])
    ap.add_argument("--tweak", action="store_true", default=None,
                    help="include the depth-tweak click (porcine default)")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    profile = PhantomProfile(args.profile)
    session = Session(default_phantom(profile), DeviceConfig(),
                      seed=args.seed)
    script = make_canonical_script(profile, include_tweak=args.tweak)
    result = run_script(session, script)

    for ev in session.proc.events:
        kind = ev.kind.value
        if kind in ("SkinPuncture", "VesselWallContact", "LumenEntry",
                    "BackWallPuncture", "NeedleRetracted", "ScanComplete"):
            print(f"t={ev.tick / 100.0:7.2f}s  {kind} {ev.detail}")

    o = result.outcome
    print(f"\nfinished in {result.ticks / 100.0:.1f} s simulated "
          f"({result.ticks} ticks), {len(result.rejections)} rejections")
    if o is None:
        print("no outcome recorded")
    elif o.success:
        print(f"SUCCESS: tip offset {o.tip_offset_fraction:.2f} of radius, "
              f"insertion angle {o.insertion_angle:.3f} rad")
    else:
        print(f"FAILURE ({o.failure_mode.value}): tip offset "
              f"{o.tip_offset_fraction:.2f} of radius, angle "
              f"{o.insertion_angle:.3f} rad")
    print(f"trajectory hash {session.log.overall_hash()}")


if __name__ == "__main__":
    main()
