"""Render one synthetic B-mode frame and save it as a PGM.

Places the probe over the femoral artery of the chosen phantom profile,
longitudinal view, with the needle inserted partway, and writes the frame
plus a few stats to stdout.
"""

import argparse
import math

import numpy as np

from vascusim.imaging import NeedleGeometry, frame_to_pgm, render
from vascusim.mechanism import PIVOT_LATERAL_MM
from vascusim.phantom import ImagePlane, default_phantom, surface_height


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", default="HumanPhantom",
                    choices=["HumanPhantom", "PorcineInVivo"])
    ap.add_argument("--out", default="frame.pgm")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    phantom = default_phantom(args.profile)
    x, y = 60.0, 55.0
    z = surface_height(phantom, x, y) - 2.0   # pressed 2 mm into the skin
    plane = ImagePlane(origin=np.array([x, y, z]),
                       e_lat=np.array([1.0, 0.0, 0.0]),       # longitudinal
                       e_down=np.array([0.0, 0.0, -1.0]))

    # needle at 40 degrees, tip 18 mm deep
    theta = math.radians(40.0)
    tip = (PIVOT_LATERAL_MM + 18.0 / math.tan(theta), 18.0)
    needle = NeedleGeometry(pivot=(PIVOT_LATERAL_MM, 0.0), tip=tip)

    frame = render(phantom, plane, needle, axial_force=4.0, seed=args.seed)
    with open(args.out, "wb") as f:
        f.write(frame_to_pgm(frame))
    print(f"wrote {args.out}: {frame.width}x{frame.height}, "
          f"coupling {frame.coupling:.2f}, "
          f"mean intensity {frame.intensities.mean():.3f}")


if __name__ == "__main__":
    main()
