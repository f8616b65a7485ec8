"""Crack-opening experiment: where does the e33 strain of the estimated field peak?

Opens the preset crack by two voxels, estimates the field, and prints the
e33 profile argmax for each stopping level and field prolongation.

    python3 scripts/crack_localisation.py --preset crack64 --l-end 0 3
"""

import argparse

import numpy as np

from morphflow.driver import PROLONGATIONS, MorphFlowConfig, run
from morphflow.metrics import strain
from morphflow.synth import PRESETS, CrackOpen, deform, make_phantom


def e33_profile(u):
    n = u.lattice.extents[0]
    k = n // 8
    prof = strain(u).e33[k:n - k, k:n - k, :].mean(axis=(0, 1))
    z = u.lattice.origin[2] + u.lattice.spacing * np.arange(u.lattice.extents[2])
    return z, prof


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="crack32", choices=[k for k in PRESETS if "crack" in k])
    ap.add_argument("--l-start", type=int, default=6)
    ap.add_argument("--l-end", type=int, nargs="+", default=[0])
    ap.add_argument("--prolongation", nargs="+", default=["midrange"], choices=PROLONGATIONS)
    ap.add_argument("--opening", type=float, default=2.0)
    args = ap.parse_args()

    spec = PRESETS[args.preset]
    fixed = make_phantom(spec)
    c = spec.crack
    truth = CrackOpen(axis=c.axis, position=c.position + c.opening / 2.0 - 0.5, opening=args.opening)
    moving, _ = deform(fixed, truth)
    print(f"crack plane at z = {truth.position}")
    for how in args.prolongation:
        for l_end in args.l_end:
            u = run(fixed, moving, MorphFlowConfig(l_start=args.l_start, l_end=l_end, prolongation=how))
            z, prof = e33_profile(u)
            i = int(np.argmax(prof))
            print(f"{how:8s} l_end {l_end}: argmax z = {z[i]:g} (peak {prof[i]:.3f}), "
                  f"mean w {u.w.mean():+.3f}")


if __name__ == "__main__":
    main()
