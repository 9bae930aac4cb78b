"""Accuracy order in eps of the Minnaert far-field asymptotics against the sphere series.

The backscattered far field is compared at omega^2 = (1 +/- offset) omega_M^2 for a
sequence of bubble sizes; consecutive error ratios near 2 indicate first order.
"""
import argparse
import math

import numpy as np

from bubbleimg.forward import farfield_regime1, minnaert_frequency
from bubbleimg.media import BubbleSpec
from bubbleimg.oracle import SphereScatterer


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", type=float, nargs="+", default=[0.08, 0.04, 0.02, 0.01, 0.005])
    p.add_argument("--offset", type=float, default=0.5, help="|omega^2 - omega_M^2| / omega_M^2")
    p.add_argument("--rho0", type=float, default=1000.0)
    p.add_argument("--k0", type=float, default=2e9)
    p.add_argument("--rho-bar", type=float, default=2000.0)
    p.add_argument("--k-bar", type=float, default=1e5)
    args = p.parse_args()
    th = np.array([0.0, 0.0, 1.0])
    for side in (+1, -1):
        errs = []
        for eps in args.eps:
            b = BubbleSpec(eps=eps, rho_bar=args.rho_bar, k_bar=args.k_bar)
            res = minnaert_frequency(b, args.rho0, 8 * math.pi / 3)
            om = math.sqrt(1 + side * args.offset) * res.omega_res
            exact = SphereScatterer.from_bubble(b, args.rho0, args.k0).farfield(om, th, -th)
            asym = farfield_regime1(0.0, 1.0, 1.0, om, b, res, 4 * math.pi / 3, args.rho0)
            errs.append(abs(asym - exact) / abs(exact))
        print("above resonance" if side > 0 else "below resonance")
        for i, (eps, e) in enumerate(zip(args.eps, errs)):
            ratio = f"{errs[i - 1] / e:6.2f}" if i else ""
            print(f"  eps={eps:<7g} rel.err={e:.3e} {ratio}")


if __name__ == "__main__":
    main()
