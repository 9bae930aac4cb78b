"""Convergence of the largest Newtonian eigenvalue of the unit ball under voxel refinement.

Prints the raw eigenvalue, its error against 4/pi^2 and the first- and second-order
Richardson extrapolations of consecutive pairs.
"""
import argparse
import math
import time

from bubbleimg.geometry import load_shape, voxelize
from bubbleimg.spectrum import assemble_newtonian, newtonian_eigens, richardson


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--levels", type=int, nargs="+", default=[4, 8, 16], help="voxels per unit length")
    p.add_argument("--shape", default="sphere(4)")
    args = p.parse_args()
    exact = 4 / math.pi ** 2
    mesh = load_shape(args.shape)
    prev = None
    print(f"{'1/h':>5} {'voxels':>7} {'lambda':>12} {'rel.err':>10} {'rich(1)':>10} {'rich(2)':>10} {'s':>6}")
    for lev in args.levels:
        t0 = time.perf_counter()
        vox = voxelize(mesh, 1 / lev)
        lam = newtonian_eigens(assemble_newtonian(vox), 1)[0].lam
        line = f"{lev:5d} {vox.n:7d} {lam:12.8f} {lam / exact - 1:10.2e}"
        if prev is not None:
            line += f" {richardson(prev, lam, 1) / exact - 1:10.2e} {richardson(prev, lam, 2) / exact - 1:10.2e}"
        else:
            line += f" {'':>10} {'':>10}"
        print(line + f" {time.perf_counter() - t0:6.1f}")
        prev = lam


if __name__ == "__main__":
    main()
