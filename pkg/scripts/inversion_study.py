"""Heterogeneous end-to-end inversion: estimator variants over several noise seeds.

Synthesizes the noiseless records once, then for each seed adds noise and inverts with
every combination of field mode, carrier demodulation and stencil, reporting the
maximum relative errors of rho0 and k0 and the number of points where k0 is reported.
"""
import argparse
import itertools
import time

import numpy as np

from bubbleimg.cli import bundled_scenario
from bubbleimg.dataio import add_noise, load_scenario, parse_scenario, synthesize_scan
from bubbleimg.invert import error_metrics, invert
from bubbleimg.media import sample_background


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--scenario", default=str(bundled_scenario("heterogeneous")))
    p.add_argument("--seeds", type=int, nargs="+", default=[7, 1, 2, 3])
    p.add_argument("--delta", type=float, default=None, help="noise level (default: the scenario's)")
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    scn = load_scenario(args.scenario)
    delta = scn.noise_delta if args.delta is None else args.delta
    raw = dict(scn.raw, noise={"delta": 0.0, "seed": 0})
    t0 = time.perf_counter()
    clean = synthesize_scan(parse_scenario(raw), jobs=args.jobs)
    print(f"synthesis {time.perf_counter() - t0:.0f} s, {len(clean.z)} points x {len(clean.omegas)} frequencies")
    rho, k, _ = sample_background(scn.medium, clean.z)
    truth = {"rho0": rho, "k0": k}
    variants = list(itertools.product(("single", "multi"), (False, True), ("7", "27")))
    print(f"{'seed':>4} {'mode':>6} {'carrier':>7} {'stencil':>7} {'rho0 max':>9} {'k0 max':>9} {'k0 l2':>9} {'k0 pts':>6}")
    for seed in args.seeds:
        ms = add_noise(clean, delta, seed)
        for mode, car, st in variants:
            e = error_metrics(invert(ms, field_mode=mode, carrier=car, stencil=st), truth)
            print(f"{seed:4d} {mode:>6} {str(car):>7} {st:>7} {e['rho0']['linf']:9.2e} "
                  f"{e['k0']['linf'] or np.nan:9.2e} {e['k0']['l2'] or np.nan:9.2e} {e['k0']['count']:6d}")


if __name__ == "__main__":
    main()
