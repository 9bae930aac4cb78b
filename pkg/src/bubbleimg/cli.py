"""Command-line driver: ``bubbleimg {spectrum,scan,invert,validate,simulate}``.

Exit codes: 0 success, 1 computational failure (or a failed validation check),
2 usage error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import dataio
from .defaults import overridden, parse_assignment
from .errors import BubbleImagingError

CONSTANTS = {"8pi": 8 * math.pi, "4pi": 4 * math.pi}


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package (``homogeneous``, ``heterogeneous``, ``bodywave``)."""
    return Path(str(resources.files("bubbleimg") / "scenarios" / f"{name}.json"))


def _resolve_scenario(ref: str | None, default: str = "homogeneous") -> Path:
    if ref is None:
        return bundled_scenario(default)
    p = Path(ref)
    if not p.exists() and bundled_scenario(ref).exists():
        return bundled_scenario(ref)
    return p


def _header(hash_: str | None):
    print(f"scenario {hash_ or '-'}")
    print(f"far-field normalization: {dataio.NORMALIZATION}")


def _dump(obj, path: str | None):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# subcommands


def cmd_spectrum(args) -> int:
    from .geometry import load_shape, mu_shape, shape_measures, voxelize
    from .spectrum import assemble_newtonian, body_resonance_value, newtonian_eigens
    shape, hash_, bubble = args.shape, None, None
    if args.scenario:
        scn = dataio.load_scenario(_resolve_scenario(args.scenario))
        hash_, bubble = scn.hash, scn.bubble
        shape = shape or bubble.shape
    shape = shape or "sphere(3)"
    _header(hash_)
    mesh = load_shape(shape)
    vol, area = shape_measures(mesh)
    mu = mu_shape(mesh)
    vox = voxelize(mesh, args.h)
    clusters = newtonian_eigens(assemble_newtonian(vox), count=args.count)
    out = {"shape": shape, "volume": vol, "area": area, "mu_shape": mu, "voxel_h": args.h,
           "voxels": vox.n, "clusters": []}
    for c in clusters:
        item = {"lam": c.lam, "multiplicity": c.multiplicity, "moment_sq": c.moment_sq}
        if bubble is not None:
            item["omega_res"] = body_resonance_value(bubble.k_bar, bubble.rho_bar, c.lam)
        out["clusters"].append(item)
    _dump(out, args.out)
    return 0


def cmd_scan(args) -> int:
    path = _resolve_scenario(args.scenario)
    scn = dataio.load_scenario(path)
    if args.seed is not None:
        raw = dict(scn.raw)
        raw["noise"] = dict(raw.get("noise", {}), seed=int(args.seed))
        scn = dataio.parse_scenario(raw)
    _header(scn.hash)
    t0 = time.perf_counter()
    ms = dataio.synthesize_scan(scn, jobs=args.jobs, minnaert_constant=CONSTANTS[args.minnaert_constant])
    dataio.write_set(ms, args.out)
    print(f"wrote {len(ms.z)} scan points x {len(ms.omegas)} frequencies to {args.out} "
          f"({time.perf_counter() - t0:.1f} s)", file=sys.stderr)
    for w in ms.meta.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_invert(args) -> int:
    from .invert import invert
    ms = dataio.read_set(args.data)
    _header(ms.scenario_hash)
    const = CONSTANTS[args.minnaert_constant] if args.minnaert_constant else None
    joint = [float(w) for w in args.joint_omegas.split(",")] if args.joint_omegas else None
    rec = invert(ms, regime=args.regime, omega_eval=args.omega_eval, minnaert_constant=const,
                 tau=args.tau, field_mode=args.field_mode, carrier=args.carrier,
                 stencil=args.stencil, joint_omegas=joint)
    rec.write(args.out)
    return 0


def validation_checks(quick: bool = False):
    """``(name, value, tolerance, passed)`` rows of the oracle suite."""
    from .fields import solve_background
    from .forward import farfield_regime1, minnaert_frequency
    from .geometry import load_shape, mu_shape, shape_measures, voxelize
    from .media import BackgroundMedium, BubbleSpec
    from .oracle import SphereScatterer, coupled_solve, j0_apply, layer_apply
    from .spectrum import assemble_newtonian, newtonian_eigens

    rows = []

    def add(name, value, tol):
        rows.append((name, float(value), float(tol), bool(value <= tol)))

    s4 = load_shape("sphere(3)" if quick else "sphere(4)")
    add("geometry factor of the unit sphere (rel. error)", abs(mu_shape(s4) / (8 * math.pi / 3) - 1), 1e-3)
    b = BubbleSpec(eps=0.01, rho_bar=2000.0, k_bar=1e5)
    res = minnaert_frequency(b, 1000.0, 8 * math.pi / 3)
    add("Minnaert law on the unit ball (rel. error)", abs(res.omega_sq / 300.0 - 1), 1e-10)
    sph = SphereScatterer.from_bubble(b.with_eps(0.02), 1000.0, 2e9)
    th = np.array([0.0, 0.0, 1.0])
    ws = np.linspace(0.5, 1.5, 401) * res.omega_res
    amp = [abs(sph.farfield(w, th, -th)) for w in ws]
    add("sphere series peak vs Minnaert frequency (rel.)", abs(ws[int(np.argmax(amp))] / res.omega_res - 1), 0.02)
    w = math.sqrt(1.5) * res.omega_res
    ex = SphereScatterer.from_bubble(b, 1000.0, 2e9).farfield(w, th, -th)
    vol, _ = shape_measures(load_shape("sphere(3)"))
    asy = farfield_regime1(0.0, 1.0, 1.0, w, b, res, 4 * math.pi / 3, 1000.0)
    add("regime-1 far field vs sphere series, eps=0.01 (rel.)", abs(asy - ex) / abs(ex), 5e-3)
    zero = SphereScatterer(0.1, 1000.0, 2e9, 1000.0, 2e9).farfield(500.0, th, -th)
    add("sphere series with zero contrast", abs(zero), 1e-12)
    ball = load_shape("sphere(3)")
    lam = newtonian_eigens(assemble_newtonian(voxelize(ball, 0.125)), 1)[0].lam
    add("ball Newtonian eigenvalue at h=1/8 (rel. error)", abs(lam / (4 / math.pi ** 2) - 1), 1e-2)
    k1 = layer_apply(ball, 0.0, "double", np.ones(ball.n_triangles), rho0=1.0)
    add("static double layer applied to 1 (max rel. error)", float(np.max(np.abs(k1 / -0.5 - 1))), 1e-2)
    small = ball.scaled(0.05).translated((0.3, -0.2, 0.1))
    j0 = j0_apply(small, lambda x: 1000.0 + 200.0 * (x @ np.array([1.0, 0.5, 0.2])), 1.0)
    add("J0 applied to 1 on a small bubble (max rel. error)", float(np.max(np.abs(j0 / -0.5 - 1))), 1e-2)
    if not quick:
        vox = voxelize(ball, 0.2)
        sol = coupled_solve(ball, vox, 1.0, 1.0, 2.0, 3.0, 2.0, th)
        ref = SphereScatterer(1.0, 2.0, 3.0, 1.0, 1.0).farfield(2.0, th, -th)
        add("coupled solve far field vs sphere series (rel.)", abs(sol.farfield(-th) - ref) / abs(ref), 2e-2)
        add("coupled solve divergence identity (rel.)", sol.divergence_gap(), 1e-6)
    med = BackgroundMedium.from_phantoms(((-2,) * 3, (2,) * 3), 0.2, 1000.0, 2e9,
                                         [{"center": (0.1, 0.0, 0.0), "width": 0.25,
                                           "delta_rho": 80.0, "delta_k": 1e8}])
    om = 3000.0
    a, b_ = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    _, fa = solve_background(med, a, om)
    _, fb = solve_background(med, -b_, om)
    add("background far-field reciprocity (rel.)", abs(fa(b_) - fb(-a)) / max(abs(fa(b_)), 1e-300), 1e-6)
    return rows


def cmd_validate(args) -> int:
    # the checks are scenario independent; the header names the configuration in force
    _header(dataio.load_scenario(_resolve_scenario(args.scenario)).hash)
    rows = validation_checks(quick=args.quick)
    width = max(len(r[0]) for r in rows)
    for name, val, tol, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {val:.3e}  (tol {tol:.0e})")
    failed = sum(not r[3] for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 1 if failed else 0


def cmd_simulate(args) -> int:
    from .forward import (background_samples, bodywave_resonance, farfield_regime1, farfield_regime2,
                          minnaert_frequency, validity_guard)
    from .geometry import load_shape, mu_shape, shape_measures, voxelize
    from .media import MINNAERT, sample_background
    from .spectrum import assemble_newtonian, newtonian_eigens
    scn = dataio.load_scenario(_resolve_scenario(args.scenario))
    _header(scn.hash)
    z = np.asarray(args.z if args.z else scn.scan.points[len(scn.scan.points) // 2], float)
    omega = args.omega if args.omega else 0.5 * (scn.band.omega_min + scn.band.omega_max)
    bubble = scn.bubble.at(z)
    mesh = load_shape(bubble.shape)
    vol, _ = shape_measures(mesh)
    theta = scn.theta
    vinf, vobs, vinc = background_samples(scn.medium, z, omega, theta, -theta)
    rho_z = sample_background(scn.medium, z)[0]
    if bubble.regime == MINNAERT:
        res = minnaert_frequency(bubble, rho_z, mu_shape(mesh))
        u = farfield_regime1(vinf, vobs, vinc, omega, bubble, res, vol, scn.medium.exterior_rho)
    else:
        cl = newtonian_eigens(assemble_newtonian(voxelize(mesh, scn.voxel_h)), 1)[0]
        res = bodywave_resonance(bubble, cl)
        u = farfield_regime2(vinf, vobs, vinc, omega, bubble, res, scn.medium.exterior_rho)
    rep = validity_guard(bubble.eps, omega, res, j=bubble.j)
    out = {"z": z.tolist(), "omega": omega, "rho0_z": rho_z, "omega_res": res.omega_res,
           "v_inf": [vinf.real, vinf.imag], "v_z": [vinc.real, vinc.imag], "u_inf": [u.real, u.imag],
           "validity_ratio": rep.ratio, "validity_ok": rep.ok}
    _dump(out, args.out)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON (or the name of a bundled scenario)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--jobs", type=int, default=dataio.default_jobs(), help="worker processes")
    common.add_argument("--seed", type=int, help="noise seed (overrides the scenario)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override an entry of the defaults table")

    p = argparse.ArgumentParser(prog="bubbleimg", description="Bubble-based acoustic imaging toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common], help="geometry factor and Newtonian spectrum of a shape")
    s.add_argument("--shape", help="shape reference (default: the scenario's or sphere(3))")
    s.add_argument("--h", type=float, default=0.125, help="voxel size")
    s.add_argument("--count", type=int, default=3, help="number of eigenvalue clusters")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("scan", parents=[common], help="synthesize a measurement set")
    s.add_argument("--minnaert-constant", choices=sorted(CONSTANTS), default="8pi")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("invert", parents=[common], help="reconstruct rho0 and k0 from a measurement set")
    s.add_argument("--data", help="measurement directory")
    s.add_argument("--regime", type=int, choices=(1, 2))
    s.add_argument("--omega-eval", type=float)
    s.add_argument("--minnaert-constant", choices=sorted(CONSTANTS))
    s.add_argument("--tau", type=float, help="Tikhonov weight of the joint recovery")
    s.add_argument("--field-mode", choices=("single", "multi"), default="single")
    s.add_argument("--carrier", action="store_true", help="difference the carrier-demodulated field")
    s.add_argument("--stencil", choices=("7", "27"), default="7")
    s.add_argument("--joint-omegas", help="comma-separated frequencies for the joint recovery (regime 2)")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("validate", parents=[common], help="run the oracle checks")
    s.add_argument("--quick", action="store_true", help="skip the slow checks")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", parents=[common], help="single-point forward evaluation")
    s.add_argument("--z", type=float, nargs=3)
    s.add_argument("--omega", type=float)
    s.set_defaults(func=cmd_simulate)
    return p


REQUIRED = {"scan": ("out",), "invert": ("data", "out")}


def main(argv=None) -> int:
    """Entry point; returns the process exit code (argparse exits with 2 on bad usage)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = dict(parse_assignment(a) for a in args.set)
    except (KeyError, ValueError) as exc:
        parser.error(exc.args[0] if exc.args else str(exc))
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    missing = [f"--{k}" for k in REQUIRED.get(args.command, ()) if not getattr(args, k)]
    if missing:
        parser.error(f"{args.command} requires {' and '.join(missing)}")
    try:
        with overridden(**overrides):
            return args.func(args)
    except (BubbleImagingError, OSError, ValueError) as exc:
        print(f"bubbleimg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def run(argv) -> int:
    """Like ``main`` but converts argparse's ``SystemExit`` into a return code."""
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1


if __name__ == "__main__":
    sys.exit(main())
