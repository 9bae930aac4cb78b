"""Acceptance suite: one PASS/FAIL line per criterion at the required tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines.
"""
import copy
import json
import math
import time

import numpy as np

from bubbleimg.cli import bundled_scenario, run
from bubbleimg.dataio import load_scenario, parse_scenario, synthesize_scan
from bubbleimg.forward import farfield_regime1, minnaert_frequency
from bubbleimg.geometry import load_shape, mu_shape, voxelize
from bubbleimg.invert import error_metrics, invert
from bubbleimg.media import BubbleSpec, sample_background
from bubbleimg.oracle import SphereScatterer, coupled_solve, j0_apply, layer_apply
from bubbleimg.spectrum import adz_single_cluster, assemble_newtonian, newtonian_eigens, richardson, w_field

from conftest import small_scenario

THETA = np.array([0.0, 0.0, 1.0])
BALL_MU = 8 * math.pi / 3


def report(n: int, ok: bool, detail: str):
    print(f"\n{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")
    assert ok, detail


def test_1_geometry_factor():
    t0 = time.perf_counter()
    mu = mu_shape(load_shape("sphere(4)"), quad_order=3)
    dt = time.perf_counter() - t0
    err = abs(mu / BALL_MU - 1)
    report(1, err <= 1e-3 and dt < 5, f"mu(unit sphere) rel. error {err:.2e} (tol 1e-03), {dt:.1f} s (limit 5 s)")


def test_2_minnaert_law():
    t0 = time.perf_counter()
    b = BubbleSpec(eps=0.02, rho_bar=2000.0, k_bar=1e5)
    res = minnaert_frequency(b, 1000.0, BALL_MU)
    law = abs(res.omega_sq / (3 * b.k_bar / 1000.0) - 1)
    sph = SphereScatterer.from_bubble(b, 1000.0, 2e9)
    ws = np.linspace(0.5, 1.5, 1001) * res.omega_res
    amp = [abs(sph.farfield(w, THETA, -THETA)) for w in ws]
    peak = abs(ws[int(np.argmax(amp))] / res.omega_res - 1)
    dt = time.perf_counter() - t0
    report(2, law <= 1e-10 and peak <= 0.02 and dt < 30,
           f"omega_M^2 vs 3 k/rho0 {law:.1e} (tol 1e-10); series peak offset {peak:.2e} (tol 2e-02); {dt:.1f} s")


def test_3_newtonian_spectrum():
    t0 = time.perf_counter()
    ball = load_shape("sphere(4)")
    v8, v16 = voxelize(ball, 1 / 8), voxelize(ball, 1 / 16)
    l8 = newtonian_eigens(assemble_newtonian(v8), 1)[0].lam
    l16 = newtonian_eigens(assemble_newtonian(v16), 1)[0].lam
    exact = 4 / math.pi ** 2
    err = abs(richardson(l8, l16) / exact - 1)
    half = newtonian_eigens(assemble_newtonian(v8.scaled(0.5)), 1)[0].lam
    scal = abs(half / (0.25 * l8) - 1)
    dt = time.perf_counter() - t0
    report(3, err <= 1e-2 and scal <= 1e-10 and dt < 60,
           f"ball eigenvalue (h=1/16 + Richardson) rel. error {err:.2e} (tol 1e-02); "
           f"eps^2 law {scal:.1e} (tol 1e-10); {dt:.1f} s")


def test_4_w_identity():
    disc = assemble_newtonian(voxelize(load_shape("sphere(3)"), 1 / 8))
    cl = newtonian_eigens(disc, 1)[0]
    rho0, k0, kbar = 1.0, 1e3, 1.0
    ident, resid, dom = [], [], []
    for eps in (0.2, 0.1, 0.05):
        gamma = 1 / (kbar * eps ** 2) - 1 / k0
        wn2 = 1 / (gamma * rho0 * eps ** 2 * cl.lam)
        if eps == 0.2:
            for f in (0.5, 0.8, 1.2, 2.0, 3.0):
                w = w_field(disc, gamma, math.sqrt(f * wn2), eps, rho0)
                ident.append(abs(w.integral - w.spectral) / abs(w.integral))
        om = math.sqrt(1.05 * wn2)
        w = w_field(disc, gamma, om, eps, rho0)
        a = adz_single_cluster(cl, om, math.sqrt(wn2), eps)
        resid.append(abs(w.integral - a))
        dom.append(abs(a / w.integral))
    orders = [math.log2(resid[i] / resid[i + 1]) for i in range(2)]
    ok = max(ident) <= 1e-8 and all(2.7 <= o <= 3.3 for o in orders) and all(abs(d - 1) < 1e-2 for d in dom)
    report(4, ok, f"dense vs spectral int W max {max(ident):.1e} (tol 1e-08); single-cluster residual orders "
                  f"{orders[0]:.2f}, {orders[1]:.2f} (O(eps^3)); |adz/int W| {min(dom):.4f}..{max(dom):.4f}")


def test_5_minnaert_accuracy_order():
    t0 = time.perf_counter()
    base = BubbleSpec(eps=0.04, rho_bar=2000.0, k_bar=1e5)
    errs = []
    for eps in (0.04, 0.02, 0.01):
        b = base.with_eps(eps)
        res = minnaert_frequency(b, 1000.0, BALL_MU)
        om = math.sqrt(1.5) * res.omega_res
        exact = SphereScatterer.from_bubble(b, 1000.0, 2e9).farfield(om, THETA, -THETA)
        asym = farfield_regime1(0.0, 1.0, 1.0, om, b, res, 4 * math.pi / 3, 1000.0)
        errs.append(abs(asym - exact) / abs(exact))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    dt = time.perf_counter() - t0
    report(5, all(1.5 <= r <= 3 for r in ratios) and dt < 120,
           f"rel. errors {', '.join(f'{e:.2e}' for e in errs)}; ratios {ratios[0]:.2f}, {ratios[1]:.2f} "
           f"(range [1.5, 3]); {dt:.1f} s")


def test_6_layer_identities():
    ball = load_shape("sphere(3)")
    rho0 = 1000.0
    k = layer_apply(ball, 0.0, "double", np.ones(ball.n_triangles), rho0=rho0)
    ek = float(np.max(np.abs(k / (-rho0 / 2) - 1)))
    small = ball.scaled(0.05).translated((0.3, -0.2, 0.1))
    j0 = j0_apply(small, lambda x: 1000.0 + 200.0 * (x @ np.array([1.0, 0.5, 0.2])), 1.0)
    ej = float(np.max(np.abs(j0 / -0.5 - 1)))
    sol = coupled_solve(ball, voxelize(ball, 0.2), 1.0, 1.0, 2.0, 3.0, 2.0, THETA)
    ref = SphereScatterer(1.0, 2.0, 3.0, 1.0, 1.0).farfield(2.0, THETA, -THETA)
    ef = abs(sol.farfield(-THETA) - ref) / abs(ref)
    gap = sol.divergence_gap()
    report(6, ek <= 1e-2 and ej <= 1e-2 and gap <= 1e-6 and ef <= 2e-2,
           f"K0[1] {ek:.1e} (tol 1e-02); J0(1) {ej:.1e} (tol 1e-02); divergence identity {gap:.1e} "
           f"(tol 1e-06); coupled far field {ef:.1e} (tol 2e-02)")


def test_7_end_to_end_inversion():
    t0 = time.perf_counter()
    scn = load_scenario(bundled_scenario("heterogeneous"))
    ms = synthesize_scan(scn)
    rec = invert(ms, field_mode="multi", carrier=True, stencil="27")
    dt = time.perf_counter() - t0
    rho, k, _ = sample_background(scn.medium, ms.z)
    e = error_metrics(rec, {"rho0": rho, "k0": k})
    ok = (e["rho0"]["linf"] <= 0.02 and e["rho0"]["count"] == len(ms.z) and e["k0"]["count"] > 0
          and e["k0"]["linf"] <= 0.05 and dt < 600)
    report(7, ok, f"rho0 max rel. error {e['rho0']['linf']:.2e} (tol 2e-02); k0 max rel. error "
                  f"{e['k0']['linf']:.2e} on {e['k0']['count']}/{len(ms.z)} points (tol 5e-02); {dt:.0f} s")


def test_8_bodywave_pathway():
    raw = json.loads(bundled_scenario("bodywave").read_text())
    swapped = copy.deepcopy(raw)
    for p in swapped["medium"]["phantoms"]:
        p["delta_rho"], p["delta_k"] = -p["delta_rho"], -p["delta_k"]
    wr, wn = [], None
    for r in (raw, swapped):
        ms = synthesize_scan(parse_scenario(r))
        wr.append(np.sqrt(invert(ms).omega_r2))
        wn = ms.meta["omega_res"]
    err = float(np.max(np.abs(wr[0] / wn - 1)))
    swap = float(np.max(np.abs(wr[0] / wr[1] - 1)))
    ok = np.all(np.isfinite(wr)) and err <= 5e-3 and swap < 1e-3
    report(8, ok, f"omega_n max rel. error {err:.1e} (tol 5e-03); change under phantom swap {swap:.1e} (tol 1e-03)")


def test_9_determinism(tmp_path):
    scn = tmp_path / "scn.json"
    scn.write_text(json.dumps(small_scenario(delta=0.01, seed=5, count=24)))
    files = {}
    for jobs in ("1", "2", "1"):
        d = tmp_path / f"run{len(files)}"
        assert run(["scan", "--scenario", str(scn), "--out", str(d / "data"), "--jobs", jobs]) == 0
        assert run(["invert", "--data", str(d / "data"), "--out", str(d / "recon.json"), "--jobs", jobs]) == 0
        files[len(files)] = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
    same = files[0] == files[1] == files[2]
    report(9, same and len(files[0]) > 1, f"scan + invert outputs byte-identical across reruns and --jobs 1/2: {same}")
