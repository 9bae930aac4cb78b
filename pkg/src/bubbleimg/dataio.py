"""Scenario loading, measurement synthesis, noise injection and persistence.

A measurement set holds backscattered far fields ``(xhat = -theta)`` for one
incident direction: baseline records ``v_inf(omega)`` and bubbled records
``u_inf(z, omega)`` for every scan point.  On disk it is a directory with
``baseline.csv``, ``bubbled.csv`` and ``meta.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, PreconditionError, ResonanceProximityError, SchemaError
from .media import (BODYWAVE, MINNAERT, BackgroundMedium, BubbleSpec, FrequencyBand, ScanGrid,
                    check_band, sample_background)

SCHEMA_VERSION = 1
NORMALIZATION = "lim |x| e^{-ik|x|} u^s"
GENERATORS = ("regime1", "regime2", "oracle_sphere")
BASELINE_HEADER = ["omega", "re_v_inf", "im_v_inf"]
BUBBLED_HEADER = ["z_x", "z_y", "z_z", "omega", "re_u", "im_u"]


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    medium: BackgroundMedium
    bubble: BubbleSpec
    scan: ScanGrid
    band: FrequencyBand
    theta: np.ndarray
    generator: str
    noise_delta: float
    noise_seed: int
    raw: dict
    # discretization of the shape for body-wave resonances
    voxel_h: float = 0.125

    @property
    def hash(self) -> str:
        return scenario_hash(self.raw)


def scenario_hash(raw: dict) -> str:
    """Short SHA-256 of the canonical JSON text of a scenario."""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _scan_from(spec: dict) -> ScanGrid:
    if "points" in spec:
        return ScanGrid(np.asarray(spec["points"], float).reshape(-1, 3))
    return ScanGrid.regular(spec["lo"], spec["hi"], int(spec["n"]))


def parse_scenario(raw: dict) -> Scenario:
    """Build a scenario from its JSON dictionary."""
    try:
        med = raw["medium"]
        phantoms = []
        for p in med.get("phantoms", []):
            if p.get("kind", "gaussian") != "gaussian":
                raise DataError(f"unknown phantom kind {p.get('kind')!r}")
            phantoms.append(p)
        medium = BackgroundMedium.from_phantoms(med["box"], med["h"], med["exterior_rho"],
                                                med["exterior_k"], phantoms)
        b = raw["bubble"]
        bubble = BubbleSpec(shape=b.get("shape", "sphere(3)"), center=tuple(b.get("center", (0, 0, 0))),
                            eps=b["eps"], rho_bar=b["rho_bar"], k_bar=b["k_bar"],
                            regime=b.get("regime", MINNAERT), j=b.get("j", 1.0))
        scan = _scan_from(raw["scan"]).validate(medium)
        band = FrequencyBand(raw["band"]["omega_min"], raw["band"]["omega_max"], int(raw["band"]["count"]))
        theta = np.asarray(raw.get("incident", {}).get("theta", (0.0, 0.0, 1.0)), float)
        gen = raw.get("generator", "regime1" if bubble.regime == MINNAERT else "regime2")
        noise = raw.get("noise", {})
    except KeyError as exc:
        raise SchemaError(f"scenario is missing the key {exc}") from exc
    if gen not in GENERATORS:
        raise SchemaError(f"generator must be one of {GENERATORS}")
    if not np.isclose(np.linalg.norm(theta), 1.0):
        raise DataError("incident direction must be a unit vector")
    return Scenario(medium, bubble, scan, band, theta, gen, float(noise.get("delta", 0.0)),
                    int(noise.get("seed", 0)), raw, float(raw.get("voxel_h", 0.125)))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(json.load(fh))


# --------------------------------------------------------------------------
# measurement sets


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """Backscattering records over a band and a scan grid.

    ``bubbled[i, k]`` is ``u_inf`` for scan point ``z[i]`` at ``omegas[k]``; pairs
    skipped at a resonance pole are NaN and listed in ``meta["skipped"]``.
    """

    theta: np.ndarray
    omegas: np.ndarray
    z: np.ndarray
    baseline: np.ndarray
    bubbled: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.baseline.shape != self.omegas.shape:
            raise DataError("baseline must cover every frequency")
        if self.bubbled.shape != (len(self.z), len(self.omegas)):
            raise DataError("bubbled records must form a (scan point, frequency) table")

    @property
    def scenario_hash(self) -> str | None:
        return self.meta.get("scenario_hash")

    def z_index(self, z) -> int:
        d = np.linalg.norm(self.z - np.asarray(z, float), axis=1)
        i = int(np.argmin(d)) if len(d) else -1
        if i < 0 or d[i] > 1e-9:
            raise DataError(f"scan point {tuple(z)} is not in the set")
        return i


def _shape_data(bubble: BubbleSpec, voxel_h: float):
    """Measures, geometry factor and (body-wave) leading cluster of the reference shape."""
    from .geometry import load_shape, mu_shape, shape_measures
    mesh = load_shape(bubble.shape)
    vol, _ = shape_measures(mesh)
    out = {"volume": vol, "mu_shape": mu_shape(mesh)}
    if bubble.regime == BODYWAVE:
        from .geometry import voxelize
        from .spectrum import assemble_newtonian, newtonian_eigens
        cl = newtonian_eigens(assemble_newtonian(voxelize(mesh, voxel_h)), count=1)[0]
        out.update(lam=cl.lam, moment_sq=cl.moment_sq)
    return out


def _background_at(args):
    """Baseline far field and field values at the scan points for one frequency."""
    medium, theta, omega, points = args
    from .fields import solve_background
    v, vinf = solve_background(medium, theta, omega)
    return vinf(-theta), np.array([v.at(p) for p in points])


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def synthesize_scan(scn: Scenario, jobs: int = 1, minnaert_constant: float = 8 * math.pi) -> MeasurementSet:
    """Synthesize baseline and bubbled backscattering records for a scenario.

    Parameters
    ----------
    scn : parsed scenario.
    jobs : worker processes for the per-frequency background solves; the result
        does not depend on it.
    minnaert_constant : numerator constant of the Minnaert law used by the regime-1
        generator.

    Returns
    -------
    MeasurementSet with noise applied when the scenario asks for it.
    """
    from .forward import (ResonanceInfo, farfield_regime1, farfield_regime2, minnaert_frequency)
    bubble, medium = scn.bubble, scn.medium
    omegas = scn.band.omegas()
    pts = scn.scan.points
    theta = scn.theta / np.linalg.norm(scn.theta)
    shape = _shape_data(bubble, scn.voxel_h)
    warnings, skipped = [], []
    rho_ext = medium.exterior_rho

    if scn.generator == "oracle_sphere":
        from .oracle import SphereScatterer
        if not medium.is_homogeneous:
            raise PreconditionError("the sphere oracle needs a homogeneous background")
        if not str(bubble.shape).replace(" ", "").startswith("sphere("):
            raise PreconditionError("the sphere oracle needs a spherical bubble")
        baseline = np.zeros(len(omegas), complex)
        bub = np.empty((len(pts), len(omegas)), complex)
        for i, p in enumerate(pts):
            sph = SphereScatterer.from_bubble(bubble.at(p), medium.exterior_rho, medium.exterior_k)
            for k, w in enumerate(omegas):
                bub[i, k] = sph.farfield(w, theta, -theta)
        res_meta = {}
    else:
        bg = _map(_background_at, [(medium, theta, w, pts) for w in omegas], jobs)
        baseline = np.array([b[0] for b in bg], complex)
        vz = np.stack([b[1] for b in bg], axis=1)  # (n_z, n_omega)
        bub = np.empty((len(pts), len(omegas)), complex)
        if scn.generator == "regime1":
            if bubble.regime != MINNAERT:
                raise PreconditionError("the regime-1 generator needs a Minnaert bubble")
            rho_z = np.atleast_1d(sample_background(medium, pts)[0])
            res = [minnaert_frequency(bubble.at(p), float(r), shape["mu_shape"], constant=minnaert_constant)
                   for p, r in zip(pts, rho_z)]
            res_meta = {}
        else:
            if bubble.regime != BODYWAVE:
                raise PreconditionError("the regime-2 generator needs a body-wave bubble")
            wn = math.sqrt(bubble.k_bar / (bubble.rho_bar * shape["lam"]))
            res = [ResonanceInfo(BODYWAVE, wn, lam=shape["lam"], moment_sq=shape["moment_sq"])] * len(pts)
            res_meta = {"omega_res": wn}
        for i, p in enumerate(pts):
            b = bubble.at(p)
            for k, w in enumerate(omegas):
                v = vz[i, k]
                try:
                    if scn.generator == "regime1":
                        bub[i, k] = farfield_regime1(baseline[k], v, v, w, b, res[i], shape["volume"], rho_ext)
                    else:
                        bub[i, k] = farfield_regime2(baseline[k], v, v, w, b, res[i], rho_ext)
                except ResonanceProximityError:
                    bub[i, k] = np.nan
                    skipped.append([i, k])
    res_omega = res_meta.get("omega_res")
    rep = check_band(medium, scn.band, bubble, mu=shape["mu_shape"], omega_res=res_omega,
                     constant=minnaert_constant)
    if not rep.bracketed:
        warnings.append(f"band does not bracket the resonances {rep.required}")
    meta = {
        "schema_version": SCHEMA_VERSION,
        "scenario_hash": scn.hash,
        "theta": [float(t) for t in theta],
        "eps": bubble.eps, "rho_bar": bubble.rho_bar, "k_bar": bubble.k_bar,
        "regime": bubble.regime, "j": bubble.j, "shape": bubble.shape,
        "mu_shape": shape["mu_shape"], "volume": shape["volume"],
        "exterior_rho": medium.exterior_rho, "exterior_k": medium.exterior_k,
        "generator": scn.generator, "minnaert_constant": minnaert_constant,
        "noise": {"delta": 0.0, "seed": scn.noise_seed},
        "farfield_normalization": NORMALIZATION,
        "scan": {"shape": list(scn.scan.shape) if scn.scan.shape else None,
                 "spacing": scn.scan.spacing},
        "skipped": skipped, "warnings": warnings,
    }
    for key in ("lam", "moment_sq"):
        if key in shape:
            meta[key] = shape[key]
    meta.update(res_meta)
    ms = MeasurementSet(theta, omegas, pts.copy(), baseline, bub, meta)
    if scn.noise_delta > 0:
        ms = add_noise(ms, scn.noise_delta, scn.noise_seed)
    return ms


def _normal_pair(seed: int, iz: int, iw: int) -> complex:
    """Unit complex normal ``(g1 + i g2)/sqrt(2)`` keyed by ``(seed, z, omega)``."""
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, iz, iw])))
    g = gen.standard_normal(2)
    return complex(g[0], g[1]) / math.sqrt(2.0)


def add_noise(ms: MeasurementSet, delta: float, seed: int) -> MeasurementSet:
    """Additive complex Gaussian noise of size ``delta * rms(|records|)``.

    Every record draws from its own counter-based stream keyed by ``(seed, z, omega)``
    (baseline records use ``z = 0``, scan points ``z = i + 1``), so the output does
    not depend on the order of evaluation.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if delta == 0:
        return ms
    vals = np.concatenate([ms.baseline, ms.bubbled.ravel()])
    vals = vals[np.isfinite(vals)]
    sigma = delta * float(np.sqrt(np.mean(np.abs(vals) ** 2)))
    base = ms.baseline + sigma * np.array([_normal_pair(seed, 0, k) for k in range(len(ms.omegas))])
    bub = ms.bubbled.copy()
    for i in range(bub.shape[0]):
        for k in range(bub.shape[1]):
            if np.isfinite(bub[i, k]):
                bub[i, k] += sigma * _normal_pair(seed, i + 1, k)
    meta = dict(ms.meta)
    meta["noise"] = {"delta": float(delta), "seed": int(seed), "sigma": sigma}
    return replace(ms, baseline=base, bubbled=bub, meta=meta)


# --------------------------------------------------------------------------
# persistence


def _f(x: float) -> str:
    return repr(float(x))


def write_set(ms: MeasurementSet, path) -> Path:
    """Write ``baseline.csv``, ``bubbled.csv`` and ``meta.json`` into directory ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "baseline.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASELINE_HEADER)
        for om, v in zip(ms.omegas, ms.baseline):
            w.writerow([_f(om), _f(v.real), _f(v.imag)])
    with open(out / "bubbled.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BUBBLED_HEADER)
        for i, z in enumerate(ms.z):
            for k, om in enumerate(ms.omegas):
                u = ms.bubbled[i, k]
                if np.isfinite(u):
                    w.writerow([_f(z[0]), _f(z[1]), _f(z[2]), _f(om), _f(u.real), _f(u.imag)])
    meta = dict(ms.meta)
    meta.setdefault("schema_version", SCHEMA_VERSION)
    meta["theta"] = [float(t) for t in ms.theta]
    meta["scan_points"] = [[float(c) for c in z] for z in ms.z]
    with open(out / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def _rows(path: Path, header):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r, None)
        if got != header:
            raise SchemaError(f"{path.name}: header {got} does not match {header}")
        rows = []
        for n, row in enumerate(r, start=2):
            if len(row) != len(header):
                raise SchemaError(f"{path.name}:{n}: expected {len(header)} fields")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise SchemaError(f"{path.name}:{n}: {exc}") from exc
    return np.array(rows, float).reshape(-1, len(header))


def read_set(path) -> MeasurementSet:
    """Read a set written by ``write_set``; values round-trip exactly."""
    src = Path(path)
    try:
        with open(src / "meta.json") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read meta.json in {src}: {exc}") from exc
    ver = meta.get("schema_version")
    if ver != SCHEMA_VERSION:
        raise SchemaError(f"schema version {ver} is not supported (expected {SCHEMA_VERSION})")
    base = _rows(src / "baseline.csv", BASELINE_HEADER)
    bub = _rows(src / "bubbled.csv", BUBBLED_HEADER)
    omegas = base[:, 0]
    if len(np.unique(omegas)) != len(omegas):
        raise DataError("baseline.csv repeats a frequency")
    pts = meta.pop("scan_points", None)
    if pts is None:
        _, first = np.unique(bub[:, :3], axis=0, return_index=True)
        pts = bub[np.sort(first), :3]
    z = np.asarray(pts, float).reshape(-1, 3)
    table = np.full((len(z), len(omegas)), np.nan + 0j)
    kmap = {om: k for k, om in enumerate(omegas)}
    zmap = {tuple(p): i for i, p in enumerate(z)}
    for row in bub:
        i, k = zmap.get(tuple(row[:3])), kmap.get(row[3])
        if i is None or k is None:
            raise DataError(f"bubbled record at z={tuple(row[:3])}, omega={row[3]} has no scan point or baseline")
        if np.isfinite(table[i, k]):
            raise DataError(f"duplicate record at z={tuple(row[:3])}, omega={row[3]}")
        table[i, k] = complex(row[4], row[5])
    theta = np.asarray(meta.get("theta", (0, 0, 1)), float)
    return MeasurementSet(theta, omegas, z, base[:, 1] + 1j * base[:, 2], table, meta)


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
