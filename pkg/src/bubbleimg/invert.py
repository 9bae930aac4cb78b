"""Imaging procedure: resonance fits, density map, internal field, bulk modulus.

The imaging functional at a scan point is ``I(omega, z) = u_inf - v_inf`` in the
backscattering direction.  Its pole gives the resonance at ``z`` (the Minnaert
frequency encodes ``rho0(z)``), its residue gives ``v(z)^2``, and numerical
differentiation of the recovered field gives ``k0``.
"""
from __future__ import annotations

import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import correlate, minimum_filter
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .dataio import MeasurementSet
from .defaults import DEFAULTS
from .errors import (DataError, DegenerateFieldError, FitError, IdentifiabilityError,
                     NoResonanceError)
from .media import BODYWAVE, MINNAERT

POLE = "pole"  # I = c / (omega^2 - s)
WEIGHTED_POLE = "weighted_pole"  # I = c omega^2 / (omega^2 - s)
FIT_KINDS = (POLE, WEIGHTED_POLE)
MINNAERT_CONSTANTS = {"8pi": 8 * math.pi, "4pi": 4 * math.pi}


# --------------------------------------------------------------------------
# imaging functional and resonance fit


def imaging_functional(ms: MeasurementSet, z) -> tuple[np.ndarray, np.ndarray]:
    """``(omegas, I)`` at scan point ``z``; pairs skipped at a pole are dropped."""
    i = ms.z_index(z)
    vals = ms.bubbled[i] - ms.baseline
    bad = ~np.isfinite(vals)
    if np.any(bad):
        listed = {tuple(p) for p in ms.meta.get("skipped", [])}
        gaps = [k for k in np.flatnonzero(bad) if (i, int(k)) not in listed]
        if gaps:
            raise DataError(f"missing records at z={tuple(ms.z[i])} for omega={list(ms.omegas[gaps])}")
    return ms.omegas[~bad], vals[~bad]


@dataclass(frozen=True)
class ResonanceFit:
    """Pole ``omega_r2`` and residue ``c`` of ``I ~ c g(omega) / (omega^2 - omega_r2)``."""

    omega_r2: float
    residue: complex
    kind: str
    goodness: float

    @property
    def omega_r(self) -> float:
        return math.sqrt(self.omega_r2)

    def model(self, omega) -> np.ndarray:
        w2 = np.asarray(omega, float) ** 2
        g = w2 if self.kind == WEIGHTED_POLE else 1.0
        return self.residue * g / (w2 - self.omega_r2)


def _linear_pole(x, y, g):
    """Fit ``g/I = (x - s)/c`` by weighted linear least squares, returning ``(s, c)``.

    The weights ``|I|^2/|g|`` make the residual ``g/I - model`` carry uniform noise
    when ``I`` does.
    """
    wts = np.abs(y) ** 2 / np.abs(g)
    A = np.stack([x, np.ones_like(x)], axis=1) * wts[:, None]
    coef, *_ = np.linalg.lstsq(A, (g / y) * wts, rcond=None)
    a, b = coef
    if not np.isfinite(a) or abs(a) == 0:
        return None
    return float(np.real(-b / a)), complex(1.0 / a)


def _projected(x, y, g, s):
    """Best residue for a fixed pole ``s`` and the residual norm."""
    basis = g / (x - s)
    c = np.vdot(basis, y) / np.vdot(basis, basis)
    return float(np.linalg.norm(y - c * basis)), complex(c)


def _refine_pole(x, y, g, s0, grid):
    """Minimize the projected residual over ``s``.

    The residual has a barrier at every sample, so each sample interval next to the
    initial pole and to the largest records is searched separately.
    """
    order = np.argsort(np.abs(y))[::-1][:3]
    starts = set()
    for k in [int(np.searchsorted(grid, x[i])) for i in order] + [int(np.searchsorted(grid, s0)) - 1]:
        for j in (k - 1, k):
            if 0 <= j < len(grid) - 1:
                starts.add(j)
    r0 = _projected(x, y, g, s0)[0] if not np.any(x == s0) else np.inf
    best = (r0 if np.isfinite(r0) else np.inf, s0)
    for j in sorted(starts):
        lo, hi = grid[j], grid[j + 1]
        pad = 1e-9 * (hi - lo)
        r = minimize_scalar(lambda s: _projected(x, y, g, s)[0], bounds=(lo + pad, hi - pad),
                            method="bounded", options={"xatol": 1e-13 * hi})
        if r.fun < best[0]:
            best = (float(r.fun), float(r.x))
    return best[1]


def fit_resonance(omegas, values, kind: str = WEIGHTED_POLE, refine: bool = True) -> ResonanceFit:
    """Fit a single pole to an imaging-functional series.

    Parameters
    ----------
    omegas : band samples.
    values : complex ``I(omega)``.
    kind : ``"pole"`` for ``c/(omega^2 - s)``, ``"weighted_pole"`` for ``c omega^2/(omega^2 - s)``.
    refine : polish the linear-regression estimate by minimizing the residual on ``I``
        itself (the residue is eliminated by projection).

    Returns
    -------
    ResonanceFit; if the regression is unusable the search starts at the argmax of
    ``|I|`` (without ``refine`` that argmax is returned with ``goodness = 0``).

    Raises
    ------
    NoResonanceError when the series has no prominent peak.
    """
    if kind not in FIT_KINDS:
        raise ValueError(f"kind must be one of {FIT_KINDS}")
    om = np.asarray(omegas, float)
    val = np.asarray(values, complex)
    if len(om) < DEFAULTS.fit_min_samples:
        raise FitError(f"need at least {DEFAULTS.fit_min_samples} samples, got {len(om)}")
    mag = np.abs(val)
    med = float(np.median(mag))
    peak = int(np.argmax(mag))
    if not mag[peak] > DEFAULTS.fit_prominence * med:
        raise NoResonanceError(f"no prominent resonance (max {mag[peak]:.3g}, median {med:.3g})")
    # work with the series normalized by its peak: the fit is then invariant under scaling
    scale = val[peak]
    y = val / scale
    x = om ** 2
    g = x if kind == WEIGHTED_POLE else np.ones_like(x)
    sel = mag >= np.percentile(mag, DEFAULTS.fit_percentile)
    fallback = ResonanceFit(float(x[peak]), 0j, kind, 0.0)
    lin = _linear_pole(x[sel], y[sel], g[sel])
    s = lin[0] if lin is not None else np.nan
    if not (np.isfinite(s) and x.min() < s < x.max()):
        # the regression is swamped by noise away from the peak; the projected
        # residual search only needs a starting interval
        if not refine:
            return fallback
        s = float(x[peak])
    if refine:
        s = _refine_pole(x[sel], y[sel], g[sel], s, np.sort(x))
    res, c = _projected(x[sel], y[sel], g[sel], s)
    good = res / float(np.linalg.norm(y[sel]))
    return ResonanceFit(float(s), complex(c * scale), kind, float(min(max(1.0 - good, 0.0), 1.0)))


def recover_density(fit: ResonanceFit, k_bar: float, mu: float, constant: float = 8 * math.pi) -> float:
    """``rho0(z) = constant * k_bar / (omega_r^2 mu)``."""
    if not fit.omega_r2 > 0:
        raise FitError(f"non-positive fitted omega_r^2 = {fit.omega_r2}")
    return constant * k_bar / (fit.omega_r2 * mu)


# --------------------------------------------------------------------------
# internal field


def residue_factor(meta: dict) -> float:
    """``K`` in ``I = -K omega_r^2 omega^2 v^2 / (omega^2 - omega_r^2)``."""
    size = meta["volume"] if meta["regime"] == MINNAERT else meta["moment_sq"]
    return size * meta["eps"] * meta["exterior_rho"] / (4 * math.pi * meta["k_bar"])


def field_squared(omegas, values, fit: ResonanceFit, meta: dict) -> np.ndarray:
    """Per-frequency ``v(z, omega)^2`` implied by the imaging functional and a fit."""
    w2 = np.asarray(omegas, float) ** 2
    return -np.asarray(values) * (w2 - fit.omega_r2) / (residue_factor(meta) * fit.omega_r2 * w2)


def _multi_frequency(omegas, values, fit, z, theta, kappa_factor, omega_eval, degree, factor):
    """Joint fit of the pole and a smooth ``v(z, omega)^2`` to the raw records.

    The model is ``I = -K s omega^2 P(omega) exp(2i kappa theta.z) / (omega^2 - s)`` with
    a polynomial ``P`` in ``(omega - omega_eval)/omega_eval``.  For fixed ``s`` the
    coefficients follow by linear least squares; ``s`` is searched within half a
    band step of the fitted pole.  Every record carries the same noise level, so the
    residual is unweighted.  Returns ``v(z, omega_eval)^2``.
    """
    om = np.asarray(omegas, float)
    w2 = om ** 2
    tz = float(np.dot(theta, z))
    carrier = np.exp(2j * kappa_factor * om * tz)
    V = np.vander((om - omega_eval) / omega_eval, degree + 1, increasing=True)

    def solve(s):
        B = (-factor * s * w2 / (w2 - s) * carrier)[:, None] * V
        coef, *_ = np.linalg.lstsq(B, values, rcond=None)
        return float(np.linalg.norm(B @ coef - values)), coef

    step = float(np.max(np.diff(np.sort(w2)))) if len(w2) > 1 else 0.0
    s0 = fit.omega_r2
    if step > 0:
        best = minimize_scalar(lambda s: solve(s)[0], bounds=(s0 - 0.5 * step, s0 + 0.5 * step),
                               method="bounded", options={"xatol": 1e-12 * s0})
        s0 = float(best.x)
    coef = solve(s0)[1]
    return coef[0] * np.exp(2j * kappa_factor * omega_eval * tz)


def lattice_neighbors(shape):
    """6-neighbour pairs ``(i, j)`` of a C-ordered lattice."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    pairs = []
    for d in range(3):
        a = np.moveaxis(idx, d, 0)
        pairs.append(np.stack([a[:-1].ravel(), a[1:].ravel()], axis=1))
    return np.concatenate(pairs)


def sign_unwrap(v: np.ndarray, mask: np.ndarray, shape) -> tuple[np.ndarray, np.ndarray]:
    """Fix the sign of a field known up to pointwise sign by breadth-first traversal.

    Each neighbour takes the sign that brings it closer to the voxel it was reached
    from; the seed of every connected component of ``mask`` gets ``Re v >= 0``.
    Returns the unwrapped field and component labels (``-1`` where masked).
    """
    v = np.array(v, complex).ravel()
    mask = np.asarray(mask, bool).ravel()
    n = v.size
    adj = [[] for _ in range(n)]
    for i, j in lattice_neighbors(shape):
        if mask[i] and mask[j]:
            adj[i].append(j)
            adj[j].append(i)
    label = np.full(n, -1)
    comp = 0
    for seed in range(n):
        if not mask[seed] or label[seed] >= 0:
            continue
        if v[seed].real < 0:
            v[seed] = -v[seed]
        label[seed] = comp
        queue = deque([seed])
        while queue:
            i = queue.popleft()
            for j in adj[i]:
                if label[j] < 0:
                    if abs(v[i] - v[j]) > abs(v[i] + v[j]):
                        v[j] = -v[j]
                    label[j] = comp
                    queue.append(j)
        comp += 1
    return v, label


@dataclass(frozen=True, eq=False)
class FieldMap:
    v: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    omega_eval: float


def default_omega_eval(omegas, fits) -> float:
    """Band endpoint farthest from the median fitted resonance."""
    wr = np.median([f.omega_r for f in fits])
    lo, hi = float(np.min(omegas)), float(np.max(omegas))
    return lo if abs(wr - lo) > abs(hi - wr) else hi


def recover_internal_field(ms: MeasurementSet, fits, omega_eval: float | None = None,
                           mode: str = "single", degree: int = 0) -> FieldMap:
    """Internal field ``v(z, theta, omega_eval)`` at every scan point, up to a sign per component.

    Parameters
    ----------
    ms : measurement set (its metadata supplies the bubble and exterior constants).
    fits : one ResonanceFit per scan point (None for points without a fit).
    omega_eval : evaluation frequency; defaults to the band endpoint farthest from
        the median resonance in ``"single"`` mode and to the median resonance in
        ``"multi"`` mode.
    mode : ``"single"`` inverts the record at ``omega_eval`` (the band sample closest
        to it); ``"multi"`` fits the pole together with a polynomial (of ``degree``)
        model of the carrier-demodulated ``v^2`` to the whole band.
    """
    meta = ms.meta
    theta = np.asarray(meta.get("theta", ms.theta), float)
    kf = math.sqrt(meta["exterior_rho"] / meta["exterior_k"])
    factor = residue_factor(meta)
    good = [f for f in fits if f is not None and f.goodness > 0]
    if not good:
        raise DegenerateFieldError("no usable resonance fit")
    if omega_eval is None:
        omega_eval = (default_omega_eval(ms.omegas, good) if mode == "single"
                      else float(np.median([f.omega_r for f in good])))
    w_single = float(ms.omegas[int(np.argmin(np.abs(ms.omegas - omega_eval)))])
    v2 = np.full(len(ms.z), np.nan + 0j)
    for i, (z, fit) in enumerate(zip(ms.z, fits)):
        if fit is None or fit.goodness <= 0:
            continue
        om, val = imaging_functional(ms, z)
        if mode == "single":
            hit = np.flatnonzero(om == w_single)
            if len(hit):
                v2[i] = field_squared(om[hit[0]], val[hit[0]], fit, meta)
        elif mode == "multi":
            v2[i] = _multi_frequency(om, val, fit, z, theta, kf, omega_eval, degree, factor)
        else:
            raise ValueError("mode must be 'single' or 'multi'")
    if mode == "single":
        omega_eval = w_single
    mag = np.abs(v2)
    fin = np.isfinite(mag)
    if not np.any(fin):
        raise DegenerateFieldError("every scan point was masked")
    mask = fin & (mag > DEFAULTS.field_noise_floor * np.max(mag[fin]))
    v = np.where(mask, np.sqrt(np.where(mask, v2, 0)), 0)
    shape = _scan_shape(ms)
    v, labels = sign_unwrap(v, mask, shape)
    return FieldMap(v, mask, labels, float(omega_eval))


def _scan_shape(ms: MeasurementSet):
    shape = (ms.meta.get("scan") or {}).get("shape")
    if shape is None:
        return (len(ms.z), 1, 1)
    return tuple(shape)


# --------------------------------------------------------------------------
# bulk modulus


@dataclass(frozen=True, eq=False)
class BulkMap:
    k0: np.ndarray
    mask: np.ndarray
    imag_ratio: np.ndarray


STENCILS = ("7", "27")


def _kernels(stencil: str):
    """Unit-spacing Laplacian and gradient kernels on the 3x3x3 neighbourhood.

    ``"7"`` is the classical 7-point Laplacian with centred first differences;
    ``"27"`` takes both from the least-squares quadratic fit over all 27 points,
    which has the same O(h^2) accuracy and a much smaller noise gain.
    """
    if stencil == "7":
        lap = np.zeros((3, 3, 3))
        grads = []
        for d in range(3):
            e = [1, 1, 1]
            e[d] = 0
            lap[tuple(e)] = 1.0
            e[d] = 2
            lap[tuple(e)] = 1.0
            g = np.zeros((3, 3, 3))
            g[tuple(e)] = 0.5
            e[d] = 0
            g[tuple(e)] = -0.5
            grads.append(g)
        lap[1, 1, 1] = -6.0
        return lap, grads
    if stencil == "27":
        off = np.array(list(np.ndindex(3, 3, 3)), float) - 1.0
        x, y, z = off.T
        X = np.column_stack([np.ones(27), x, y, z, x * x / 2, y * y / 2, z * z / 2, x * y, x * z, y * z])
        P = np.linalg.pinv(X)
        return (P[4] + P[5] + P[6]).reshape(3, 3, 3), [P[1 + d].reshape(3, 3, 3) for d in range(3)]
    raise ValueError(f"stencil must be one of {STENCILS}")


def _apply(f, kernel):
    if np.iscomplexobj(f):
        return correlate(f.real, kernel, mode="nearest") + 1j * correlate(f.imag, kernel, mode="nearest")
    return correlate(f, kernel, mode="nearest")


def divergence_term(v, rho, h, origin=(0.0, 0.0, 0.0), theta=(0.0, 0.0, 1.0), carrier: float = 0.0,
                    stencil: str = "7"):
    """``div(rho^-1 grad v)`` by finite differences on a lattice (valid away from its faces).

    With ``carrier`` the field is written ``v = exp(i carrier theta.x) w`` and only the
    slowly varying ``w`` is differenced.
    """
    v = np.asarray(v, complex)
    a = 1.0 / np.asarray(rho, float)
    theta = np.asarray(theta, float)
    lap_k, grad_k = _kernels(stencil)
    axes = [origin[d] + h * np.arange(v.shape[d]) for d in range(3)]
    X = np.meshgrid(*axes, indexing="ij")
    phase = np.exp(1j * carrier * sum(theta[d] * X[d] for d in range(3)))
    w = v / phase
    grad_w = [_apply(w, g) / h for g in grad_k]
    grad_a = [_apply(a, g) / h for g in grad_k]
    lap = _apply(w, lap_k) / h ** 2 + 2j * carrier * sum(theta[d] * grad_w[d] for d in range(3)) \
        - carrier ** 2 * w
    adv = sum(grad_a[d] * (grad_w[d] + 1j * carrier * theta[d] * w) for d in range(3))
    return phase * (a * lap + adv)


def _stencil_ok(t, stencil: str = "7"):
    """Interior voxels whose whole stencil is trusted."""
    lap_k, grad_k = _kernels(stencil)
    foot = (lap_k != 0) | np.any([g != 0 for g in grad_k], axis=0)
    foot[1, 1, 1] = True
    ok = minimum_filter(t.astype(np.uint8), footprint=foot, mode="constant", cval=0).astype(bool)
    ok[[0, -1], :, :] = False
    ok[:, [0, -1], :] = False
    ok[:, :, [0, -1]] = False
    return ok


def recover_bulk(v, rho, omega: float, h: float, origin=(0.0, 0.0, 0.0), theta=(0.0, 0.0, 1.0),
                 carrier: float = 0.0, mask=None, stencil: str = "7") -> BulkMap:
    """``k0 = -omega^2 v / div(rho^-1 grad v)`` on the lattice interior.

    Parameters
    ----------
    v, rho : lattice arrays of the internal field and the density.
    omega : frequency of ``v``.
    h : lattice spacing.
    carrier : optional plane-wave carrier wavenumber along ``theta`` (see ``divergence_term``).
    mask : voxels where ``v`` is trusted.
    stencil : ``"7"`` (centred differences) or ``"27"`` (least-squares quadratic fit).

    Returns
    -------
    BulkMap with the real part of the estimate, the validity mask (amplitude above
    a fraction of the maximum, denominator above tolerance, interior, neighbours
    trusted) and ``|Im k| / |k|``.
    """
    v = np.asarray(v, complex)
    rho = np.asarray(rho, float)
    trusted = np.ones(v.shape, bool) if mask is None else np.asarray(mask, bool).reshape(v.shape)
    vs = np.where(trusted, v, 0)
    rs = np.where(trusted & np.isfinite(rho) & (rho > 0), rho, 1.0)
    den = divergence_term(vs, rs, h, origin, theta, carrier, stencil)
    m = _stencil_ok(trusted, stencil)
    amp = np.abs(v)
    m &= (amp > DEFAULTS.bulk_amplitude_fraction * np.max(np.where(trusted, amp, 0)))
    m &= np.abs(den) > DEFAULTS.bulk_denominator_tol * np.max(np.abs(den[m])) if np.any(m) else m
    if not np.any(m):
        raise DegenerateFieldError("every voxel of the bulk-modulus map was masked")
    k = np.full(v.shape, np.nan)
    ratio = np.full(v.shape, np.nan)
    est = -omega ** 2 * v[m] / den[m]
    k[m] = est.real
    ratio[m] = np.abs(est.imag) / np.abs(est)
    return BulkMap(k, m, ratio)


# --------------------------------------------------------------------------
# joint recovery of 1/rho0 and 1/k0 from several frequencies


@dataclass(frozen=True, eq=False)
class JointResult:
    a: np.ndarray
    b: np.ndarray
    residual: float

    @property
    def rho0(self):
        return 1.0 / self.a

    @property
    def k0(self):
        return 1.0 / self.b


def _div_rows(v, h):
    """Sparse matrix ``A`` with ``A @ a = div(a grad v)`` at interior lattice nodes."""
    shape = v.shape
    n = v.size
    idx = np.arange(n).reshape(shape)
    inner = idx[1:-1, 1:-1, 1:-1].ravel()
    rows, cols, vals = [], [], []
    vf = v.ravel()
    for r, i in enumerate(inner):
        diag = 0j
        for d in range(3):
            step = int(np.prod(shape[d + 1:]))
            for s in (step, -step):
                j = i + s
                dv = (vf[j] - vf[i]) / (2 * h * h)
                rows.append(r)
                cols.append(j)
                vals.append(dv)
                diag += dv
        rows.append(r)
        cols.append(i)
        vals.append(diag)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(inner), n)), inner


def _gradient_rows(shape):
    pairs = lattice_neighbors(shape)
    m = len(pairs)
    data = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((data, (np.tile(np.arange(m), 2), np.concatenate([pairs[:, 1], pairs[:, 0]]))),
                         shape=(m, int(np.prod(shape))))


def joint_coefficients(fields, omegas, h: float, tau: float | None = None,
                       a_scale: float = 1.0, b_scale: float = 1.0, anchor=None, a_known=None) -> JointResult:
    """Recover ``a = 1/rho0`` and ``b = 1/k0`` from fields at several frequencies.

    Solves ``div(a grad v_j) + omega_j^2 b v_j = 0`` at interior nodes in the
    least-squares sense with a Tikhonov penalty ``tau`` on the neighbour differences
    of ``a`` and ``b``.

    Parameters
    ----------
    fields : lattice arrays ``v_j``.
    omegas : their frequencies.
    a_scale, b_scale : typical magnitudes of ``a`` and ``b`` (unknowns are scaled by them).
    anchor : ``(mask, value)`` fixing ``a`` on the masked nodes; the equations are
        homogeneous, so some anchor is needed. Default: the interior corners and their inward
        x neighbours, at ``a_scale``.
    a_known : lattice array of ``a``; only ``b`` is recovered (one frequency suffices).
    """
    tau = DEFAULTS.tikhonov if tau is None else tau
    fields = [np.asarray(f, complex) for f in fields]
    omegas = np.asarray(omegas, float)
    shape = fields[0].shape
    n = fields[0].size
    if a_known is None:
        if len(fields) < 2:
            raise IdentifiabilityError("joint recovery needs at least two frequencies")
        V = np.stack([f.ravel() for f in fields], axis=1)
        sv = np.linalg.svd(V / np.linalg.norm(V, axis=0), compute_uv=False)
        if len(np.unique(omegas)) < 2 or sv[1] < 1e-8 * sv[0]:
            raise IdentifiabilityError("the fields are proportional: a and b are not identifiable")
    blocks, rhs = [], []
    for v, om in zip(fields, omegas):
        D, inner = _div_rows(v, h)
        B = sp.csr_matrix((om ** 2 * v.ravel()[inner], (np.arange(len(inner)), inner)), shape=(len(inner), n))
        scale = 1.0 / (np.max(np.abs(v)) * a_scale / h ** 2)
        if a_known is None:
            M = sp.hstack([D * a_scale, B * b_scale]) * scale
            r = np.zeros(len(inner), complex)
        else:
            M = B * b_scale * scale
            r = -(D @ np.asarray(a_known, float).ravel()) * scale
        blocks += [M.real, M.imag]
        rhs += [r.real, r.imag]
    A = sp.vstack(blocks).tocsr()
    y = np.concatenate(rhs)
    # only nodes touched by an interior row are unknowns: a on the interior and its
    # face neighbours, b on the interior; the rest is reported as nan
    used_b = np.zeros(shape, bool)
    used_b[1:-1, 1:-1, 1:-1] = True
    used_a = used_b.copy()
    for d in range(3):
        used_a |= np.roll(used_b, 1, axis=d) | np.roll(used_b, -1, axis=d)
    ia, ib = np.flatnonzero(used_a.ravel()), np.flatnonzero(used_b.ravel())
    Ga = _gradient_rows(shape)[:, ia]
    Gb = _gradient_rows(shape)[:, ib]
    Ga = Ga[np.asarray(abs(Ga).sum(axis=1)).ravel() == 2]
    Gb = Gb[np.asarray(abs(Gb).sum(axis=1)).ravel() == 2]
    if a_known is None:
        A = A[:, np.concatenate([ia, n + ib])]
        if anchor is None:
            am = np.zeros(shape, bool)
            # interior corners and their inward x neighbours: both lattice parities are
            # pinned, which removes the checkerboard mode the face averages cannot see
            for c in np.ndindex(2, 2, 2):
                corner = [1 if e == 0 else -2 for e in c]
                am[tuple(corner)] = True
                corner[0] += 1 if c[0] == 0 else -1
                am[tuple(corner)] = True
            anchor = (am, a_scale)
        am, aval = anchor
        am = np.asarray(am, bool)
        if np.any(am & ~used_a):
            raise ValueError("anchor nodes must be interior nodes or their neighbours")
        pos = np.searchsorted(ia, np.flatnonzero(am.ravel()))
        P = sp.csr_matrix((np.ones(len(pos)), (np.arange(len(pos)), pos)), shape=(len(pos), A.shape[1]))
        A = sp.vstack([A, P]).tocsr()
        y = np.concatenate([y, np.full(len(pos), aval / a_scale)])
        R = sp.block_diag([Ga, Gb])
    else:
        A = A[:, ib]
        R = Gb
    N = (A.T @ A + tau * (R.T @ R)).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MatrixRankWarning)
        x = spsolve(N, A.T @ y)
    if not np.all(np.isfinite(x)):
        raise IdentifiabilityError("the coefficient system is singular")
    res = float(np.linalg.norm(A @ x - y) / max(np.linalg.norm(y), 1e-300)) if np.any(y) else \
        float(np.linalg.norm(A @ x))
    a, b = np.full(n, np.nan), np.full(n, np.nan)
    b[ib] = x[-len(ib):] * b_scale
    if a_known is None:
        a[ia] = x[:len(ia)] * a_scale
    else:
        a = np.asarray(a_known, float).ravel().copy()
    return JointResult(a.reshape(shape), b.reshape(shape), res)


# --------------------------------------------------------------------------
# full reconstruction


@dataclass(frozen=True, eq=False)
class ReconstructionResult:
    """Per-scan-point reconstruction on the scan lattice (C order)."""

    z: np.ndarray
    shape: tuple
    omega_r2: np.ndarray
    goodness: np.ndarray
    rho0: np.ndarray
    v: np.ndarray
    v_mask: np.ndarray
    k0: np.ndarray
    k_mask: np.ndarray
    omega_eval: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(x):
            return [None if not np.isfinite(t) else float(t) for t in np.ravel(x)]
        return {
            "scan_points": [[float(c) for c in p] for p in self.z],
            "shape": list(self.shape),
            "omega_eval": self.omega_eval,
            "omega_r2": arr(self.omega_r2),
            "fit_goodness": arr(self.goodness),
            "rho0": arr(self.rho0),
            "v_re": arr(np.real(self.v)),
            "v_im": arr(np.imag(self.v)),
            "v_mask": [bool(m) for m in np.ravel(self.v_mask)],
            "k0": arr(self.k0),
            "k_mask": [bool(m) for m in np.ravel(self.k_mask)],
            "diagnostics": self.diagnostics,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "ReconstructionResult":
        with open(path) as fh:
            d = json.load(fh)

        def arr(key):
            return np.array([np.nan if t is None else t for t in d[key]], float)
        return cls(np.array(d["scan_points"], float).reshape(-1, 3), tuple(d["shape"]), arr("omega_r2"),
                   arr("fit_goodness"), arr("rho0"), arr("v_re") + 1j * arr("v_im"),
                   np.array(d["v_mask"], bool), arr("k0"), np.array(d["k_mask"], bool),
                   d["omega_eval"], d.get("diagnostics", {}))


def fit_all(ms: MeasurementSet, kind: str = WEIGHTED_POLE):
    """One resonance fit per scan point; failures are recorded, not raised."""
    fits, failures = [], {}
    for i, z in enumerate(ms.z):
        try:
            om, val = imaging_functional(ms, z)
            fits.append(fit_resonance(om, val, kind))
        except (NoResonanceError, FitError) as exc:
            fits.append(None)
            failures[i] = str(exc)
    return fits, failures


def invert(ms: MeasurementSet, regime: int | None = None, omega_eval: float | None = None,
           minnaert_constant: float | None = None, tau: float | None = None,
           field_mode: str = "single", carrier: bool = False, stencil: str = "7",
           joint_omegas=None) -> ReconstructionResult:
    """Run the imaging procedure on a measurement set.

    Regime 1 maps the fitted Minnaert frequencies to ``rho0`` and differentiates the
    recovered field for ``k0``.  Regime 2 reports the body-wave resonance per scan
    point and, with ``joint_omegas``, recovers both coefficients jointly from the
    fields at those frequencies.

    ``field_mode``, ``carrier`` and ``stencil`` select the internal-field estimator
    and the differencing of ``recover_bulk``; the defaults are the plain single-frequency
    residue and 7-point differences.
    """
    meta = ms.meta
    if regime is None:
        regime = 1 if meta["regime"] == MINNAERT else 2
    if minnaert_constant is None:
        minnaert_constant = float(meta.get("minnaert_constant", 8 * math.pi))
    fits, failures = fit_all(ms)
    shape = _scan_shape(ms)
    n = len(ms.z)
    w2 = np.array([f.omega_r2 if f else np.nan for f in fits])
    good = np.array([f.goodness if f else 0.0 for f in fits])
    fm = recover_internal_field(ms, fits, omega_eval, field_mode)
    spacing = (meta.get("scan") or {}).get("spacing")
    lattice = len(shape) == 3 and min(shape) >= 3 and spacing
    theta = np.asarray(meta["theta"], float)
    kf = math.sqrt(meta["exterior_rho"] / meta["exterior_k"])
    diag = {"fit_failures": {str(k): v for k, v in failures.items()}, "regime": regime,
            "field_mode": field_mode, "carrier": bool(carrier), "stencil": stencil, "minnaert_constant": minnaert_constant,
            "scenario_hash": meta.get("scenario_hash"), "farfield_normalization": meta.get("farfield_normalization")}
    k0 = np.full(n, np.nan)
    k_mask = np.zeros(n, bool)
    if regime == 1:
        rho = np.array([recover_density(f, meta["k_bar"], meta["mu_shape"], minnaert_constant)
                        if f and f.goodness > 0 else np.nan for f in fits])
        if lattice:
            origin = ms.z[0]
            car = kf * fm.omega_eval if carrier else 0.0
            try:
                bm = recover_bulk(fm.v.reshape(shape), rho.reshape(shape), fm.omega_eval, spacing,
                                  origin, theta, car, fm.mask.reshape(shape) & np.isfinite(rho).reshape(shape),
                                  stencil)
                k0, k_mask = bm.k0.ravel(), bm.mask.ravel()
            except DegenerateFieldError as exc:
                diag["bulk"] = str(exc)
    else:
        rho = np.full(n, np.nan)
        wr = np.sqrt(w2[good > 0])
        diag["omega_res_median"] = float(np.median(wr)) if len(wr) else None
        if joint_omegas is not None and lattice:
            maps = [recover_internal_field(ms, fits, w, "multi") for w in joint_omegas]
            mask = np.logical_and.reduce([m.mask for m in maps])
            if np.all(mask):
                jr = joint_coefficients([m.v.reshape(shape) for m in maps], [m.omega_eval for m in maps],
                                        spacing, tau, 1 / meta["exterior_rho"], 1 / meta["exterior_k"])
                rho, k0 = jr.rho0.ravel(), jr.k0.ravel()
                k_mask = np.isfinite(k0)
                diag["joint_residual"] = jr.residual
    return ReconstructionResult(ms.z.copy(), shape, w2, good, rho, fm.v, fm.mask, k0, k_mask,
                                fm.omega_eval, diag)


# --------------------------------------------------------------------------
# error metrics


def _rel(rec, tru, mask):
    rec, tru = np.asarray(rec), np.asarray(tru)
    m = np.asarray(mask, bool) & np.isfinite(rec) & np.isfinite(tru)
    if not np.any(m):
        return {"linf": None, "l2": None, "count": 0}
    d = np.abs(rec[m] - tru[m])
    return {"linf": float(np.max(d / np.abs(tru[m]))),
            "l2": float(np.linalg.norm(d) / np.linalg.norm(tru[m])), "count": int(m.sum())}


def error_metrics(recon: ReconstructionResult, truth: dict) -> dict:
    """Masked relative L-infinity and L2 errors of ``rho0``, ``k0`` and ``|v|``.

    ``truth`` maps ``"rho0"``, ``"k0"``, ``"v"`` to arrays over the scan points.
    """
    out = {}
    if "rho0" in truth:
        out["rho0"] = _rel(recon.rho0, truth["rho0"], np.isfinite(recon.rho0))
    if "k0" in truth:
        out["k0"] = _rel(recon.k0, truth["k0"], recon.k_mask)
    if "v" in truth:
        out["abs_v"] = _rel(np.abs(recon.v), np.abs(truth["v"]), recon.v_mask)
    return out
