"""Independent full-wave references.

* ``SphereScatterer``: partial-wave series for a penetrable ball in a homogeneous
  background (the ground truth of the acceptance comparisons).
* Layer potentials on flat triangle panels with analytic static integrals.
* ``coupled_solve``: collocation of the coupled volume/surface integral system for
  the field inside a bubble and its normal derivative on the boundary.

All kernels use ``G(x) = rho0 exp(i kappa |x|) / (4 pi |x|)`` and far fields are
``lim |x| exp(-i kappa |x|) u^s(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from .defaults import DEFAULTS
from .errors import NumericalError
from .geometry import ShapeMesh, Voxelization, _solid_angles, triangle_rule, winding_number

# --------------------------------------------------------------------------
# partial-wave series


@dataclass(frozen=True)
class SphereScatterer:
    """Ball of radius ``radius`` (centre ``center``) with interior ``(rho1, k1)``."""

    radius: float
    rho1: float
    k1: float
    rho0: float
    k0: float
    center: tuple = (0.0, 0.0, 0.0)
    extra_modes: int | None = None

    @classmethod
    def from_bubble(cls, bubble, rho0: float, k0: float) -> "SphereScatterer":
        """The ball ``z + eps * unit ball`` with the bubble's physical contrasts."""
        return cls(bubble.eps, bubble.rho1, bubble.k1, rho0, k0, tuple(bubble.center))

    def coefficients(self, omega: float):
        """Scattering coefficients ``A_n`` (with ``n = 0..L``) and the exterior wavenumber."""
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        k_out = omega * math.sqrt(self.rho0 / self.k0)
        k_in = omega * math.sqrt(self.rho1 / self.k1)
        extra = DEFAULTS.series_extra_modes if self.extra_modes is None else self.extra_modes
        lmax = int(math.ceil(k_out * self.radius)) + extra
        while True:
            n = np.arange(lmax + 1)
            x0, x1 = k_out * self.radius, k_in * self.radius
            j, jp = spherical_jn(n, x0), spherical_jn(n, x0, True)
            y, yp = spherical_yn(n, x0), spherical_yn(n, x0, True)
            j1, j1p = spherical_jn(n, x1), spherical_jn(n, x1, True)
            a, b = k_out / self.rho0, k_in / self.rho1
            with np.errstate(all="ignore"):
                num = a * jp * j1 - b * j * j1p
                den = a * (jp + 1j * yp) * j1 - b * (j + 1j * y) * j1p
                coef = -num / den
            # high modes underflow to exactly zero; anything else non-finite is a failure
            coef[~np.isfinite(den)] = 0.0
            bad = np.flatnonzero(~np.isfinite(coef) | (den == 0))
            if len(bad):
                raise NumericalError(f"mode match is singular at mode {int(bad[0])}")
            terms = (2 * n + 1) * np.abs(coef)
            if terms[-1] <= DEFAULTS.series_tail_rtol * max(terms.sum(), 1e-300) or lmax > 400:
                return coef, k_out
            lmax += 10

    def farfield(self, omega: float, theta, xhat) -> complex:
        """Far-field pattern for incidence ``exp(i kappa theta.x)`` observed in ``xhat``."""
        coef, k_out = self.coefficients(omega)
        theta, xhat = np.asarray(theta, float), np.asarray(xhat, float)
        n = np.arange(len(coef))
        val = (-1j / k_out) * np.sum((2 * n + 1) * coef * eval_legendre(n, float(xhat @ theta)))
        c = np.asarray(self.center, float)
        return complex(val * np.exp(1j * k_out * (theta - xhat) @ c))


def sphere_exact_farfield(sph: SphereScatterer, omega: float, theta, xhat) -> complex:
    return sph.farfield(omega, theta, xhat)


# --------------------------------------------------------------------------
# analytic integrals over flat triangles


def _edge_terms(x, corners, normals):
    """Per-edge quantities of the static triangle potentials.

    Returns ``d`` (height over the plane, shape (m, n)), the in-plane outward edge
    normals ``mvec`` (n, 3, 3), the edge distances ``p0`` (m, n, 3) and the
    logarithmic edge integrals ``f`` (m, n, 3).
    """
    x = x[:, None, :]
    c0 = corners[None, :, 0, :]
    d = np.einsum("mnk,nk->mn", x - c0, normals)
    a = corners
    b = np.roll(corners, -1, axis=1)
    edge = b - a
    length = np.linalg.norm(edge, axis=2)
    s = edge / length[..., None]
    mvec = np.cross(s, normals[:, None, :])
    ra = a[None] - x[:, :, None, :]
    rb = b[None] - x[:, :, None, :]
    lm = np.einsum("mnek,nek->mne", ra, s)
    lp = np.einsum("mnek,nek->mne", rb, s)
    p0 = np.einsum("mnek,nek->mne", ra, mvec)
    rm = np.linalg.norm(ra, axis=3)
    rp = np.linalg.norm(rb, axis=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        fwd = np.log((rp + lp) / (rm + lm))
        bwd = np.log((rm - lm) / (rp - lp))
    f = np.where(lp + lm >= 0, fwd, bwd)
    # targets on an edge line: the term is multiplied by p0 = 0 (or the gradient is p.v.)
    f = np.where(np.isfinite(f), f, 0.0)
    return d, mvec, p0, f


def _signed_solid(x, corners):
    """``int_T (y-x).nu / |y-x|^3`` for all target/triangle pairs, shape (m, n)."""
    out = np.empty((len(x), len(corners)))
    for i, p in enumerate(x):
        out[i] = _solid_angles(corners - p)
    return out


def static_single(x, corners, normals):
    """``int_T 1/|x-y| dsigma(y)`` for all target/triangle pairs (closed form)."""
    d, _, p0, f = _edge_terms(x, corners, normals)
    omega = _signed_solid(x, corners)
    return np.sum(p0 * f, axis=2) - np.abs(d) * np.abs(omega)


def static_single_grad(x, corners, normals):
    """``grad_x int_T 1/|x-y| dsigma(y)``, shape (m, n, 3); on-panel normal part is the p.v."""
    d, mvec, _, f = _edge_terms(x, corners, normals)
    omega = _signed_solid(x, corners)
    return omega[..., None] * normals[None] - np.einsum("mne,nek->mnk", f, mvec)


# --------------------------------------------------------------------------
# panel discretization


@dataclass(frozen=True, eq=False)
class Panels:
    """Flat triangle panels with one collocation point (the centroid) each."""

    mesh: ShapeMesh

    @property
    def n(self) -> int:
        return self.mesh.n_triangles

    @property
    def points(self):
        return self.mesh.centroids

    @property
    def normals(self):
        return self.mesh.normals

    @property
    def areas(self):
        return self.mesh.areas

    @cached_property
    def _rule(self):
        bary, w = triangle_rule(7)
        pts = np.einsum("qk,tkd->tqd", bary, self.mesh.corners)
        return pts, self.areas[:, None] * w[None, :]

    def solid(self, x=None):
        if x is not None:
            return _signed_solid(x, self.mesh.corners)
        out = _signed_solid(self.points, self.mesh.corners)
        np.fill_diagonal(out, 0.0)  # a flat panel subtends no angle at its own centroid
        return out

    def static_single(self, x=None):
        x = self.points if x is None else x
        return static_single(x, self.mesh.corners, self.normals)

    def _smooth(self, x, kernel):
        """Panel integrals of a smooth kernel ``kernel(x - y)`` by the 7-point rule."""
        pts, w = self._rule
        out = 0.0
        for q in range(pts.shape[1]):
            out = out + kernel(x[:, None, :] - pts[None, :, q, :]) * w[None, :, q]
        return out


def _dyn(r, kappa):
    """``(exp(i kappa r) - 1) / r`` with its limit at 0."""
    with np.errstate(invalid="ignore", divide="ignore"):
        v = np.expm1(1j * kappa * r) / r
    return np.where(r > 0, v, 1j * kappa)


def _dyn_grad_factor(r, kappa):
    """``d/dr [(exp(i kappa r) - 1)/r] / r`` (bounded as ``r -> 0``)."""
    with np.errstate(invalid="ignore", divide="ignore"):
        v = ((1j * kappa * r - 1.0) * np.exp(1j * kappa * r) + 1.0) / r ** 3
    return np.where(r > 1e-8 / max(kappa, 1e-300), v, -0.5 * kappa ** 2 + 0j)


def single_layer_matrix(panels: Panels, rho0: float, kappa: float, x=None) -> np.ndarray:
    """``S[i, j] = int_{T_j} G(x_i - y)``; targets default to the centroids."""
    x = panels.points if x is None else x
    mat = panels.static_single(x).astype(complex)
    if kappa != 0:
        mat += panels._smooth(x, lambda r: _dyn(np.linalg.norm(r, axis=-1), kappa))
    return rho0 * mat / (4 * math.pi)


def double_layer_matrix(panels: Panels, rho0: float, kappa: float) -> np.ndarray:
    """``K[i, j] = int_{T_j} d G(x_i - y) / d nu(y)`` at the centroids."""
    mat = (-panels.solid()).astype(complex)
    if kappa != 0:
        nrm = panels.normals

        def ker(r):
            # d/dnu(y) of (e^{ikr}-1)/r with r = x - y: -(x-y).nu(y) * g'(r)/r
            dist = np.linalg.norm(r, axis=-1)
            return -np.einsum("mnk,nk->mn", r, nrm) * _dyn_grad_factor(dist, kappa)
        dyn = panels._smooth(panels.points, ker)
        np.fill_diagonal(dyn, 0.0)  # flat panel: (x-y).nu(y) = 0 on itself
        mat += dyn
    return rho0 * mat / (4 * math.pi)


def adjoint_double_layer_matrix(panels: Panels, rho0: float, kappa: float) -> np.ndarray:
    """``K*[i, j] = p.v. int_{T_j} d G(x_i - y) / d nu(x_i)``.

    The static part is the area-weighted transpose of the solid-angle double layer,
    so ``int K*[phi] = -rho0/2 int phi`` holds exactly for the discrete operator.
    """
    a = panels.areas
    k0 = -panels.solid() / (4 * math.pi)
    mat = (k0.T * a[None, :] / a[:, None]).astype(complex)
    if kappa != 0:
        nrm = panels.normals

        def ker(r):
            dist = np.linalg.norm(r, axis=-1)
            return np.einsum("mnk,mk->mn", r, nrm) * _dyn_grad_factor(dist, kappa)
        mat += panels._smooth(panels.points, ker) / (4 * math.pi)
    return rho0 * mat


def layer_apply(mesh: ShapeMesh, omega: float, kind: str, density, rho0: float = 1.0,
                k0: float = 1.0) -> np.ndarray:
    """Apply a layer operator to a piecewise-constant panel density; values at centroids.

    ``kind`` is ``"single"``, ``"double"`` or ``"double-adjoint"``.
    """
    panels = Panels(mesh)
    kappa = omega * math.sqrt(rho0 / k0)
    density = np.broadcast_to(np.asarray(density), (panels.n,))
    if kind == "single":
        mat = single_layer_matrix(panels, rho0, kappa)
    elif kind == "double":
        mat = double_layer_matrix(panels, rho0, kappa)
    elif kind == "double-adjoint":
        mat = adjoint_double_layer_matrix(panels, rho0, kappa)
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    return mat @ density


def j0_apply(mesh: ShapeMesh, rho_fn, density) -> np.ndarray:
    """Static double layer with the density weight ``1/rho0(y)``.

    Near the diagonal the variable-coefficient Green function is replaced by its
    principal part ``sqrt(rho0(x) rho0(y)) / (4 pi |x-y|)``.
    """
    panels = Panels(mesh)
    rho = np.asarray(rho_fn(panels.points), float)
    density = np.broadcast_to(np.asarray(density), (panels.n,))
    k0 = -panels.solid() / (4 * math.pi)
    weight = np.sqrt(rho[:, None] / rho[None, :])
    return (k0 * weight) @ density


# --------------------------------------------------------------------------
# coupled volume/surface system


@dataclass(frozen=True, eq=False)
class CoupledSolution:
    u: np.ndarray
    dnu: np.ndarray
    vox: Voxelization
    panels: Panels
    rho0: float
    kappa: float
    alpha: float
    gamma: float
    omega: float
    rho1: float
    k1: float
    condition: float

    def volume_integral(self) -> complex:
        return complex(np.sum(self.u * self.vox.weights) * self.vox.h ** 3)

    def flux(self) -> complex:
        return complex(np.sum(self.dnu * self.panels.areas))

    def divergence_gap(self) -> float:
        """Relative mismatch of ``int_D u = -(k1/(omega^2 rho1)) int_dD d_nu u``."""
        lhs = self.volume_integral()
        rhs = -self.k1 / (self.omega ** 2 * self.rho1) * self.flux()
        return abs(lhs - rhs) / abs(lhs)

    def farfield(self, xhat) -> complex:
        xhat = np.asarray(xhat, float)
        vol = np.sum(np.exp(-1j * self.kappa * self.vox.centers @ xhat) * self.u
                     * self.vox.weights) * self.vox.h ** 3
        surf = np.sum(np.exp(-1j * self.kappa * self.panels.points @ xhat) * self.dnu
                      * self.panels.areas)
        return complex(self.rho0 / (4 * math.pi)
                       * (self.gamma * self.omega ** 2 * vol - self.alpha * surf))


def _inside(mesh: ShapeMesh, pts):
    if mesh.sphere is not None:
        c, rad = np.asarray(mesh.sphere[0], float), float(mesh.sphere[1])
        return np.linalg.norm(pts - c, axis=1) < rad
    return winding_number(mesh, pts) > 0.5


def _volume_matrix(vox: Voxelization, rho0: float, kappa: float) -> np.ndarray:
    from .spectrum import CUBE_SELF
    c = vox.centers
    r = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.exp(1j * kappa * r) / r
    np.fill_diagonal(g, CUBE_SELF / vox.h + 1j * kappa)
    return rho0 / (4 * math.pi) * g * vox.weights[None, :] * vox.h ** 3


def _volume_normal_grad(vox: Voxelization, mesh: ShapeMesh, x, normals, rho0, kappa, sub=6):
    """``M[i, q] = int_{cell q cap D} nu_i . grad_x G(x_i - y) dy``."""
    c = vox.centers
    h = vox.h

    def kern(r):
        dist = np.linalg.norm(r, axis=-1)
        # grad_x [e^{ikr}/r] = (x-y) (ikr - 1) e^{ikr} / r^3
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (1j * kappa * dist - 1.0) * np.exp(1j * kappa * dist) / dist ** 3
        return np.where(dist > 0, f, 0.0)

    diff = x[:, None, :] - c[None, :, :]
    out = np.einsum("mqk,mk->mq", diff, normals) * kern(diff) * vox.weights[None, :] * h ** 3
    off = ((np.arange(sub) + 0.5) / sub - 0.5) * h
    sub_pts = np.stack(np.meshgrid(off, off, off, indexing="ij"), -1).reshape(-1, 3)
    near = np.argwhere(np.linalg.norm(diff, axis=2) < 2.0 * h)
    cells = np.unique(near[:, 1])
    flags = _inside(mesh, (c[cells][:, None, :] + sub_pts[None]).reshape(-1, 3))
    flags = flags.reshape(len(cells), -1)
    slot = np.searchsorted(cells, near[:, 1])
    for start in range(0, len(near), 4096):
        i, q = near[start:start + 4096].T
        r = x[i][:, None, :] - (c[q][:, None, :] + sub_pts[None])
        val = np.einsum("pak,pk->pa", r, normals[i]) * kern(r) * flags[slot[start:start + 4096]]
        out[i, q] = val.sum(axis=1) * (h / sub) ** 3
    return rho0 / (4 * math.pi) * out


def coupled_solve(mesh: ShapeMesh, vox: Voxelization, rho0: float, k0: float, rho1: float,
                  k1: float, omega: float, theta, max_unknowns: int = 3000,
                  max_condition: float = 1e12) -> CoupledSolution:
    """Solve for ``u`` on the voxels of ``D`` and ``d_nu u`` on the panels of ``dD``.

    ``mesh`` and ``vox`` describe the physical bubble ``D`` (already scaled and
    placed); the background is homogeneous ``(rho0, k0)``.

    Raises
    ------
    NumericalError
        When the block system is numerically singular (condition number above
        ``max_condition``), e.g. exactly at a resonance.
    """
    panels = Panels(mesh)
    nv, ns = vox.n, panels.n
    if nv + ns > max_unknowns:
        raise ValueError(f"{nv + ns} unknowns exceeds the cap of {max_unknowns}")
    alpha = 1.0 / rho1 - 1.0 / rho0
    beta = 1.0 / k1 - 1.0 / k0
    gamma = beta - alpha * rho1 / k1
    kappa = omega * math.sqrt(rho0 / k0)
    theta = np.asarray(theta, float)
    xv, xs, nrm = vox.centers, panels.points, panels.normals
    g2 = gamma * omega ** 2

    blk = np.zeros((nv + ns, nv + ns), complex)
    blk[:nv, :nv] = np.eye(nv) - g2 * _volume_matrix(vox, rho0, kappa)
    blk[:nv, nv:] = alpha * single_layer_matrix(panels, rho0, kappa, x=xv)
    if g2 != 0:
        blk[nv:, :nv] = -g2 * _volume_normal_grad(vox, mesh, xs, nrm, rho0, kappa)
    blk[nv:, nv:] = np.eye(ns) * (1.0 + alpha * rho0 / 2.0)
    if alpha != 0:
        blk[nv:, nv:] += alpha * adjoint_double_layer_matrix(panels, rho0, kappa)
    rhs = np.concatenate([np.exp(1j * kappa * xv @ theta),
                          1j * kappa * (nrm @ theta) * np.exp(1j * kappa * xs @ theta)])
    lu, piv = linalg.lu_factor(blk)
    cond = 1.0 / max(linalg.lapack.zgecon(lu, linalg.norm(blk, 1))[0], 1e-300)
    if cond > max_condition:
        raise NumericalError(f"coupled system is singular (condition {cond:.3e})")
    sol = linalg.lu_solve((lu, piv), rhs)
    return CoupledSolution(sol[:nv], sol[nv:], vox, panels, rho0, kappa, alpha, gamma, omega,
                           rho1, k1, cond)
