"""Background field ``v``, its far field and the background Green function.

The heterogeneous problem ``div(rho0^{-1} grad v) + omega^2 k0^{-1} v = 0`` is put in
Schrodinger form by ``v = sqrt(rho0 / rho_ext) psi``:

    Delta psi + kappa_ext^2 psi = -m psi,
    m = kappa0^2 - kappa_ext^2 - sqrt(rho0) Delta(rho0^{-1/2}),

and solved through the volume integral equation ``psi = psi_inc + K[m psi]`` with
``K`` the convolution by ``exp(i kappa r) / (4 pi r)`` on the medium grid.  The
discrete operator ``K`` is symmetric, which makes reciprocity hold exactly for the
discrete solutions.  Far fields use ``lim |x| exp(-i kappa |x|) u^s(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy.sparse.linalg import LinearOperator, gmres

from .defaults import DEFAULTS
from .errors import DomainError, SolverError
from .media import BackgroundMedium, Grid


def green_homogeneous(rho: float, k: float, omega: float, x, z) -> complex | np.ndarray:
    """``rho exp(i kappa |x-z|) / (4 pi |x-z|)`` with ``kappa = omega sqrt(rho/k)``."""
    x, z = np.asarray(x, float), np.asarray(z, float)
    r = np.linalg.norm(x - z, axis=-1)
    if np.any(r == 0):
        raise DomainError("Green function evaluated at its source point")
    kappa = omega * math.sqrt(rho / k)
    return rho * np.exp(1j * kappa * r) / (4 * math.pi * r)


def cube_self_integral(h: float, kappa: float) -> complex:
    """``int_cell exp(i kappa r)/(4 pi r)`` over a cube of side ``h`` about its centre.

    Static part exact; the dynamic remainder is taken from the ball of equal volume.
    """
    from .spectrum import CUBE_SELF
    static = CUBE_SELF * h ** 2 / (4 * math.pi)
    if kappa == 0:
        return complex(static)
    a = h * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)
    t = kappa * a
    # int_0^a (exp(i kappa r) - 1) r dr = a^2 sum_{n>=1} (i t)^n / (n! (n+2))
    if t < 0.5:
        dyn, term = 0j, 1.0 + 0j
        for n in range(1, 30):
            term *= 1j * t / n
            dyn += term / (n + 2)
    else:
        dyn = (np.exp(1j * t) * (1.0 - 1j * t) - 1.0) / t ** 2 - 0.5
    return complex(static + a ** 2 * dyn)


@dataclass(eq=False)
class VolumeOperator:
    """FFT convolution with ``exp(i kappa r)/(4 pi r) h^3`` on a node grid."""

    grid: Grid
    kappa: float

    @cached_property
    def _plan(self):
        shape = self.grid.shape
        pad = tuple(sfft.next_fast_len(2 * s - 1) for s in shape)
        offs = []
        for s, p in zip(shape, pad):
            o = np.zeros(p)
            o[:s] = np.arange(s)
            o[p - s + 1:] = np.arange(-s + 1, 0)
            offs.append(o)
        r = np.sqrt(sum(np.meshgrid(*(o ** 2 for o in offs), indexing="ij"))) * self.grid.h
        with np.errstate(divide="ignore", invalid="ignore"):
            ker = np.exp(1j * self.kappa * r) / (4 * math.pi * r) * self.grid.h ** 3
        ker[0, 0, 0] = cube_self_integral(self.grid.h, self.kappa)
        # the kernel is only nonzero between valid offsets; the middle band stays empty
        for d, (s, p) in enumerate(zip(shape, pad)):
            sl = [slice(None)] * 3
            sl[d] = slice(s, p - s + 1)
            ker[tuple(sl)] = 0.0
        return pad, sfft.fftn(ker)

    def __call__(self, f: np.ndarray) -> np.ndarray:
        pad, khat = self._plan
        shape = self.grid.shape
        out = sfft.ifftn(sfft.fftn(f.reshape(shape), s=pad) * khat)
        return out[: shape[0], : shape[1], : shape[2]]

    def column(self, j: tuple) -> np.ndarray:
        """``K e_j``: the field of a unit point source at node ``j`` (self cell integrated)."""
        nodes = self.grid.nodes()
        r = np.linalg.norm(nodes - nodes[j], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            col = np.exp(1j * self.kappa * r) / (4 * math.pi * r) * self.grid.h ** 3
        col[j] = cube_self_integral(self.grid.h, self.kappa)
        return col


def _laplacian(f: np.ndarray, h: float) -> np.ndarray:
    """7-point Laplacian; the outermost layer reuses its neighbour (fields are flat there)."""
    out = np.zeros_like(f)
    c = f[1:-1, 1:-1, 1:-1]
    out[1:-1, 1:-1, 1:-1] = (f[2:, 1:-1, 1:-1] + f[:-2, 1:-1, 1:-1] + f[1:-1, 2:, 1:-1]
                             + f[1:-1, :-2, 1:-1] + f[1:-1, 1:-1, 2:] + f[1:-1, 1:-1, :-2]
                             - 6 * c) / h ** 2
    return out


def schrodinger_potential(medium: BackgroundMedium, omega: float) -> np.ndarray:
    """Contrast ``m`` of the Schrodinger form on the medium grid."""
    kap2 = omega ** 2 * medium.rho0 / medium.k0
    kext2 = omega ** 2 * medium.exterior_rho / medium.exterior_k
    s = medium.rho0 ** -0.5
    return kap2 - kext2 - _laplacian(s, medium.grid.h) / s


@dataclass(frozen=True, eq=False)
class FarFieldFn:
    """Far field ``(1/4pi) [c0 exp(-i kappa xhat.z0) + sum exp(-i kappa xhat.y) s(y)]``."""

    kappa: float
    nodes: np.ndarray | None
    source: np.ndarray | None
    point: tuple | None = None  # (amplitude, position) of an explicit point source

    def __call__(self, xhat) -> complex:
        xhat = np.asarray(xhat, float)
        val = 0.0j
        if self.source is not None:
            val += np.sum(np.exp(-1j * self.kappa * self.nodes @ xhat) * self.source)
        if self.point is not None:
            amp, pos = self.point
            val += amp * np.exp(-1j * self.kappa * np.asarray(pos) @ xhat)
        return complex(val / (4 * math.pi))


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Total field on the medium grid with the data needed to evaluate it anywhere."""

    grid: Grid
    values: np.ndarray
    omega: float
    theta: np.ndarray | None
    kappa: float
    scale: np.ndarray  # v = scale * psi
    source: np.ndarray | None  # m psi h^3 per node (None for a homogeneous medium)
    incident: object
    residual: float = 0.0
    iterations: int = 0

    def node_index(self, x) -> tuple | None:
        x = np.asarray(x, float)
        t = (x - self.grid.lo) / self.grid.h
        i = np.rint(t)
        if np.all(np.abs(t - i) < 1e-9) and np.all(i >= 0) and np.all(i < np.array(self.grid.shape)):
            return tuple(int(k) for k in i)
        return None

    def at(self, x) -> complex:
        """Value at a node exactly, by trilinear interpolation inside the grid, by the
        integral representation outside."""
        idx = self.node_index(x)
        if idx is not None:
            return complex(self.values[idx])
        x = np.asarray(x, float)
        if self.grid.contains(x)[0]:
            from scipy.interpolate import RegularGridInterpolator
            f = RegularGridInterpolator(self.grid.axes(), self.values)
            return complex(f(x[None])[0])
        return self.evaluate(x)

    def evaluate(self, x) -> complex:
        """Integral representation (accurate away from the grid nodes; outside the grid
        the scale factor is the exterior one)."""
        x = np.asarray(x, float)
        val = complex(self.incident(x))
        if self.source is not None:
            r = np.linalg.norm(self.grid.nodes().reshape(-1, 3) - x, axis=1)
            val += np.sum(np.exp(1j * self.kappa * r) / (4 * math.pi * r) * self.source.ravel())
        return val * float(self.scale_outside)

    @property
    def scale_outside(self):
        return self.scale.flat[0]


def _solve(op: VolumeOperator, m: np.ndarray, rhs: np.ndarray):
    n = rhs.size
    mflat = m.ravel()

    def mv(x):
        return x - op(mflat * x).ravel()
    A = LinearOperator((n, n), matvec=mv, dtype=complex)
    restart = DEFAULTS.ls_restart
    count = [0]

    def cb(_):
        count[0] += 1
    sol, info = gmres(A, rhs.ravel(), rtol=DEFAULTS.ls_rtol, restart=restart,
                      maxiter=max(1, DEFAULTS.ls_maxiter // restart), callback=cb,
                      callback_type="pr_norm")
    res = float(np.linalg.norm(mv(sol) - rhs.ravel()) / np.linalg.norm(rhs))
    if info != 0 or res > 10 * DEFAULTS.ls_rtol:
        raise SolverError(f"Lippmann-Schwinger solve stalled (relative residual {res:.2e})",
                          residual=res)
    return sol.reshape(rhs.shape), res, count[0]


def solve_background(medium: BackgroundMedium, theta, omega: float):
    """Total field for the plane wave ``exp(i kappa_ext theta.x)`` and its far field.

    Returns ``(FieldGrid, FarFieldFn)``.  A homogeneous medium short-circuits to the
    plane wave itself and a zero far field.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    theta = np.asarray(theta, float)
    theta = theta / np.linalg.norm(theta)
    kappa = omega * medium.exterior_wavenumber_factor
    grid = medium.grid
    nodes = grid.nodes()

    def incident(x, _t=theta, _k=kappa):
        return np.exp(1j * _k * (np.asarray(x) @ _t))

    vin = incident(nodes)
    if medium.is_homogeneous:
        ones = np.ones(grid.shape)
        return (FieldGrid(grid, vin, omega, theta, kappa, ones, None, incident),
                FarFieldFn(kappa, None, None))
    m = schrodinger_potential(medium, omega)
    op = VolumeOperator(grid, kappa)
    psi, res, its = _solve(op, m, vin)
    scale = np.sqrt(medium.rho0 / medium.exterior_rho)
    src = m * psi * grid.h ** 3
    flat_nodes = nodes.reshape(-1, 3)
    return (FieldGrid(grid, scale * psi, omega, theta, kappa, scale, src, incident, res, its),
            FarFieldFn(kappa, flat_nodes, src.ravel()))


def green_heterogeneous(medium: BackgroundMedium, omega: float, z):
    """Green function ``G(., z)`` of the background (``z`` must be a grid node).

    ``G(x, z) = sqrt(rho0(x) rho0(z)) psi(x)`` with ``psi = K e_z + K[m psi]``; the
    source column integrates the kernel exactly over the source cell.
    """
    z = np.asarray(z, float)
    grid = medium.grid
    if not grid.contains(z, margin=grid.h)[0]:
        raise DomainError("source point must lie strictly inside the medium grid")
    t = (z - grid.lo) / grid.h
    j = tuple(int(k) for k in np.rint(t))
    if np.max(np.abs(t - np.rint(t))) > 1e-9:
        raise DomainError("source point must be a grid node")
    kappa = omega * medium.exterior_wavenumber_factor
    op = VolumeOperator(grid, kappa)
    rho_z = float(medium.rho0[j])
    col = op.column(j) / grid.h ** 3  # point-source field, cell-averaged at the source

    def incident(x, _z=z, _k=kappa):
        r = np.linalg.norm(np.asarray(x) - _z, axis=-1)
        return np.exp(1j * _k * r) / (4 * math.pi * r)

    scale = np.sqrt(medium.rho0 * rho_z)
    if medium.is_homogeneous:
        g = FieldGrid(grid, scale * col, omega, None, kappa, scale, None, incident)
        return g, FarFieldFn(kappa, None, None, (float(np.sqrt(medium.exterior_rho * rho_z)), z))
    m = schrodinger_potential(medium, omega)
    psi, res, its = _solve(op, m, col)
    src = m * psi * grid.h ** 3
    ext = math.sqrt(medium.exterior_rho * rho_z)
    g = FieldGrid(grid, scale * psi, omega, None, kappa, scale, src, incident, res, its)
    ff = FarFieldFn(kappa, grid.nodes().reshape(-1, 3), ext * src.ravel(), (ext, z))
    return g, ff
