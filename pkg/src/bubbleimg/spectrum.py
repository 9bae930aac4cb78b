"""Newtonian potential on a voxelized shape: assembly, eigenpairs, body-wave resonances, W-field.

The kernel is ``1/(4 pi |x-y|)`` (no density factor).  Discretization is
collocation at cell centres with midpoint quadrature off the diagonal and the
exact self-integral of a cube on it.  Everything is held in the symmetric form

    S = D^{1/2} K D^{1/2} h^3,    D = diag(inside fractions),

whose spectrum equals that of the Nystrom matrix ``A = K D h^3``.  Products with
``S`` use a zero-padded FFT convolution, so the dense matrix is only built
when it is actually needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh, gmres
from scipy.spatial.distance import cdist

from .defaults import DEFAULTS
from .errors import NumericalError, PreconditionError, ResolutionError, ResonanceProximityError, SolverError
from .geometry import Voxelization

# int over the unit cube of 1/|y| with the singularity at the centre
CUBE_SELF = 6.0 * math.log((1.0 + math.sqrt(3.0)) / math.sqrt(2.0)) - math.pi / 2.0


@dataclass(eq=False)
class NewtonianDisc:
    """Discretized Newtonian operator on a voxelization."""

    vox: Voxelization
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.vox.n

    @property
    def h(self) -> float:
        return self.vox.h

    @cached_property
    def sqrt_w(self) -> np.ndarray:
        return np.sqrt(self.vox.weights)

    @cached_property
    def self_term(self) -> float:
        """Kernel value used on the diagonal: the cube integral divided by the cell volume."""
        return CUBE_SELF / (4.0 * math.pi * self.h)

    @cached_property
    def _fft(self):
        pad = tuple(2 * s for s in self.vox.shape)
        off = [np.fft.fftfreq(p, 1.0 / p) for p in pad]
        r = np.sqrt(sum(np.meshgrid(*(o ** 2 for o in off), indexing="ij"))) * self.h
        with np.errstate(divide="ignore"):
            ker = 1.0 / (4.0 * math.pi * r)
        ker[0, 0, 0] = self.self_term
        return pad, np.fft.rfftn(ker, axes=(0, 1, 2))

    def _convolve(self, g: np.ndarray) -> np.ndarray:
        """``sum_q K(p,q) g_q`` for ``g`` given per voxel (real or complex)."""
        pad, khat = self._fft
        idx = tuple(self.vox.index.T)
        if np.iscomplexobj(g):
            return self._convolve(g.real) + 1j * self._convolve(g.imag)
        grid = np.zeros(pad)
        grid[idx] = g
        return np.fft.irfftn(np.fft.rfftn(grid, axes=(0, 1, 2)) * khat, pad, axes=(0, 1, 2))[idx]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Product with the symmetric matrix ``S``."""
        x = np.asarray(x).reshape(-1)
        if self._dense is not None:
            return self._dense @ x
        return self.sqrt_w * self._convolve(self.sqrt_w * x) * self.h ** 3

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Newtonian potential of the voxel function ``u`` evaluated at the cell centres."""
        u = np.asarray(u).reshape(-1)
        return self._convolve(self.vox.weights * u) * self.h ** 3

    def matrix(self) -> np.ndarray:
        """Dense symmetric ``S`` (built once, then cached)."""
        if self._dense is None:
            c = self.vox.centers
            with np.errstate(divide="ignore"):
                k = 1.0 / (4.0 * math.pi * cdist(c, c))
            np.fill_diagonal(k, self.self_term)
            s = self.sqrt_w
            k *= s[:, None] * s[None, :] * self.h ** 3
            self._dense = 0.5 * (k + k.T)
        return self._dense

    def operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.matvec, dtype=float)

    def integrate(self, u: np.ndarray) -> float | complex:
        """``int_B u`` for a voxel function."""
        return np.sum(np.asarray(u) * self.vox.weights) * self.h ** 3

    def to_voxel(self, y: np.ndarray) -> np.ndarray:
        """Map symmetric-form vectors to volume-orthonormal voxel functions."""
        return y / (self.sqrt_w[:, None] if y.ndim == 2 else self.sqrt_w) / self.h ** 1.5

    @cached_property
    def full_spectrum(self):
        """All eigenpairs ``(lam, Y)`` of ``S``, descending (dense, so only for small grids)."""
        if self.n > DEFAULTS.dense_eig_limit * 4:
            raise ResolutionError(f"{self.n} voxels is too many for a full eigendecomposition")
        lam, y = linalg.eigh(self.matrix())
        return lam[::-1], y[:, ::-1]


def assemble_newtonian(vox: Voxelization, cap: int | None = None) -> NewtonianDisc:
    """Set up the discrete Newtonian operator; refuses voxel counts above ``cap``."""
    cap = DEFAULTS.voxel_cap if cap is None else cap
    if vox.n == 0:
        raise ResolutionError("empty voxelization")
    if vox.n > cap:
        raise ResolutionError(f"{vox.n} voxels exceeds the cap of {cap}")
    return NewtonianDisc(vox)


@dataclass(frozen=True, eq=False)
class EigenCluster:
    """Eigenvalue (merged over near-degenerate members) with volume-orthonormal eigenfunctions."""

    lam: float
    members: np.ndarray
    vectors: np.ndarray
    moments: np.ndarray

    @property
    def multiplicity(self) -> int:
        return len(self.members)

    @property
    def moment_sq(self) -> float:
        """``sum_l (int_B e_l)^2`` over all members."""
        return float(np.sum(self.moments ** 2))


def _clusters(lam, rtol):
    groups, start = [], 0
    for i in range(1, len(lam) + 1):
        if i == len(lam) or abs(lam[i - 1] - lam[i]) > rtol * abs(lam[start]):
            groups.append(np.arange(start, i))
            start = i
    return groups


def newtonian_eigens(disc: NewtonianDisc, count: int = 1, rtol: float | None = None) -> list[EigenCluster]:
    """The ``count`` largest eigenvalue clusters, sorted by ``lam`` descending.

    Small problems use a dense symmetric solver; larger ones a Lanczos iteration on
    the FFT operator, enlarged until the last requested cluster is complete.
    """
    rtol = DEFAULTS.cluster_rtol if rtol is None else rtol
    if count < 1 or count > disc.n:
        raise ValueError(f"count must be in [1, {disc.n}]")
    if disc.n <= DEFAULTS.dense_eig_limit:
        lam, y = disc.full_spectrum
        complete = True
    else:
        k = min(count + 4, disc.n - 1)
        while True:
            try:
                # a wide Krylov space keeps Lanczos from dropping copies of degenerate eigenvalues
                lam, y = eigsh(disc.operator(), k=k, which="LA", tol=1e-10,
                               ncv=min(max(4 * k, 60), disc.n))
            except ArpackNoConvergence as exc:
                res = None
                if len(exc.eigenvalues):
                    r = disc.operator() @ exc.eigenvectors - exc.eigenvectors * exc.eigenvalues
                    res = float(np.max(np.linalg.norm(r, axis=0)))
                raise NumericalError(f"eigensolver did not converge (residual {res})") from exc
            order = np.argsort(lam)[::-1]
            lam, y = lam[order], y[:, order]
            groups = _clusters(lam, rtol)
            complete = k >= disc.n - 1
            if len(groups) > count or complete:
                break
            k = min(2 * k, disc.n - 1)
    if np.any(lam[: max(count, 1)] <= 0):
        raise NumericalError("non-positive Ritz value: the discretization is not positive definite")
    out = []
    for g in _clusters(lam, rtol)[:count]:
        vec = disc.to_voxel(y[:, g])
        mom = y[:, g].T @ disc.sqrt_w * disc.h ** 1.5
        out.append(EigenCluster(float(np.mean(lam[g])), g, vec, mom))
    return out


def richardson(coarse: float, fine: float, order: float = 1.0) -> float:
    """One Richardson step for a quantity converging like ``h**order`` under halving."""
    f = 2.0 ** order
    return (f * fine - coarse) / (f - 1.0)


def body_resonance(bubble, cluster: EigenCluster) -> float:
    """Body-wave resonance ``sqrt(k_bar / (rho_bar * lam))`` of a cluster."""
    if bubble.regime != "bodywave":
        raise PreconditionError("body-wave resonances need a body-wave bubble")
    return body_resonance_value(bubble.k_bar, bubble.rho_bar, cluster.lam)


def body_resonance_value(k_bar: float, rho_bar: float, lam: float) -> float:
    if lam <= 0:
        raise NumericalError(f"non-positive eigenvalue {lam}")
    return math.sqrt(k_bar / (rho_bar * lam))


@dataclass(frozen=True, eq=False)
class WField:
    """``W = (I - gamma rho0 omega^2 N_D)^{-1} 1`` on the reference voxels of ``B``."""

    values: np.ndarray
    integral: complex
    spectral: complex | None
    nearest_pole: float


def w_field(disc: NewtonianDisc, gamma: float, omega: float, eps: float, rho0: float = 1.0,
            spectral: bool = True) -> WField:
    """Solve for the W-field of ``D = z + eps*B``.

    ``rho0`` multiplies the kernel (the physical Green function carries the local
    density); with it the poles sit at ``omega^2 = 1/(gamma rho0 eps^2 lam_n)``.
    The returned ``integral`` is ``int_D W`` from a direct solve and ``spectral``
    the same quantity from the eigen-expansion ``sum (int_D e_n)^2 / (1 - c lam_n)``.

    Raises
    ------
    ResonanceProximityError
        When ``omega^2`` is within the pole tolerance of a discrete pole.
    """
    c = gamma * rho0 * omega ** 2 * eps ** 2
    vol_d = disc.vox.volume * eps ** 3
    if c == 0.0:
        return WField(np.ones(disc.n), vol_d, vol_d, math.inf)
    small = disc.n <= DEFAULTS.dense_eig_limit * 4
    if small:
        lam, y = disc.full_spectrum
    else:
        lam = np.array([newtonian_eigens(disc, 1)[0].lam])
        y = None
    with np.errstate(divide="ignore"):
        poles = 1.0 / (gamma * rho0 * eps ** 2 * lam)
    poles = poles[poles > 0]
    if len(poles):
        near = poles[np.argmin(np.abs(omega ** 2 / poles - 1.0))]
        nearest = math.sqrt(near)
        if abs(omega ** 2 / near - 1.0) < DEFAULTS.pole_rtol_w:
            raise ResonanceProximityError(f"omega={omega} sits on the pole {nearest}", pole=nearest)
    else:
        nearest = math.inf
    rhs = disc.sqrt_w
    if small:
        sol = linalg.solve(np.eye(disc.n) - c * disc.matrix(), rhs, assume_a="sym")
    else:
        op = LinearOperator((disc.n, disc.n), matvec=lambda v: v - c * disc.matvec(v), dtype=float)
        sol, info = gmres(op, rhs, rtol=DEFAULTS.ls_rtol, restart=DEFAULTS.ls_restart,
                          maxiter=DEFAULTS.ls_maxiter)
        if info != 0:
            res = np.linalg.norm(op @ sol - rhs) / np.linalg.norm(rhs)
            raise SolverError("W-field solve did not converge", residual=res)
    values = sol / disc.sqrt_w
    integral = float(rhs @ sol) * disc.h ** 3 * eps ** 3
    spec = None
    if small and spectral:
        mom_sq = (y.T @ rhs) ** 2 * disc.h ** 3 * eps ** 3
        spec = float(np.sum(mom_sq / (1.0 - c * lam)))
    return WField(values, integral, spec, nearest)


def adz_single_cluster(cluster: EigenCluster, omega: float, omega_n: float, eps: float) -> float:
    """Single-cluster approximation ``-omega_n^2 (int_D e)^2 / (omega^2 - omega_n^2)`` of ``int_D W``."""
    return -omega_n ** 2 * eps ** 3 * cluster.moment_sq / (omega ** 2 - omega_n ** 2)
