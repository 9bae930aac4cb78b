"""Scenario model: heterogeneous background, bubble, band, scan grid, contrasts.

All quantities are consistent nondimensional numbers.  Background fields live on
the nodes of a regular grid and are interpolated trilinearly; outside the grid
box they take their constant exterior values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .defaults import DEFAULTS
from .errors import DataError, DomainError

MINNAERT = "minnaert"
BODYWAVE = "bodywave"
REGIMES = (MINNAERT, BODYWAVE)


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular node grid ``lo + i*h``, ``i`` in ``[0, shape)``."""

    lo: np.ndarray
    h: float
    shape: tuple

    @classmethod
    def from_box(cls, lo, hi, h) -> "Grid":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        n = tuple(int(round((hi[d] - lo[d]) / h)) + 1 for d in range(3))
        return cls(lo, float(h), n)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + (np.array(self.shape) - 1) * self.h

    def axes(self):
        return [self.lo[d] + self.h * np.arange(self.shape[d]) for d in range(3)]

    def nodes(self) -> np.ndarray:
        """Node coordinates with shape ``shape + (3,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def contains(self, x, margin: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all((x >= self.lo + margin - 1e-12) & (x <= self.hi - margin + 1e-12), axis=1)


def gaussian_phantom(grid: Grid, base: float, bumps: Sequence[dict], key: str) -> np.ndarray:
    """``base + sum delta * exp(-|x-c|^2 / (2 width^2))`` sampled at the grid nodes."""
    x = grid.nodes()
    out = np.full(grid.shape, float(base))
    for b in bumps:
        amp = float(b.get(key, 0.0))
        if amp == 0.0:
            continue
        c = np.asarray(b["center"], dtype=float)
        r2 = np.sum((x - c) ** 2, axis=-1)
        out += amp * np.exp(-r2 / (2.0 * float(b["width"]) ** 2))
    return out


@dataclass(frozen=True, eq=False)
class BackgroundMedium:
    """Density and bulk modulus on a grid covering the heterogeneity, constant outside."""

    grid: Grid
    rho0: np.ndarray
    k0: np.ndarray
    exterior_rho: float
    exterior_k: float

    def __post_init__(self):
        for name in ("rho0", "k0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != tuple(self.grid.shape):
                raise DataError(f"{name} has shape {arr.shape}, grid is {self.grid.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
            if np.any(arr <= 0):
                raise DataError(f"{name} must be positive")
            object.__setattr__(self, name, arr)
        if self.exterior_rho <= 0 or self.exterior_k <= 0:
            raise DataError("exterior values must be positive")
        tol = DEFAULTS.exterior_match_rtol
        for arr, ext, name in ((self.rho0, self.exterior_rho, "rho0"), (self.k0, self.exterior_k, "k0")):
            shell = np.concatenate([arr[[0, -1], :, :].ravel(), arr[:, [0, -1], :].ravel(),
                                    arr[:, :, [0, -1]].ravel()])
            if np.max(np.abs(shell - ext)) > tol * ext:
                raise DataError(f"{name} on the grid boundary differs from its exterior value")

    @classmethod
    def homogeneous(cls, rho: float, k: float, box=((-1, -1, -1), (1, 1, 1)), h: float = 0.25):
        grid = Grid.from_box(box[0], box[1], h)
        return cls(grid, np.full(grid.shape, float(rho)), np.full(grid.shape, float(k)),
                   float(rho), float(k))

    @classmethod
    def from_phantoms(cls, box, h, exterior_rho, exterior_k, phantoms=()):
        grid = Grid.from_box(box[0], box[1], h)
        rho = gaussian_phantom(grid, exterior_rho, phantoms, "delta_rho")
        k = gaussian_phantom(grid, exterior_k, phantoms, "delta_k")
        return cls(grid, rho, k, float(exterior_rho), float(exterior_k))

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.all(self.rho0 == self.exterior_rho) and np.all(self.k0 == self.exterior_k))

    @property
    def exterior_wavenumber_factor(self) -> float:
        """``sqrt(rho/k)`` outside: the exterior wavenumber is ``omega`` times this."""
        return math.sqrt(self.exterior_rho / self.exterior_k)

    def _interp(self, arr, x, ext):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(len(x), float(ext))
        inside = self.grid.contains(x)
        if np.any(inside):
            f = RegularGridInterpolator(self.grid.axes(), arr, method="linear")
            xi = np.clip(x[inside], self.grid.lo, self.grid.hi)
            out[inside] = f(xi)
        return out

    def rho_at(self, x) -> np.ndarray:
        return self._interp(self.rho0, x, self.exterior_rho)

    def k_at(self, x) -> np.ndarray:
        return self._interp(self.k0, x, self.exterior_k)

    def range(self):
        return (float(self.rho0.min()), float(self.rho0.max()),
                float(self.k0.min()), float(self.k0.max()))


def sample_background(medium: BackgroundMedium, x, omega: float = 0.0):
    """``(rho0, k0, kappa0)`` at ``x`` (single point, or arrays for many points)."""
    xa = np.asarray(x, dtype=float)
    rho, k = medium.rho_at(xa), medium.k_at(xa)
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(k))):
        raise DataError("non-finite background sample")
    kappa = omega * np.sqrt(rho / k)
    if xa.ndim == 1:
        return float(rho[0]), float(k[0]), float(kappa[0])
    return rho, k, kappa


@dataclass(frozen=True)
class BubbleSpec:
    """One injected bubble ``D = center + eps * B``.

    ``rho_bar``/``k_bar`` are the scaled contrasts: Minnaert bubbles have
    ``rho1 = rho_bar eps^2`` and ``k1 = k_bar eps^2``; body-wave bubbles have
    ``rho1 = rho_bar`` (close to the local background density) and ``k1 = k_bar eps^2``.
    """

    shape: str = "sphere(3)"
    center: tuple = (0.0, 0.0, 0.0)
    eps: float = 0.01
    rho_bar: float = 2000.0
    k_bar: float = 1e5
    regime: str = MINNAERT
    j: float = 1.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.eps < 0 or self.rho_bar <= 0 or self.k_bar <= 0:
            raise ValueError("eps must be >= 0 and rho_bar, k_bar > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def rho1(self) -> float:
        return self.rho_bar * self.eps ** 2 if self.regime == MINNAERT else self.rho_bar

    @property
    def k1(self) -> float:
        return self.k_bar * self.eps ** 2

    def at(self, center) -> "BubbleSpec":
        return BubbleSpec(self.shape, tuple(center), self.eps, self.rho_bar, self.k_bar,
                          self.regime, self.j)

    def with_eps(self, eps: float) -> "BubbleSpec":
        return BubbleSpec(self.shape, self.center, eps, self.rho_bar, self.k_bar, self.regime, self.j)


@dataclass(frozen=True)
class FrequencyBand:
    omega_min: float
    omega_max: float
    count: int

    def __post_init__(self):
        if not (0 < self.omega_min < self.omega_max) or self.count < 2:
            raise ValueError("need 0 < omega_min < omega_max and count >= 2")

    def omegas(self) -> np.ndarray:
        return np.linspace(self.omega_min, self.omega_max, self.count)


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """Bubble centres; for a regular scan ``shape`` records the lattice layout."""

    points: np.ndarray
    shape: tuple | None = None
    spacing: float | None = None

    @classmethod
    def regular(cls, lo, hi, n: int) -> "ScanGrid":
        axes = [np.linspace(lo[d], hi[d], n) for d in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        spacing = float((hi[0] - lo[0]) / (n - 1)) if n > 1 else None
        return cls(pts, (n, n, n), spacing)

    def validate(self, medium: BackgroundMedium) -> "ScanGrid":
        ok = medium.grid.contains(self.points, margin=medium.grid.h)
        if not np.all(ok):
            raise DomainError("scan points must lie at least one grid cell inside the medium grid")
        return self


@dataclass(frozen=True)
class ContrastParams:
    alpha: float
    beta: float
    gamma: float
    rho1: float
    k1: float
    rho0: float
    k0: float


def contrast_params(medium: BackgroundMedium, bubble: BubbleSpec) -> ContrastParams:
    """``alpha = 1/rho1 - 1/rho0(z)``, ``beta = 1/k1 - 1/k0(z)``, ``gamma = beta - alpha rho1/k1``.

    ``gamma`` is evaluated as ``rho1/(rho0 k1) - 1/k0``, the same quantity without
    the cancellation between two terms of size ``1/k1``.
    """
    z = np.asarray(bubble.center, dtype=float)
    if not medium.grid.contains(z)[0]:
        raise DomainError(f"bubble centre {tuple(z)} lies outside the medium grid")
    rho0, k0, _ = sample_background(medium, z)
    if not (rho0 > 0 and k0 > 0):
        raise DataError("non-positive background sample at the bubble centre")
    rho1, k1 = bubble.rho1, bubble.k1
    if rho1 <= 0 or k1 <= 0:
        raise DataError("bubble with eps = 0 has no physical contrast")
    alpha = 1.0 / rho1 - 1.0 / rho0
    beta = 1.0 / k1 - 1.0 / k0
    gamma = rho1 / (rho0 * k1) - 1.0 / k0
    return ContrastParams(alpha, beta, gamma, rho1, k1, rho0, k0)


@dataclass(frozen=True)
class BandReport:
    bracketed: bool
    required: tuple
    lower_margin: float
    upper_margin: float
    kind: str


def minnaert_band(k_bar, mu, rho_min, rho_max, constant=8 * math.pi):
    """Band ``[omega_M(rho_max), omega_M(rho_min)]`` that the scan must cover."""
    return (math.sqrt(constant * k_bar / (rho_max * mu)), math.sqrt(constant * k_bar / (rho_min * mu)))


def check_band(medium: BackgroundMedium, band: FrequencyBand, bubble: BubbleSpec,
               mu: float | None = None, omega_res: float | None = None,
               constant: float = 8 * math.pi) -> BandReport:
    """Does the band bracket every resonance the scan can produce?

    Margins are ratios that are ``>= 1`` when the corresponding side is covered.
    Body-wave bubbles need ``omega_res`` (their resonance is background independent).
    """
    if bubble.regime == MINNAERT:
        if mu is None:
            from .geometry import load_shape, mu_shape
            mu = mu_shape(load_shape(bubble.shape))
        rmin, rmax, _, _ = medium.range()
        lo, hi = minnaert_band(bubble.k_bar, mu, rmin, rmax, constant)
    else:
        if omega_res is None:
            raise ValueError("body-wave band check needs omega_res")
        lo = hi = float(omega_res)
    lower = lo / band.omega_min
    upper = band.omega_max / hi
    return BandReport(bool(lower >= 1 and upper >= 1), (lo, hi), lower, upper, bubble.regime)
