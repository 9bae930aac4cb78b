"""Asymptotic forward models for a single small bubble.

Far fields use the normalization ``lim |x| exp(-i kappa |x|) u^s(x)``, so the
far field of the background Green function at ``z`` is ``(rho_ext/4pi) v(z, -xhat)``.
All routines take background samples (``v`` values, far fields, Green values) as
plain numbers; ``background_samples`` computes them from a medium.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .defaults import DEFAULTS
from .errors import PreconditionError, ProximityError, ResonanceProximityError
from .media import BODYWAVE, MINNAERT, BubbleSpec

EIGHT_PI = 8.0 * math.pi


@dataclass(frozen=True)
class ResonanceInfo:
    """Resonance of a bubble with the data it was computed from."""

    kind: str
    omega_res: float
    rho0_z: float | None = None
    mu: float | None = None
    lam: float | None = None
    moment_sq: float | None = None

    @property
    def omega_sq(self) -> float:
        return self.omega_res ** 2


@dataclass(frozen=True)
class ValidityReport:
    ratio: float
    ok: bool
    threshold: float
    exponent: float


def minnaert_frequency(bubble: BubbleSpec, rho0_z: float, mu: float, override: bool = False,
                       constant: float = EIGHT_PI) -> ResonanceInfo:
    """``omega_M = sqrt(constant * k_bar / (rho0(z) mu))`` with ``constant = 8 pi``.

    Raises ``PreconditionError`` when ``rho0(z) >= rho_bar`` unless ``override``.
    """
    if rho0_z <= 0 or mu <= 0:
        raise ValueError("rho0(z) and mu must be positive")
    if not override and rho0_z >= bubble.rho_bar:
        raise PreconditionError(f"background density {rho0_z} is not below rho_bar={bubble.rho_bar}")
    w = math.sqrt(constant * bubble.k_bar / (rho0_z * mu))
    return ResonanceInfo(MINNAERT, w, rho0_z=rho0_z, mu=mu)


def bodywave_resonance(bubble: BubbleSpec, cluster) -> ResonanceInfo:
    from .spectrum import body_resonance
    return ResonanceInfo(BODYWAVE, body_resonance(bubble, cluster), lam=cluster.lam,
                         moment_sq=cluster.moment_sq)


def validity_guard(eps: float, omega: float, resonance: ResonanceInfo, regime: str | None = None,
                   j: float = 1.0, threshold: float | None = None) -> ValidityReport:
    """Ratio ``eps^h / |omega^2 - omega_res^2|`` (``h = 1`` Minnaert, ``min(1, j)/2`` body-wave)."""
    regime = regime or resonance.kind
    if regime == MINNAERT:
        h = 1.0
        thr = DEFAULTS.validity_threshold_minnaert if threshold is None else threshold
    else:
        h = min(1.0, j) / 2.0
        thr = DEFAULTS.validity_threshold_bodywave if threshold is None else threshold
    gap = abs(omega ** 2 - resonance.omega_sq)
    ratio = math.inf if gap == 0 else eps ** h / gap
    return ValidityReport(ratio, bool(ratio <= thr), thr, h)


def _pole_guard(omega: float, resonance: ResonanceInfo) -> float:
    gap = omega ** 2 - resonance.omega_sq
    if abs(gap) < DEFAULTS.pole_rtol * resonance.omega_sq:
        raise ResonanceProximityError(f"omega={omega} is at the resonance {resonance.omega_res}",
                                      pole=resonance.omega_res)
    return gap


def minnaert_factor(omega: float, bubble: BubbleSpec, resonance: ResonanceInfo, volume: float) -> float:
    """``omega^2 omega_M^2 |B| eps / (k_bar (omega^2 - omega_M^2))``."""
    gap = _pole_guard(omega, resonance)
    return omega ** 2 * resonance.omega_sq * volume * bubble.eps / (bubble.k_bar * gap)


def bodywave_factor(omega: float, bubble: BubbleSpec, resonance: ResonanceInfo) -> float:
    """``omega^2 omega_n^2 m^2 eps / (k_bar (omega^2 - omega_n^2))``."""
    gap = _pole_guard(omega, resonance)
    return omega ** 2 * resonance.omega_sq * resonance.moment_sq * bubble.eps / (bubble.k_bar * gap)


def farfield_regime1(v_inf: complex, v_obs: complex, v_inc: complex, omega: float,
                     bubble: BubbleSpec, resonance: ResonanceInfo, volume: float,
                     rho_ext: float) -> complex:
    """Far field with a Minnaert bubble.

    Parameters
    ----------
    v_inf : background far field ``v^inf(xhat, theta, omega)``.
    v_obs : background field ``v(z, -xhat, omega)``.
    v_inc : background field ``v(z, theta, omega)``.
    volume : ``|B|``.
    rho_ext : exterior density (the far-field reciprocity constant is ``rho_ext/4pi``).
    """
    if bubble.eps == 0:
        return complex(v_inf)
    fac = minnaert_factor(omega, bubble, resonance, volume)
    return complex(v_inf - fac * rho_ext / (4 * math.pi) * v_obs * v_inc)


def _proximity(x, bubble: BubbleSpec):
    dist = float(np.linalg.norm(np.asarray(x, float) - np.asarray(bubble.center)))
    if dist < DEFAULTS.proximity_factor * bubble.eps:
        raise ProximityError(f"observation point at distance {dist} is too close to the bubble")


def scattered_regime1(vs_x: complex, g_xz: complex, v_inc: complex, omega: float,
                      bubble: BubbleSpec, resonance: ResonanceInfo, volume: float, x) -> complex:
    """Scattered field at ``x``: ``v^s(x) - factor * G(x, z) v(z, theta)``."""
    _proximity(x, bubble)
    if bubble.eps == 0:
        return complex(vs_x)
    fac = minnaert_factor(omega, bubble, resonance, volume)
    return complex(vs_x - fac * g_xz * v_inc)


def farfield_regime2(v_inf: complex, v_obs: complex, v_inc: complex, omega: float,
                     bubble: BubbleSpec, resonance: ResonanceInfo, rho_ext: float,
                     w_integral: complex | None = None) -> complex:
    """Far field with a body-wave bubble.

    The standard form uses the cluster moment; with ``w_integral`` (``int_D W``) the
    improved form ``(omega^2 / k1) int_D W`` replaces the spectral factor.
    """
    if bubble.eps == 0:
        return complex(v_inf)
    term = _bodywave_term(omega, bubble, resonance, w_integral)
    return complex(v_inf + term * rho_ext / (4 * math.pi) * v_obs * v_inc)


def _bodywave_term(omega, bubble, resonance, w_integral):
    if w_integral is None:
        return -bodywave_factor(omega, bubble, resonance)
    return omega ** 2 / bubble.k1 * w_integral


def scattered_regime2(vs_x: complex, g_xz: complex, v_inc: complex, omega: float,
                      bubble: BubbleSpec, resonance: ResonanceInfo, x,
                      w_integral: complex | None = None) -> complex:
    _proximity(x, bubble)
    if bubble.eps == 0:
        return complex(vs_x)
    return complex(vs_x + _bodywave_term(omega, bubble, resonance, w_integral) * g_xz * v_inc)


def background_samples(medium, z, omega: float, theta, xhat):
    """``(v_inf(xhat, theta), v(z, -xhat), v(z, theta))`` from background solves."""
    from .fields import solve_background
    theta, xhat = np.asarray(theta, float), np.asarray(xhat, float)
    v, vinf = solve_background(medium, theta, omega)
    v_inc = v.at(z)
    if np.allclose(-xhat, theta):
        v_obs = v_inc
    else:
        w, _ = solve_background(medium, -xhat, omega)
        v_obs = w.at(z)
    return vinf(xhat), v_obs, v_inc
