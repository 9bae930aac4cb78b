import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubbleimg.errors import PreconditionError, ProximityError, ResonanceProximityError
from bubbleimg.fields import green_homogeneous
from bubbleimg.forward import (ResonanceInfo, background_samples, bodywave_resonance, farfield_regime1,
                               farfield_regime2, minnaert_frequency, scattered_regime1,
                               scattered_regime2, validity_guard)
from bubbleimg.geometry import voxelize
from bubbleimg.media import BODYWAVE, MINNAERT, BackgroundMedium, BubbleSpec
from bubbleimg.oracle import SphereScatterer
from bubbleimg.spectrum import assemble_newtonian, newtonian_eigens, w_field

from conftest import shape

MU = 8 * math.pi / 3
VOL = 4 * math.pi / 3
RHO0, K0 = 1000.0, 2e9


def bubble(eps=0.01):
    return BubbleSpec(eps=eps, rho_bar=2000.0, k_bar=1e5)


def test_minnaert_unit_ball():
    res = minnaert_frequency(bubble(), RHO0, MU)
    assert res.omega_sq == pytest.approx(3 * 1e5 / RHO0, rel=1e-12)
    assert res.kind == MINNAERT


def test_minnaert_precondition():
    with pytest.raises(PreconditionError):
        minnaert_frequency(bubble(), 2500.0, MU)
    assert minnaert_frequency(bubble(), 2500.0, MU, override=True).omega_res > 0


@given(st.floats(500.0, 1900.0), st.floats(0.5, 2.0))
def test_minnaert_follows_density(rho, f):
    a = minnaert_frequency(bubble(), rho, MU).omega_sq
    b = minnaert_frequency(bubble(), rho / f, MU, override=True).omega_sq
    assert b == pytest.approx(f * a, rel=1e-12)


def test_validity_examples():
    res = ResonanceInfo(MINNAERT, 2.0)
    r = validity_guard(0.01, 2.0, res)
    assert r.ratio == math.inf and not r.ok
    r = validity_guard(1e-4, math.sqrt(5.0), res)
    assert r.ratio == pytest.approx(1e-4) and r.ok
    r = validity_guard(0.01, math.sqrt(5.0), ResonanceInfo(BODYWAVE, 2.0), j=2.0)
    assert r.exponent == 0.5 and r.ratio == pytest.approx(0.1)


@given(st.floats(1e-4, 0.1), st.floats(0.1, 10.0))
def test_validity_ok_iff_below_threshold(eps, gap):
    r = validity_guard(eps, math.sqrt(4.0 + gap), ResonanceInfo(MINNAERT, 2.0))
    assert r.ok == (r.ratio <= r.threshold)


def _u1(eps, om, vinf=0.1 + 0.2j, vobs=0.3 - 0.4j, vinc=0.5 + 0.1j):
    b = bubble(eps)
    res = minnaert_frequency(b, RHO0, MU)
    return farfield_regime1(vinf, vobs, vinc, om, b, res, VOL, RHO0)


@given(st.floats(1e-3, 0.05), st.floats(0.5, 2.0))
def test_bubble_term_linear_in_eps(eps, f):
    om = math.sqrt(f * 300.0)
    if abs(f - 1) < 1e-3:
        return
    vinf = 0.1 + 0.2j
    t1 = _u1(eps, om) - vinf
    t2 = _u1(2 * eps, om) - vinf
    assert t2 == pytest.approx(2 * t1, rel=1e-12)


def test_zero_eps_is_background():
    assert _u1(0.0, 10.0) == 0.1 + 0.2j


def test_sign_change_and_peak():
    wm = math.sqrt(300.0)
    ws = np.linspace(0.8, 1.2, 400) * wm
    terms = np.array([_u1(0.01, w, 0, 1, 1) for w in ws])
    below, above = terms[ws < wm], terms[ws > wm]
    assert np.all(np.sign(below.real) == -np.sign(above[0].real))
    assert np.all(np.sign(above.real) == np.sign(above[0].real))
    assert abs(ws[np.argmax(np.abs(terms))] - wm) <= ws[1] - ws[0]


def test_pole_guard():
    with pytest.raises(ResonanceProximityError):
        _u1(0.01, math.sqrt(300.0))


def test_against_sphere_series():
    b = bubble(0.01)
    res = minnaert_frequency(b, RHO0, MU)
    om = math.sqrt(1.5) * res.omega_res
    th = np.array([0.0, 0.0, 1.0])
    exact = SphereScatterer.from_bubble(b, RHO0, K0).farfield(om, th, -th)
    approx = farfield_regime1(0.0, 1.0, 1.0, om, b, res, VOL, RHO0)
    assert abs(approx - exact) <= 5e-3 * abs(exact)


def test_scattered_field_far_limit():
    b = bubble(0.01).at((0.1, -0.2, 0.05))
    res = minnaert_frequency(b, RHO0, MU)
    om = math.sqrt(1.5) * res.omega_res
    kappa = om * math.sqrt(RHO0 / K0)
    th, xh = np.array([0.0, 0.0, 1.0]), np.array([0.6, 0.0, 0.8])
    z = np.array(b.center)
    vinc = np.exp(1j * kappa * th @ z)
    vobs = np.exp(-1j * kappa * xh @ z)
    x = 1e9 * xh
    us = scattered_regime1(0.0, green_homogeneous(RHO0, K0, om, x, z), vinc, om, b, res, VOL, x)
    lim = np.linalg.norm(x) * np.exp(-1j * kappa * np.linalg.norm(x)) * us
    ff = farfield_regime1(0.0, vobs, vinc, om, b, res, VOL, RHO0)
    assert abs(lim - ff) <= 1e-6 * abs(ff)


def test_proximity_error():
    b = bubble(0.01)
    res = minnaert_frequency(b, RHO0, MU)
    with pytest.raises(ProximityError):
        scattered_regime1(0, 1, 1, 10.0, b, res, VOL, [0.05, 0, 0])
    with pytest.raises(ProximityError):
        scattered_regime2(0, 1, 1, 10.0, BubbleSpec(regime=BODYWAVE), res, [0.0, 0.0, 0.01])


@pytest.fixture(scope="module")
def ball_disc():
    return assemble_newtonian(voxelize(shape("sphere(3)"), 1 / 8))


def test_bodywave_resonance_background_free(ball_disc):
    cl = newtonian_eigens(ball_disc, 1)[0]
    b = BubbleSpec(regime=BODYWAVE, rho_bar=1.0, k_bar=1.0, eps=0.1)
    r1 = bodywave_resonance(b, cl)
    assert r1.omega_res == pytest.approx(1 / math.sqrt(cl.lam))
    # no background enters; the factor at a fixed omega is ε-linear
    t = [farfield_regime2(0, 1, 1, 1.3 * r1.omega_res, b.with_eps(e), r1, 1.0) for e in (0.1, 0.2)]
    assert t[1] == pytest.approx(2 * t[0], rel=1e-12)


def test_improved_vs_standard_regime2(ball_disc):
    cl = newtonian_eigens(ball_disc, 1)[0]
    rho0, k0 = 1.0, 1e3
    gaps = []
    for eps in (0.2, 0.1, 0.05):
        b = BubbleSpec(regime=BODYWAVE, rho_bar=rho0, k_bar=1.0, eps=eps)
        gamma = b.rho1 / (rho0 * b.k1) - 1 / k0
        wn = math.sqrt(1 / (gamma * rho0 * eps ** 2 * cl.lam))
        res = ResonanceInfo(BODYWAVE, wn, lam=cl.lam, moment_sq=cl.moment_sq)
        om = math.sqrt(1.05) * wn
        w = w_field(ball_disc, gamma, om, eps, rho0)
        std = farfield_regime2(0, 1, 1, om, b, res, 4 * math.pi)
        imp = farfield_regime2(0, 1, 1, om, b, res, 4 * math.pi, w_integral=w.integral)
        # compare the spectral factors, int_D W versus its single-cluster form
        gaps.append(abs(imp - std) * b.k1 / om ** 2)
    assert gaps[0] / gaps[1] == pytest.approx(8, rel=0.05)
    assert gaps[1] / gaps[2] == pytest.approx(8, rel=0.05)


def test_background_samples_homogeneous():
    m = BackgroundMedium.homogeneous(RHO0, K0, h=0.25)
    th = np.array([0.0, 0.0, 1.0])
    vinf, vobs, vinc = background_samples(m, [0.0, 0.0, 0.5], 3000.0, th, -th)
    kappa = 3000.0 * math.sqrt(RHO0 / K0)
    assert vinf == 0 and vinc == pytest.approx(np.exp(0.5j * kappa)) and vobs == vinc
