import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bubbleimg.errors import DataError, DomainError
from bubbleimg.media import (BODYWAVE, BackgroundMedium, BubbleSpec, FrequencyBand, Grid, ScanGrid,
                             check_band, contrast_params, gaussian_phantom, minnaert_band,
                             sample_background)

MU_SPHERE = 8 * math.pi / 3


def bump_medium(box=3.0, h=0.2):
    return BackgroundMedium.from_phantoms(((-box,) * 3, (box,) * 3), h, 1000.0, 2e9,
                                          [{"center": (0.2, 0, 0), "width": 0.3,
                                            "delta_rho": 50.0, "delta_k": 1e8}])


def test_grid_nodes_and_contains():
    g = Grid.from_box((-1, -1, -1), (1, 1, 1), 0.5)
    assert g.shape == (5, 5, 5)
    np.testing.assert_allclose(g.hi, [1, 1, 1])
    assert g.nodes().shape == (5, 5, 5, 3)
    assert g.contains([0.9, 0, 0])[0] and not g.contains([1.1, 0, 0])[0]
    assert not g.contains([0.9, 0, 0], margin=0.5)[0]


def test_homogeneous_sample():
    m = BackgroundMedium.homogeneous(2.0, 8.0)
    rho, k, kappa = sample_background(m, [0.1, 0.2, 0.3], omega=3.0)
    assert (rho, k) == (2.0, 8.0)
    assert kappa == pytest.approx(1.5)
    assert m.is_homogeneous


def test_exterior_mismatch_rejected():
    g = Grid.from_box((-1, -1, -1), (1, 1, 1), 0.5)
    rho = np.ones(g.shape)
    rho[0, 0, 0] = 1.1
    with pytest.raises(DataError):
        BackgroundMedium(g, rho, np.ones(g.shape), 1.0, 1.0)


def test_nonpositive_field_rejected():
    g = Grid.from_box((-1, -1, -1), (1, 1, 1), 0.5)
    rho = np.ones(g.shape)
    rho[2, 2, 2] = -1.0
    with pytest.raises(DataError):
        BackgroundMedium(g, rho, np.ones(g.shape), 1.0, 1.0)


def test_phantom_peak_value():
    g = Grid.from_box((-1, -1, -1), (1, 1, 1), 0.25)
    f = gaussian_phantom(g, 1.0, [{"center": (0, 0, 0), "width": 0.2, "delta_rho": 0.5}], "delta_rho")
    assert f[4, 4, 4] == pytest.approx(1.5)
    # one node away: exp(-h^2 / (2 w^2))
    assert f[5, 4, 4] == pytest.approx(1.0 + 0.5 * math.exp(-0.25 ** 2 / (2 * 0.04)))


def test_outside_grid_takes_exterior():
    m = bump_medium()
    assert m.rho_at([10.0, 0, 0])[0] == 1000.0
    assert m.k_at([0, -10.0, 0])[0] == 2e9


@given(st.tuples(*[st.floats(-2.9, 2.9)] * 3))
def test_interpolation_is_positive_and_bounded(x):
    m = bump_medium()
    lo, hi, klo, khi = m.range()
    r = m.rho_at(x)[0]
    k = m.k_at(x)[0]
    assert lo - 1e-9 <= r <= hi + 1e-9 and klo - 1e-3 <= k <= khi + 1e-3


def test_interpolation_is_trilinear_at_nodes():
    m = bump_medium(h=0.25)
    node = m.grid.nodes()[13, 12, 11]
    assert m.rho_at(node)[0] == pytest.approx(m.rho0[13, 12, 11], rel=1e-14)
    mid = node + np.array([0.125, 0, 0])
    assert m.rho_at(mid)[0] == pytest.approx(0.5 * (m.rho0[13, 12, 11] + m.rho0[14, 12, 11]), rel=1e-14)


def test_bubble_scalings():
    b = BubbleSpec(eps=0.1, rho_bar=3.0, k_bar=5.0)
    assert b.rho1 == pytest.approx(0.03) and b.k1 == pytest.approx(0.05)
    bw = BubbleSpec(eps=0.1, rho_bar=3.0, k_bar=5.0, regime=BODYWAVE)
    assert bw.rho1 == 3.0 and bw.k1 == pytest.approx(0.05)
    assert b.at((1, 2, 3)).center == (1.0, 2.0, 3.0)
    with pytest.raises(ValueError):
        BubbleSpec(regime="other")


@given(st.floats(1e-3, 0.2), st.floats(0.5, 5.0), st.floats(0.5, 5.0))
def test_contrast_params_invert(eps, rho_bar, k_bar):
    m = BackgroundMedium.homogeneous(1.3, 2.7)
    c = contrast_params(m, BubbleSpec(eps=eps, rho_bar=rho_bar, k_bar=k_bar))
    rho1 = 1.0 / (c.alpha + 1.0 / c.rho0)
    k1 = 1.0 / (c.beta + 1.0 / c.k0)
    assert rho1 == pytest.approx(c.rho1, rel=1e-12)
    assert k1 == pytest.approx(c.k1, rel=1e-12)
    # the defining form subtracts two terms of size 1/k1; compare at that scale
    other = c.beta - c.alpha * c.rho1 / c.k1
    assert abs(c.gamma - other) <= 1e-12 * max(abs(c.beta), abs(c.alpha * c.rho1 / c.k1))


def test_contrast_orders_by_regime():
    m = BackgroundMedium.homogeneous(1.0, 1.0)
    for eps in (0.1, 0.05):
        c = contrast_params(m, BubbleSpec(eps=eps, rho_bar=2.0, k_bar=3.0))
        assert 0.1 < abs(c.alpha * eps ** 2) < 10 and 0.1 < abs(c.gamma) < 10
        w = contrast_params(m, BubbleSpec(eps=eps, rho_bar=1.0 + eps, k_bar=3.0, regime=BODYWAVE))
        assert 0.1 < abs(w.gamma * eps ** 2) < 10 and abs(w.alpha) <= 2 * eps


def test_contrast_outside_grid():
    with pytest.raises(DomainError):
        contrast_params(BackgroundMedium.homogeneous(1, 1), BubbleSpec(center=(5, 0, 0)))


def test_band_validation():
    with pytest.raises(ValueError):
        FrequencyBand(2.0, 1.0, 10)
    assert len(FrequencyBand(1.0, 2.0, 7).omegas()) == 7


def test_minnaert_band_values():
    lo, hi = minnaert_band(1e5, MU_SPHERE, 900.0, 1100.0)
    assert lo == pytest.approx(math.sqrt(3e5 / 1100.0))
    assert hi == pytest.approx(math.sqrt(3e5 / 900.0))


@given(st.floats(0.5, 1.0), st.floats(1.0, 2.0), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_check_band_monotone(lo_f, hi_f, grow_lo, grow_hi):
    m = bump_medium()
    b = BubbleSpec(k_bar=1e5, rho_bar=2000.0)
    lo, hi = minnaert_band(b.k_bar, MU_SPHERE, *m.range()[:2])
    small = FrequencyBand(lo * lo_f, hi * hi_f, 8)
    big = FrequencyBand(small.omega_min * (1 - grow_lo), small.omega_max * (1 + grow_hi), 8)
    r1 = check_band(m, small, b, mu=MU_SPHERE)
    r2 = check_band(m, big, b, mu=MU_SPHERE)
    assert not (r1.bracketed and not r2.bracketed)


def test_check_band_bodywave_needs_resonance():
    m = bump_medium()
    b = BubbleSpec(regime=BODYWAVE)
    with pytest.raises(ValueError):
        check_band(m, FrequencyBand(1.0, 2.0, 4), b)
    assert check_band(m, FrequencyBand(1.0, 2.0, 4), b, omega_res=1.5).bracketed
    assert not check_band(m, FrequencyBand(1.0, 2.0, 4), b, omega_res=2.5).bracketed


def test_scan_grid():
    s = ScanGrid.regular((-0.5,) * 3, (0.5,) * 3, 3)
    assert s.points.shape == (27, 3) and s.spacing == 0.5
    m = BackgroundMedium.homogeneous(1, 1, h=0.25)
    s.validate(m)
    with pytest.raises(DomainError):
        ScanGrid.regular((-0.9,) * 3, (0.9,) * 3, 3).validate(m)
