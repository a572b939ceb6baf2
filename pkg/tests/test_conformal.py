import math

import numpy as np
import pytest

from conftest import lam_h, mode, mu_h
from qtflow.config import random_smooth_field
from qtflow.conformal import (
    conformal_curvatures,
    conformal_weight,
    evolving_means,
    kappa_invariants,
    mean_curvature,
    q_curvature,
    t_curvature,
    total_volume,
)
from qtflow.errors import FlowDiverged
from qtflow.geometry import build_grid, flat_background, synthetic_background


def test_flat_zero_and_constant(flat8):
    g = flat8.grid
    for c in (0.0, 0.4):
        u = np.full(g.shape, c)
        assert not np.any(q_curvature(u, flat8))
        assert np.abs(t_curvature(u, flat8)).max() < 1e-9
        assert np.abs(mean_curvature(u, flat8)).max() < 1e-14


def test_q_of_mode(flat8):
    eps = 1e-2
    u = mode(flat8.grid, eps=eps)
    expect = 0.5 * np.exp(-4 * u) * (lam_h(1 / 8) + mu_h(1 / 8)) ** 2 * u
    assert np.allclose(q_curvature(u, flat8), expect, rtol=1e-10, atol=1e-12)


def test_q_shift_law(synthetic6):
    u = random_smooth_field(synthetic6.grid, 0.3, 1)
    c = 0.25
    assert np.allclose(q_curvature(u + c, synthetic6), math.exp(-4 * c) * q_curvature(u, synthetic6),
                       rtol=1e-12, atol=1e-14)


def test_mean_curvature_of_x4_mode():
    # the one-sided normal derivative of cos(pi x4) is O(h^3), not zero
    for n in (8, 16):
        geo = flat_background(build_grid(4, 4, 4, n + 1))
        h = 1 / n
        eps = 0.1
        u = mode(geo.grid, k1=0, eps=eps)
        dn_bottom = eps * (3 - 4 * np.cos(np.pi * h) + np.cos(2 * np.pi * h)) / (2 * h)
        H = mean_curvature(u, geo)
        assert np.allclose(H[0], np.exp(-eps) * dn_bottom, rtol=1e-10)
        assert np.allclose(H[1], -np.exp(eps) * dn_bottom, rtol=1e-10)


def test_volume_and_means(flat8):
    g = flat8.grid
    c = 0.3
    u = np.full(g.shape, c)
    assert total_volume(u, flat8) == pytest.approx(math.exp(4 * c), rel=1e-14)
    m = evolving_means(np.zeros(g.shape), flat8, np.ones(g.shape), np.ones(g.face_shape))
    assert (m.qbar, m.fbar, m.tbar, m.sbar) == (0.0, 1.0, 0.0, 1.0)
    u = random_smooth_field(g, 0.3, 3)
    m = evolving_means(u, flat8, np.ones(g.shape), np.ones(g.face_shape))
    assert m.fbar == pytest.approx(1.0, rel=1e-15)
    assert m.volume == pytest.approx(total_volume(u, flat8), rel=1e-15)


def test_means_reject_nonpositive_profiles(flat8):
    g = flat8.grid
    with pytest.raises(ValueError, match="F"):
        evolving_means(np.zeros(g.shape), flat8, np.zeros(g.shape), np.ones(g.face_shape))
    with pytest.raises(ValueError, match="S"):
        evolving_means(np.zeros(g.shape), flat8, np.ones(g.shape), -np.ones(g.face_shape))


def test_overflow_is_divergence(flat8):
    u = np.full(flat8.grid.shape, 200.0)
    with pytest.raises(FlowDiverged):
        q_curvature(u, flat8)
    with pytest.raises(FlowDiverged):
        conformal_weight(np.array([np.nan]), 1.0)


def test_kappa_flat_zero_at_zero(flat8):
    assert kappa_invariants(np.zeros(flat8.grid.shape), flat8) == (0.0, 0.0, 0.0)


def test_kappa_p4_exactly_invariant(synthetic6):
    # the interior total is an exact discrete invariant: int P43 u dV0 = 0
    base = kappa_invariants(np.zeros(synthetic6.grid.shape), synthetic6)[0]
    u = random_smooth_field(synthetic6.grid, 0.5, 4)
    assert kappa_invariants(u, synthetic6)[0] == pytest.approx(base, rel=1e-12)
    assert base == pytest.approx(0.3 * synthetic6.volume, rel=1e-14)


def test_kappa_flat_refinement():
    errs = []
    for n in (8, 16):
        geo = flat_background(build_grid(n, n, n, n + 1))
        errs.append(max(abs(kappa_invariants(random_smooth_field(geo.grid, 0.5, s), geo)[2]) for s in range(3)))
    assert errs[1] < errs[0] / 2**1.8


def test_conformal_curvatures_bundle(flat8):
    u = random_smooth_field(flat8.grid, 0.1, 5)
    cc = conformal_curvatures(u, flat8)
    assert cc.volume > 0 and cc.boundary_area > 0
    assert np.array_equal(cc.Q, q_curvature(u, flat8))
    assert cc.T.shape == flat8.grid.face_shape


def test_synthetic_constant_q0(flat8):
    syn = synthetic_background(flat8.grid, Q0=0.5)
    assert np.allclose(q_curvature(np.zeros(flat8.grid.shape), syn), 0.5)
