import math

import numpy as np
import pytest

from conftest import lam_h, mode, mu_h
from qtflow.config import random_smooth_field
from qtflow.conformal import q_curvature
from qtflow.functionals import energy_qf, energy_ts, mt_ratio, trace_mt_ratio
from qtflow.geometry import synthetic_background


def test_energy_zero_and_constants(flat8):
    g = flat8.grid
    for c in (0.0, 0.7):
        u = np.full(g.shape, c)
        assert energy_qf(u, np.ones(g.shape), flat8).total == 0.0
        assert energy_ts(u, np.ones(g.face_shape), flat8).total == 0.0


def test_energy_of_mode(flat8):
    eps = 0.01
    u = mode(flat8.grid, eps=eps)
    W = flat8.cell_weight
    expect = eps**2 * (lam_h(1 / 8) + mu_h(1 / 8)) ** 2 * float(np.sum(W * (u / eps) ** 2))
    assert energy_qf(u, np.ones(flat8.grid.shape), flat8).total == pytest.approx(expect, rel=1e-12)


def test_energy_ts_constant_closed_form(flat8):
    kq = 0.2
    syn = synthetic_background(flat8.grid, Q0=kq)
    kp4 = kq * syn.volume
    c = 0.3
    e = energy_ts(np.full(flat8.grid.shape, c), np.ones(flat8.grid.face_shape), syn)
    expect = -4 / 3 * kp4 * (3 * c + math.log(syn.area)) + 4 * c * kp4
    assert e.total == pytest.approx(expect, rel=1e-12)
    assert e.total == pytest.approx(e.quadratic + e.linear - e.coefficient * e.log_term)


def test_energy_shift_invariance_flat(flat8):
    u = random_smooth_field(flat8.grid, 0.3, 1)
    F = 1 + 0.5 * np.cos(2 * np.pi * flat8.grid.coords()[0]) * np.ones(flat8.grid.shape)
    assert energy_qf(u + 0.4, F, flat8).total == pytest.approx(energy_qf(u, F, flat8).total, rel=1e-12)


def test_energy_rejects_nonpositive(flat8):
    with pytest.raises(ValueError):
        energy_qf(np.zeros(flat8.grid.shape), np.zeros(flat8.grid.shape), flat8)
    with pytest.raises(ValueError):
        energy_ts(np.zeros(flat8.grid.shape), np.zeros(flat8.grid.face_shape), flat8)


def test_energy_warns_on_bc_violation(flat8):
    x4 = flat8.grid.coords()[3]
    u = np.broadcast_to(x4, flat8.grid.shape)
    with pytest.warns(UserWarning, match="normal derivative"):
        energy_qf(u, np.ones(flat8.grid.shape), flat8, bc_tol=1e-6)


@pytest.mark.parametrize("name", ["flat8", "synthetic6"])
def test_gradient_consistency(name, request):
    """d/ds II(u + s phi) = 4 int (Q - (Qbar/Fbar) F) phi exp(4u) dV0 (up to the
    constant factor of the discrete form)."""
    geo = request.getfixturevalue(name)
    g = geo.grid
    u = random_smooth_field(g, 0.2, 2)
    phi = random_smooth_field(g, 1.0, 3)
    F = 1 + 0.3 * np.cos(2 * np.pi * g.coords()[0] / g.L1) * np.ones(g.shape)
    s = 1e-5
    fd = (energy_qf(u + s * phi, F, geo).total - energy_qf(u - s * phi, F, geo).total) / (2 * s)
    W = geo.cell_weight
    dv = W * np.exp(4 * u)
    Q = q_curvature(u, geo)
    tau = float(np.sum(dv * Q)) / float(np.sum(dv * F))
    exact = 4 * float(np.sum((Q - tau * F) * phi * dv))
    assert fd == pytest.approx(exact, rel=1e-6)


def test_mt_ratio_properties(flat8):
    u = mode(flat8.grid)
    assert mt_ratio(u, flat8, 0.0) == pytest.approx(flat8.volume, rel=1e-14)
    values = [mt_ratio(u, flat8, a) for a in (0.0, 1.0, 10.0, 100.0)]
    assert values[1] >= flat8.volume
    assert all(b >= a for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        mt_ratio(np.ones(flat8.grid.shape), flat8, 1.0)


def test_trace_mt_ratio_properties(flat8):
    u = mode(flat8.grid, m=0)
    assert trace_mt_ratio(u, flat8, 0.0) == pytest.approx(flat8.area, rel=1e-14)
    values = [trace_mt_ratio(u, flat8, a) for a in (0.0, 1.0, 10.0)]
    assert values[1] >= flat8.area
    assert all(b >= a for a, b in zip(values, values[1:]))
