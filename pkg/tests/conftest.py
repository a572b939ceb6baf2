import numpy as np
import pytest

from qtflow.geometry import build_grid, flat_background, synthetic_background


@pytest.fixture(scope="session")
def flat8():
    return flat_background(build_grid(8, 8, 8, 9))


@pytest.fixture(scope="session")
def flat_small():
    return flat_background(build_grid(4, 4, 4, 5))


@pytest.fixture(scope="session")
def synthetic6():
    """Formal background exercising every curvature term, nonuniform weights."""
    g = build_grid(6, 5, 4, 7, 1.0, 1.3, 0.8)
    rng = np.random.default_rng(3)
    x1, x2, x3, x4 = g.coords()
    R = 0.4 + 0.1 * np.cos(2 * np.pi * x1) * np.ones(g.shape)
    M = rng.normal(size=(4, 4)) * 0.05
    Ric = np.einsum("ij,...->ij...", M + M.T, 1 + 0.2 * np.cos(2 * np.pi * x4) * np.ones(g.shape))
    Lm = rng.normal(size=(3, 3)) * 0.05
    L = np.einsum("ij,...->ij...", Lm + Lm.T, np.ones(g.face_shape))
    h = g.spacing
    vw = h[0] * h[1] * h[2] * h[3] * (1 + 0.2 * rng.random(g.shape))
    aw = h[0] * h[1] * h[2] * (1 + 0.2 * rng.random(g.face_shape))
    return synthetic_background(
        g, R=R, Ric=Ric, L=L, Q0=0.3, H0=0.05 * rng.normal(size=g.face_shape),
        F_tilde=0.1, volume_weight=vw, area_weight=aw,
    )


def mode(grid, k1=1, m=1, eps=1.0):
    x1, _, _, x4 = grid.coords()
    return np.broadcast_to(eps * np.cos(2 * np.pi * k1 * x1 / grid.L1) * np.cos(m * np.pi * x4), grid.shape).copy()


def lam_h(h, k=1, L=1.0):
    return 2.0 * (1.0 - np.cos(2 * np.pi * k * h / L)) / h**2


def mu_h(h, m=1):
    return 2.0 * (1.0 - np.cos(m * np.pi * h)) / h**2
