"""Curvatures of the conformal metric g_u = exp(2u) g0 and the total curvature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FlowDiverged
from .operators import (
    FLOW_BC,
    chang_qing_p3,
    normal_derivative,
    p43_apply,
    variational_p3,
)

EXP_LIMIT = 700.0


def conformal_weight(u, power):
    """exp(power * u), treating an overflow of the exponent as flow divergence."""
    m = float(np.max(np.abs(u))) if np.size(u) else 0.0
    if not np.isfinite(m) or abs(power) * m > EXP_LIMIT:
        raise FlowDiverged(f"conformal factor out of range: max|u| = {m:.3g}")
    return np.exp(power * u)


@dataclass(frozen=True)
class ConformalCurvatures:
    Q: np.ndarray
    T: np.ndarray
    H: np.ndarray
    volume: float
    boundary_area: float


@dataclass(frozen=True)
class EvolvingMeans:
    qbar: float
    fbar: float
    tbar: float
    sbar: float
    volume: float
    area: float


def q_curvature(u, geo):
    """Q of g_u from P4 u + 2 Q0 = 2 Q_u exp(4u)."""
    return 0.5 * conformal_weight(u, -4.0) * (p43_apply(u, geo) + 2.0 * geo.Q0)


def t_curvature(u, geo, bc=FLOW_BC, variational=False):
    """T of g_u from P3 u + T0 = T_u exp(3u).

    ``variational=True`` uses the boundary operator induced by the discrete
    quadratic form (the one driving the boundary flow); otherwise the
    stencil form of P3 with one-sided normal derivatives.
    """
    p3 = variational_p3(u, geo) if variational else chang_qing_p3(u, geo, bc)
    return conformal_weight(geo.grid.trace(u), -3.0) * (p3 + geo.T0)


def mean_curvature(u, geo):
    """H of g_u from dn u + H0 = H_u exp(u)."""
    return conformal_weight(geo.grid.trace(u), -1.0) * (normal_derivative(u, geo) + geo.H0)


def total_volume(u, geo):
    return float(np.sum(geo.cell_weight * conformal_weight(u, 4.0)))


def boundary_area(v, geo):
    """Area of the boundary under exp(2v) g0; v is a face field."""
    return float(np.sum(geo.area_weight * conformal_weight(v, 3.0)))


def conformal_curvatures(u, geo):
    return ConformalCurvatures(
        Q=q_curvature(u, geo),
        T=t_curvature(u, geo),
        H=mean_curvature(u, geo),
        volume=total_volume(u, geo),
        boundary_area=boundary_area(geo.grid.trace(u), geo),
    )


def evolving_means(u, geo, F, S, Q=None, T=None):
    """Means of Q, F (against exp(4u) dV0) and T, S (against exp(3u) dS0)."""
    F = np.asarray(F, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(F <= 0):
        raise ValueError("F must be positive")
    if np.any(S <= 0):
        raise ValueError("S must be positive")
    dv = geo.cell_weight * conformal_weight(u, 4.0)
    ds = geo.area_weight * conformal_weight(geo.grid.trace(u), 3.0)
    if Q is None:
        Q = q_curvature(u, geo)
    if T is None:
        T = t_curvature(u, geo)
    vol = float(dv.sum())
    area = float(ds.sum())
    return EvolvingMeans(
        qbar=float(np.sum(Q * dv)) / vol,
        fbar=float(np.sum(F * dv)) / vol,
        tbar=float(np.sum(T * ds)) / area,
        sbar=float(np.sum(S * ds)) / area,
        volume=vol,
        area=area,
    )


def kappa_invariants(u, geo, bc=FLOW_BC):
    """(kappa_P4, kappa_P3, kappa) for g_u, with the stencil P3."""
    kp4 = float(np.sum(geo.cell_weight * q_curvature(u, geo) * conformal_weight(u, 4.0)))
    T = t_curvature(u, geo, bc)
    kp3 = float(np.sum(geo.area_weight * T * conformal_weight(geo.grid.trace(u), 3.0)))
    return kp4, kp3, kp4 + kp3


def background_kappa(geo):
    """kappa of g0 itself: int Q0 dV0 + int T0 dS0."""
    return float(np.sum(geo.cell_weight * geo.Q0) + np.sum(geo.area_weight * geo.T0))
