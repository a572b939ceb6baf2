"""Energy functionals of the two flows and Moser-Trudinger diagnostics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .conformal import background_kappa, conformal_weight
from .operators import normal_derivative, p43_bilinear

# Sharp thresholds, displayed next to the ratios only.
MT_THRESHOLD = 16 * math.pi**2
TRACE_MT_THRESHOLD = 12 * math.pi**2


@dataclass(frozen=True)
class EnergyBreakdown:
    quadratic: float
    linear: float
    log_term: float
    coefficient: float

    @property
    def total(self):
        return self.quadratic + self.linear - self.coefficient * self.log_term


def _warn_bc(u, geo, bc_tol):
    if bc_tol is None:
        return
    dn = float(np.max(np.abs(normal_derivative(u, geo))))
    if dn > bc_tol:
        warnings.warn(f"u violates the zero normal derivative condition: max|dn u| = {dn:.3g}")


def energy_qf(u, F, geo, bc_tol=None):
    """II_{Q,F}(u) = <P43 u, u> + 4 int Q0 u dV0 - kappa log int F exp(4u) dV0."""
    F = np.asarray(F, dtype=float)
    if np.any(F <= 0):
        raise ValueError("F must be positive")
    _warn_bc(u, geo, bc_tol)
    W = geo.cell_weight
    return EnergyBreakdown(
        quadratic=p43_bilinear(u, u, geo),
        linear=4.0 * float(np.sum(W * geo.Q0 * u)),
        log_term=math.log(float(np.sum(W * F * conformal_weight(u, 4.0)))),
        coefficient=background_kappa(geo),
    )


def energy_ts(u, S, geo, bc_tol=None):
    """II_{T,S}(u) = <P43 u, u> + 4 int Q0 u dV0 + 4 int T0 u dS0
    - (4/3) kappa log int_dM S exp(3u) dS0."""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise ValueError("S must be positive")
    _warn_bc(u, geo, bc_tol)
    b = geo.grid.trace(u)
    linear = 4.0 * float(np.sum(geo.cell_weight * geo.Q0 * u))
    linear += 4.0 * float(np.sum(geo.area_weight * geo.T0 * b))
    return EnergyBreakdown(
        quadratic=p43_bilinear(u, u, geo),
        linear=linear,
        log_term=math.log(float(np.sum(geo.area_weight * S * conformal_weight(b, 3.0)))),
        coefficient=4.0 / 3.0 * background_kappa(geo),
    )


def _form_or_raise(u, geo):
    q = p43_bilinear(u, u, geo)
    if not q > 1e-14 * max(1.0, float(np.sum(geo.cell_weight * u * u))):
        raise ValueError("Moser-Trudinger ratio undefined for constant u")
    return q


def mt_ratio(u, geo, alpha):
    """int exp(alpha (u - mean_g0 u)^2 / <P43 u, u>) dV0."""
    q = _form_or_raise(u, geo)
    W = geo.cell_weight
    ubar = float(np.sum(W * u)) / float(W.sum())
    return float(np.sum(W * np.exp(alpha * (u - ubar) ** 2 / q)))


def trace_mt_ratio(u, geo, alpha):
    """int_dM exp(alpha (u - mean_dM u)^2 / <P43 u, u>) dS0."""
    q = _form_or_raise(u, geo)
    a = geo.area_weight
    b = geo.grid.trace(u)
    bbar = float(np.sum(a * b)) / float(a.sum())
    return float(np.sum(a * np.exp(alpha * (b - bbar) ** 2 / q)))
