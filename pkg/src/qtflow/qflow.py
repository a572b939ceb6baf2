"""Prescribed Q-curvature flow in the interior.

The conformal factor evolves by

    du/dt = -(Q_u - (mean Q / mean F) F),   2 Q_u exp(4u) = P4 u + 2 Q0,

with dn u = 0 and P3 u = 0 on the boundary.  Each step is linearly
implicit: with the lagged mass m = W exp(4u^n),

    (m + dt/2 K) delta = dt m rhs(u^n),     K = W * P43,

followed by a constant shift that restores the volume exactly (constants
span the kernel of P43).  Steps are accepted only if the energy does not
increase and the energy drop agrees with the dissipation law
dII/dt = -4 x(t) to within ``dissipation_tol``; otherwise dt is halved.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import conformal_weight, evolving_means, q_curvature, total_volume
from .diagnostics import DiagnosticsRecord
from .errors import FlowDiverged, FlowStuck, SolverError
from .functionals import energy_qf
from .operators import p43_apply, p43_bilinear
from .snapshot import write_snapshot
from .solvers import conjugate_gradient, stiffness_diagonal

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowConfig:
    dt0: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 0.1
    x_tol: float = 1e-8
    max_steps: int = 5000
    cg_tol: float = 1e-9
    cg_max_iter: int = 20000
    snapshot_every: int = 0
    dissipation_tol: float = 0.05
    growth: float = 1.5
    extension_tol: float = 1e-12  # boundary flow only

    def __post_init__(self):
        for name in ("dt0", "dt_min", "dt_max", "x_tol", "cg_tol", "dissipation_tol", "extension_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.dt_min <= self.dt0 <= self.dt_max:
            raise ValueError("need dt_min <= dt0 <= dt_max")
        if self.growth < 1:
            raise ValueError("growth must be >= 1")


@dataclass
class FlowState:
    u: np.ndarray
    t: float
    dt: float
    step_index: int
    energy: float
    x: float
    rhs: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)
    qbar: float = 0.0
    fbar: float = 1.0
    volume: float = 0.0
    diagnostics: DiagnosticsRecord | None = None

    @property
    def ratio(self):
        return self.qbar / self.fbar


@dataclass
class FlowResult:
    status: str  # converged | budget | diverged | stuck
    state: object
    records: list
    summary: dict
    message: str = ""


def qflow_rhs(u, geo, F):
    """-(Q_u - (mean Q / mean F) F), means against the evolving measure."""
    return _evaluate(u, geo, F)["rhs"]


def _evaluate(u, geo, F):
    Q = q_curvature(u, geo)
    means = evolving_means(u, geo, F, np.ones(geo.grid.face_shape), Q=Q, T=np.zeros(geo.grid.face_shape))
    tau = means.qbar / means.fbar
    G = Q - tau * F
    x = float(np.sum(geo.cell_weight * conformal_weight(u, 4.0) * G * G))
    return dict(Q=Q, G=G, rhs=-G, x=x, qbar=means.qbar, fbar=means.fbar, volume=means.volume)


def initial_state(u0, geo, F, config):
    u0 = np.array(u0, dtype=float)
    ev = _evaluate(u0, geo, F)
    return FlowState(
        u=u0, t=0.0, dt=config.dt0, step_index=0,
        energy=energy_qf(u0, F, geo).total, x=ev["x"], rhs=ev["rhs"], Q=ev["Q"],
        qbar=ev["qbar"], fbar=ev["fbar"], volume=ev["volume"],
    )


def semi_implicit_update(u, rhs, geo, dt, cg_tol=1e-9, cg_max_iter=20000, volume_target=None):
    """One linearly implicit step from u with the explicit right-hand side rhs.

    Returns (u_new, solve report).  With ``volume_target`` the result is
    shifted by a constant so that int exp(4u) dV0 equals the target.
    """
    W = geo.cell_weight
    m = W * conformal_weight(u, 4.0)

    def apply(d):
        return m * d + 0.5 * dt * W * p43_apply(d, geo)

    delta, report = conjugate_gradient(
        apply, dt * m * rhs, cg_tol, cg_max_iter,
        diag=m + 0.5 * dt * stiffness_diagonal(geo),
    )
    if not report.converged:
        raise SolverError(f"implicit solve did not converge (residual {report.final_residual:.3g})", report)
    u_new = u + delta
    if volume_target is not None:
        u_new += 0.25 * math.log(volume_target / total_volume(u_new, geo))
    return u_new, report


def dissipation_mismatch(e_old, e_new, x_old, x_new, dt, noise=1e-11):
    """Relative mismatch between the energy drop and -4 x dt (trapezoid in x).

    Returns 0 when the predicted drop is below the round-off floor of the
    energy.
    """
    predicted = -4.0 * 0.5 * (x_old + x_new) * dt
    actual = e_new - e_old
    if abs(predicted) <= noise * (1.0 + abs(e_old)):
        return 0.0
    return abs(actual - predicted) / abs(predicted)


def qflow_step(state, geo, F, config, volume_target=None):
    """Advance one accepted step, halving dt on rejection."""
    if volume_target is None:
        volume_target = state.volume
    dt = state.dt
    while True:
        u_new, report = semi_implicit_update(
            state.u, state.rhs, geo, dt, config.cg_tol, config.cg_max_iter, volume_target
        )
        ev = _evaluate(u_new, geo, F)
        e_new = energy_qf(u_new, F, geo).total
        slack = 1e-10 * (1.0 + abs(state.energy))
        err = dissipation_mismatch(state.energy, e_new, state.x, ev["x"], dt)
        if e_new <= state.energy + slack and err <= config.dissipation_tol:
            break
        dt *= 0.5
        if dt < config.dt_min:
            raise FlowStuck(f"time step underflow at t = {state.t:.6g}")
    next_dt = min(dt * config.growth, config.dt_max) if err <= config.dissipation_tol / 3 else dt
    new = FlowState(
        u=u_new, t=state.t + dt, dt=next_dt, step_index=state.step_index + 1,
        energy=e_new, x=ev["x"], rhs=ev["rhs"], Q=ev["Q"],
        qbar=ev["qbar"], fbar=ev["fbar"], volume=ev["volume"],
    )
    new.diagnostics = make_record(new, geo, dt, report.iterations, report.final_residual)
    return new


def make_record(state, geo, dt, cg_iters, residual):
    W = geo.cell_weight
    ubar = float(np.sum(W * state.u)) / float(W.sum())
    kappa = float(np.sum(W * state.Q * conformal_weight(state.u, 4.0))) + float(np.sum(geo.area_weight * geo.T0))
    return DiagnosticsRecord(
        step=state.step_index, t=state.t, dt=dt, energy=state.energy,
        volume=state.volume, mean_curvature=state.qbar, ratio=state.ratio, x_t=state.x,
        kappa=kappa, cg_iters=int(cg_iters), residual=float(residual),
        max_u=float(state.u.max()), min_u=float(state.u.min()),
        ubar_g0=ubar, h2_norm=p43_bilinear(state.u, state.u, geo) + ubar**2,
    )


def q_evolution_rhs(u, geo, F):
    """Right-hand side of the evolution law of G = Q - (mean Q / mean F) F:

        dG/dt = 4 G Q - 1/2 exp(-4u) P4 G - 4 (mean Q / mean F) F mean((F / mean F) G)

    with means against exp(4u) dV0.
    """
    ev = _evaluate(u, geo, F)
    G, Q = ev["G"], ev["Q"]
    tau = ev["qbar"] / ev["fbar"]
    dv = geo.cell_weight * conformal_weight(u, 4.0)
    mean_fg = float(np.sum(dv * F * G)) / ev["volume"] / ev["fbar"]
    return 4.0 * G * Q - 0.5 * conformal_weight(u, -4.0) * p43_apply(G, geo) - 4.0 * tau * F * mean_fg


def q_evolution_check(u0, u1, dt, geo, F):
    """Relative L2(dV0) mismatch between (G(u1) - G(u0)) / dt and the
    evolution law evaluated at u0."""
    if dt > 1e-3:
        raise ValueError(f"dt = {dt} too large for a meaningful comparison (need <= 1e-3)")
    fd = (_evaluate(u1, geo, F)["G"] - _evaluate(u0, geo, F)["G"]) / dt
    rhs = q_evolution_rhs(u0, geo, F)
    W = geo.cell_weight
    diff = math.sqrt(float(np.sum(W * (fd - rhs) ** 2)))
    scale = max(math.sqrt(float(np.sum(W * rhs**2))), math.sqrt(float(np.sum(W * fd**2))))
    return 0.0 if scale == 0.0 else diff / scale


def _summary(state, geo, F, status):
    W = geo.cell_weight
    vol0 = float(W.sum())
    mean = float(np.sum(W * state.u)) / vol0
    return {
        "status": status,
        "steps": state.step_index,
        "t": state.t,
        "x_t": state.x,
        "energy": state.energy,
        "volume": state.volume,
        "qbar": state.qbar,
        "ratio": state.ratio,
        "u_mean": mean,
        "u_oscillation": float(np.max(np.abs(state.u - mean))),
        "q_residual_l2": math.sqrt(state.x),
    }


def run_qflow(geo, F, config, u0=None, sink=None, snapshot_dir=None):
    """Integrate until x(t) <= x_tol or the step budget is exhausted."""
    if u0 is None:
        u0 = np.zeros(geo.grid.shape)
    F = np.broadcast_to(np.asarray(F, dtype=float), geo.grid.shape)
    if np.any(F <= 0):
        raise ValueError("F must be positive")
    records = []
    try:
        state = initial_state(u0, geo, F, config)
    except FlowDiverged as exc:
        return FlowResult("diverged", None, records, {"status": "diverged"}, str(exc))
    volume_target = state.volume
    state.diagnostics = make_record(state, geo, 0.0, 0, 0.0)

    def emit(s):
        records.append(s.diagnostics)
        if sink is not None:
            sink.emit(s.diagnostics)
        if snapshot_dir is not None and config.snapshot_every and s.step_index % config.snapshot_every == 0:
            write_snapshot(Path(snapshot_dir) / f"u_{s.step_index:06d}.pfld", s.u, geo.grid)

    emit(state)
    status, message = "budget", ""
    while True:
        if state.x <= config.x_tol:
            status = "converged"
            break
        if state.step_index >= config.max_steps:
            break
        try:
            state = qflow_step(state, geo, F, config, volume_target)
        except FlowDiverged as exc:
            status, message = "diverged", str(exc)
            break
        except (FlowStuck, SolverError) as exc:
            status, message = "stuck", str(exc)
            break
        emit(state)
        log.debug("step %d t=%.4g dt=%.3g x=%.3e E=%.6e", state.step_index, state.t,
                  state.diagnostics.dt, state.x, state.energy)
    if snapshot_dir is not None:
        write_snapshot(Path(snapshot_dir) / "u_final.pfld", state.u, geo.grid)
    return FlowResult(status, state, records, _summary(state, geo, F, status), message)

