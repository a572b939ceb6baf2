"""Prescribed T-curvature flow on the boundary.

The boundary trace v of the conformal factor evolves by

    dv/dt = -(T_v - (mean T / mean S) S),   T_v exp(3v) = P3 w + T0,

where w is the biharmonic extension of v (P4 w = 0 inside, w = v and
dn w = 0 on the boundary), so Q stays zero in the interior.  P3 is the
boundary operator of the discrete form, for which
<P43 w, phi> = 2 int_dM P3 w phi dS0 whenever w is an extension.

The implicit step (M + dt K_b) delta = dt M rhs, with M = exp(3v) dS0 and
K_b the Schur complement of the weighted P43 matrix onto the faces, is
solved as one symmetric system on the whole grid,

    (D + dt/2 K) delta = dt D rhs,   D = exp(3v) dS0 on the face slabs, 0 inside,

whose interior rows force delta to be the extension of its trace.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conformal import background_kappa, boundary_area, conformal_weight
from .diagnostics import DiagnosticsRecord
from .errors import FlowDiverged, FlowStuck, SolverError
from .functionals import energy_ts
from .operators import p43_apply, p43_bilinear, variational_p3
from .qflow import FlowConfig, FlowResult, dissipation_mismatch
from .snapshot import BOTH_FACES, write_snapshot
from .solvers import conjugate_gradient, solve_constrained_biharmonic, stiffness_diagonal

log = logging.getLogger(__name__)


@dataclass
class BoundaryFlowState:
    v: np.ndarray
    w: np.ndarray
    t: float
    dt: float
    step_index: int
    energy: float
    x: float
    rhs: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)
    tbar: float = 0.0
    sbar: float = 1.0
    area: float = 0.0
    extension_residual: float = 0.0
    diagnostics: DiagnosticsRecord | None = None

    @property
    def ratio(self):
        return self.tbar / self.sbar


def _require_q_flat(geo):
    if np.any(geo.Q0 != 0):
        raise ValueError("the boundary flow needs a background with Q0 = 0")


def extend(v, geo, tol=1e-9, guess=None):
    """Biharmonic extension of boundary data v (see solve_constrained_biharmonic)."""
    _require_q_flat(geo)
    w, _ = solve_constrained_biharmonic(v, geo, tol, guess=guess)
    return w


def boundary_stiffness(v, geo, tol=1e-9):
    """K_b v = 2 dS0 * P3(extend(v)): the symmetric boundary form, one
    extension solve per application."""
    return 2.0 * geo.area_weight * variational_p3(extend(v, geo, tol), geo)


def operator_A(v, u_current, geo, tol=1e-9):
    """A v = -exp(-3u) P3 (extension of v)."""
    w = extend(v, geo, tol)
    return -conformal_weight(u_current, -3.0) * variational_p3(w, geo)


def _evaluate(v, w, geo, S):
    ds = geo.area_weight * conformal_weight(v, 3.0)
    T = conformal_weight(v, -3.0) * (variational_p3(w, geo) + geo.T0)
    area = float(ds.sum())
    tbar = float(np.sum(ds * T)) / area
    sbar = float(np.sum(ds * S)) / area
    G = T - (tbar / sbar) * S
    return dict(T=T, G=G, rhs=-G, x=float(np.sum(ds * G * G)), tbar=tbar, sbar=sbar, area=area)


def interior_residual(w, geo):
    """||P4 w||_{L2(dV0)} over the interior nodes (Q of the extension is
    -1/2 exp(-4w) of this)."""
    r = p43_apply(w, geo)[..., 1:-1]
    return math.sqrt(float(np.sum(geo.cell_weight[..., 1:-1] * r * r)))


def tflow_rhs(state, geo, S):
    return _evaluate(state.v, state.w, geo, S)["rhs"]


def initial_boundary_state(v0, geo, S, config):
    v0 = np.array(v0, dtype=float)
    w, _ = solve_constrained_biharmonic(v0, geo, config.extension_tol, config.cg_max_iter)
    ev = _evaluate(v0, w, geo, S)
    return BoundaryFlowState(
        v=v0, w=w, t=0.0, dt=config.dt0, step_index=0, energy=energy_ts(w, S, geo).total,
        x=ev["x"], rhs=ev["rhs"], T=ev["T"], tbar=ev["tbar"], sbar=ev["sbar"], area=ev["area"],
        extension_residual=interior_residual(w, geo),
    )


def boundary_update(state, geo, dt, cg_tol=1e-9, cg_max_iter=20000, area_target=None, ext_tol=1e-12):
    """One linearly implicit boundary step; returns (v, w, step report, extension report)."""
    W = geo.cell_weight
    face_mass = geo.area_weight * conformal_weight(state.v, 3.0)
    D = np.zeros(geo.grid.shape)
    D[..., 0] = face_mass[0]
    D[..., -1] = face_mass[1]
    rhs = np.zeros(geo.grid.shape)
    rhs[..., 0] = face_mass[0] * state.rhs[0]
    rhs[..., -1] = face_mass[1] * state.rhs[1]

    def apply(d):
        return D * d + 0.5 * dt * W * p43_apply(d, geo)

    delta, report = conjugate_gradient(
        apply, dt * rhs, cg_tol, cg_max_iter, diag=D + 0.5 * dt * stiffness_diagonal(geo)
    )
    if not report.converged:
        raise SolverError(f"implicit boundary solve did not converge ({report.final_residual:.3g})", report)
    v = state.v + geo.grid.trace(delta)
    shift = 0.0
    if area_target is not None:
        shift = math.log(area_target / boundary_area(v, geo)) / 3.0
        v = v + shift
    w, ext = solve_constrained_biharmonic(v, geo, ext_tol, cg_max_iter, guess=state.w + delta + shift)
    return v, w, report, ext


def tflow_step(state, geo, S, config, area_target=None):
    if area_target is None:
        area_target = state.area
    dt = state.dt
    while True:
        v, w, report, ext = boundary_update(
            state, geo, dt, config.cg_tol, config.cg_max_iter, area_target, config.extension_tol
        )
        ev = _evaluate(v, w, geo, S)
        e_new = energy_ts(w, S, geo).total
        slack = 1e-10 * (1.0 + abs(state.energy))
        err = dissipation_mismatch(state.energy, e_new, state.x, ev["x"], dt)
        if e_new <= state.energy + slack and err <= config.dissipation_tol:
            break
        dt *= 0.5
        if dt < config.dt_min:
            raise FlowStuck(f"time step underflow at t = {state.t:.6g}")
    next_dt = min(dt * config.growth, config.dt_max) if err <= config.dissipation_tol / 3 else dt
    new = BoundaryFlowState(
        v=v, w=w, t=state.t + dt, dt=next_dt, step_index=state.step_index + 1, energy=e_new,
        x=ev["x"], rhs=ev["rhs"], T=ev["T"], tbar=ev["tbar"], sbar=ev["sbar"], area=ev["area"],
        extension_residual=interior_residual(w, geo),
    )
    new.diagnostics = make_record(new, geo, dt, report.iterations + ext.iterations, new.extension_residual)
    return new


def make_record(state, geo, dt, cg_iters, residual):
    a = geo.area_weight
    vbar = float(np.sum(a * state.v)) / float(a.sum())
    # Q vanishes inside by construction; kappa is the boundary total.
    kappa = float(np.sum(a * state.T * conformal_weight(state.v, 3.0)))
    return DiagnosticsRecord(
        step=state.step_index, t=state.t, dt=dt, energy=state.energy,
        volume=state.area, mean_curvature=state.tbar, ratio=state.ratio, x_t=state.x,
        kappa=kappa, cg_iters=int(cg_iters), residual=float(residual),
        max_u=float(state.v.max()), min_u=float(state.v.min()),
        ubar_g0=vbar, h2_norm=p43_bilinear(state.w, state.w, geo) + vbar**2,
    )


def _summary(state, geo, status):
    a = geo.area_weight
    mean = float(np.sum(a * state.v)) / float(a.sum())
    return {
        "status": status,
        "steps": state.step_index,
        "t": state.t,
        "x_T": state.x,
        "energy": state.energy,
        "area": state.area,
        "tbar": state.tbar,
        "ratio": state.ratio,
        "v_mean": mean,
        "v_oscillation": float(np.max(np.abs(state.v - mean))),
        "t_residual_l2": math.sqrt(state.x),
        "extension_residual": state.extension_residual,
        "kappa_background": background_kappa(geo),
    }


def run_tflow(geo, S, config, v0=None, sink=None, snapshot_dir=None):
    """Integrate the boundary flow until x_T(t) <= x_tol or the budget is exhausted."""
    _require_q_flat(geo)
    if v0 is None:
        v0 = np.zeros(geo.grid.face_shape)
    S = np.broadcast_to(np.asarray(S, dtype=float), geo.grid.face_shape)
    if np.any(S <= 0):
        raise ValueError("S must be positive")
    records = []
    try:
        state = initial_boundary_state(v0, geo, S, config)
    except FlowDiverged as exc:
        return FlowResult("diverged", None, records, {"status": "diverged"}, str(exc))
    area_target = state.area
    state.diagnostics = make_record(state, geo, 0.0, 0, state.extension_residual)

    def emit(s):
        records.append(s.diagnostics)
        if sink is not None:
            sink.emit(s.diagnostics)
        if snapshot_dir is not None and config.snapshot_every and s.step_index % config.snapshot_every == 0:
            write_snapshot(Path(snapshot_dir) / f"v_{s.step_index:06d}.pfld", s.v, geo.grid, BOTH_FACES)

    emit(state)
    status, message = "budget", ""
    while True:
        if state.x <= config.x_tol:
            status = "converged"
            break
        if state.step_index >= config.max_steps:
            break
        try:
            state = tflow_step(state, geo, S, config, area_target)
        except FlowDiverged as exc:
            status, message = "diverged", str(exc)
            break
        except (FlowStuck, SolverError) as exc:
            status, message = "stuck", str(exc)
            break
        emit(state)
        log.debug("step %d t=%.4g x_T=%.3e E=%.6e", state.step_index, state.t, state.x, state.energy)
    if snapshot_dir is not None:
        write_snapshot(Path(snapshot_dir) / "v_final.pfld", state.v, geo.grid, BOTH_FACES)
        write_snapshot(Path(snapshot_dir) / "w_final.pfld", state.w, geo.grid)
    return FlowResult(status, state, records, _summary(state, geo, status), message)
