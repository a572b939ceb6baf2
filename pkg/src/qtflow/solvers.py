"""Matrix-free conjugate gradients and the biharmonic extension."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .operators import p43_apply


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def conjugate_gradient(apply, rhs, tol=1e-9, max_iter=10000, guess=None, diag=None, callback=None):
    """Preconditioned CG for a symmetric positive-definite ``apply``.

    Works on arrays of any shape.  ``diag`` is an optional Jacobi
    preconditioner (array broadcastable to rhs; zero entries are left
    unpreconditioned).  Convergence is ||apply(x) - rhs|| <= tol ||rhs||.
    """
    rhs = np.asarray(rhs, dtype=float)
    bnorm = math.sqrt(float(np.vdot(rhs, rhs)))
    x = np.zeros_like(rhs) if guess is None else np.array(guess, dtype=float)
    if bnorm == 0.0:
        x[...] = 0.0
        return x, SolveReport(0, 0.0, True, [0.0])
    if diag is None:
        inv = None
    else:
        d = np.broadcast_to(np.asarray(diag, dtype=float), rhs.shape)
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    r = rhs - apply(x) if guess is not None else rhs.copy()
    res = math.sqrt(float(np.vdot(r, r))) / bnorm
    history = [res]
    if res <= tol:
        return x, SolveReport(0, res, True, history)
    z = r * inv if inv is not None else r
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = float(np.vdot(p, Ap))
        if not np.isfinite(pAp):
            report = SolveReport(it, float("nan"), False, history)
            raise SolverError("NaN encountered in conjugate gradient", report)
        if pAp <= 0:
            raise SolverError("operator is not positive definite", SolveReport(it, res, False, history))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = math.sqrt(float(np.vdot(r, r))) / bnorm
        history.append(res)
        if callback is not None:
            callback(x)
        if not np.isfinite(res):
            raise SolverError("NaN encountered in conjugate gradient", SolveReport(it, res, False, history))
        if res <= tol:
            return x, SolveReport(it, res, True, history)
        z = r * inv if inv is not None else r
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(max_iter, res, False, history)


def stiffness_diagonal(geo):
    """Approximate diagonal of the weighted P43 matrix W * p43_apply.

    Uses the periodic-interior value of diag(Lap^2) everywhere; only meant
    as a Jacobi preconditioner.
    """
    inv_h2 = [2.0 / h**2 for h in geo.grid.spacing]
    d = sum(inv_h2) ** 2 + sum(c**2 / 2.0 for c in inv_h2)
    return geo.cell_weight * d


def _interior_mask(geo):
    m = np.ones(geo.grid.shape)
    m[..., 0] = 0.0
    m[..., -1] = 0.0
    return m


def weighted_p43(geo):
    W = geo.cell_weight
    return lambda u: W * p43_apply(u, geo)


def solve_constrained_biharmonic(dirichlet, geo, tol=1e-9, max_iter=20000, guess=None):
    """Solve P4 w = 0 inside, w = v on both faces, dn w = 0 (reflection).

    Face values are eliminated into the right-hand side; the interior system
    (the interior block of the symmetric weighted P43 matrix) is solved by CG.
    Returns (w, report); report.final_residual is relative to the size of the
    eliminated boundary data.
    """
    v = np.asarray(dirichlet, dtype=float)
    if v.shape != geo.grid.face_shape:
        raise ValueError(f"boundary data shape {v.shape} != {geo.grid.face_shape}")
    K = weighted_p43(geo)
    mask = _interior_mask(geo)
    lift = np.zeros(geo.grid.shape)
    lift[..., 0] = v[0]
    lift[..., -1] = v[1]
    rhs = -mask * K(lift)
    if guess is None:
        s = np.linspace(0.0, 1.0, geo.grid.n4)
        guess = (1.0 - s) * v[0][..., None] + s * v[1][..., None]
    x0 = mask * guess

    def apply(x):
        return mask * K(mask * x)

    x, report = conjugate_gradient(apply, rhs, tol, max_iter, guess=x0, diag=mask * stiffness_diagonal(geo))
    if not report.converged:
        raise SolverError(
            f"extension did not converge: residual {report.final_residual:.3g}", report
        )
    return lift + mask * x, report
