"""Finite-difference operators on T^3 x [0, 1]: Laplacians, normal derivative,
the Paneitz operator P4, the boundary operator P3 and the coupled form P43.

Sign conventions.  ``laplacian`` is the analyst's Laplacian (div grad,
nonpositive).  The curvature operators follow the geometer's convention in
which the Laplacian is nonnegative, so that

    P4 u  = Lap^2 u - div(A grad u),          A = (2/3) R g - 2 Ric
    P3 u  = -1/2 dn(Lap u) - Lap_b(dn u) + (4/3) H Lap_b u
            + L_ab D_a D_b u + (2/3) grad H . grad u + (F - R/3) dn u

with ``dn`` the outward normal derivative.  With these signs

    <P43 u, v> = int P4 u v dV + 2 int P3 u v dS

for u, v with zero normal derivative, which is what makes the total
curvature int Q dV + int T dS a conformal invariant.

Boundary conditions are imposed with ghost values: even reflection of u
(zero normal derivative) and of Lap u (P3 u = 0 on flat backgrounds).
The discrete operator of the flows is the weighted gradient of the discrete
quadratic form, ``p43_apply(u) = W^-1 d/du (1/2 <P43 u, u>)``, with W the
trapezoidal volume weights.  On flat backgrounds it coincides with
``laplacian(laplacian(u))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import BackgroundGeometry, GeometryError


@dataclass(frozen=True)
class BoundaryConditionSet:
    neumann_zero: bool = True
    p3_zero: bool = True


FLOW_BC = BoundaryConditionSet(True, True)
NO_BC = BoundaryConditionSet(False, False)


def _check(u, geo):
    u = np.asarray(u, dtype=float)
    if u.shape != geo.grid.shape:
        raise GeometryError(f"field shape {u.shape} does not match grid {geo.grid.shape}")
    return u


def _check_face(v, geo):
    v = np.asarray(v, dtype=float)
    if v.shape != geo.grid.face_shape:
        raise GeometryError(
            f"boundary field shape {v.shape} does not match {geo.grid.face_shape}"
        )
    return v


# ---------------------------------------------------------------- weights

def _edge_weights(geo):
    """Quadrature weights on grid edges, per direction.

    Periodic directions average the (trapezoid-corrected) cell weights of the
    two end points; the x4 edges average the raw volume weights, so that the
    edge sum reproduces the reflected Neumann stencil exactly.
    """
    ew = geo._cache.get("edge_weights")
    if ew is None:
        W = geo.cell_weight
        vw = geo.volume_weight
        ew = [0.5 * (W + np.roll(W, -1, axis=i)) for i in range(3)]
        ew.append(0.5 * (vw[..., :-1] + vw[..., 1:]))
        geo._cache["edge_weights"] = ew
    return ew


def _face_edge_weights(geo):
    ea = geo._cache.get("face_edge_weights")
    if ea is None:
        a = geo.area_weight
        ea = [0.5 * (a + np.roll(a, -1, axis=i + 1)) for i in range(3)]
        geo._cache["face_edge_weights"] = ea
    return ea


def _edge_average(c, axis, periodic=True):
    if periodic:
        return 0.5 * (c + np.roll(c, -1, axis=axis))
    return 0.5 * (c[..., :-1] + c[..., 1:])


# ------------------------------------------------------------- stiffness

def _stiffness_axis(u, geo, i, coef=None):
    """K_i u for the edge form sum_edges w c (du/h)^2 along axis i (i = 0..3)."""
    h = geo.grid.spacing[i]
    ew = _edge_weights(geo)[i]
    if i < 3:
        flux = ew * (np.roll(u, -1, axis=i) - u) / h**2
        if coef is not None:
            flux *= _edge_average(coef, i)
        return np.roll(flux, 1, axis=i) - flux
    flux = ew * (u[..., 1:] - u[..., :-1]) / h**2
    if coef is not None:
        flux *= _edge_average(coef, 3, periodic=False)
    out = np.zeros_like(u)
    out[..., :-1] -= flux
    out[..., 1:] += flux
    return out


def _edge_products(u, v, geo, i, coef=None):
    h = geo.grid.spacing[i]
    ew = _edge_weights(geo)[i]
    if i < 3:
        du = np.roll(u, -1, axis=i) - u
        dv = np.roll(v, -1, axis=i) - v
        c = 1.0 if coef is None else _edge_average(coef, i)
    else:
        du = u[..., 1:] - u[..., :-1]
        dv = v[..., 1:] - v[..., :-1]
        c = 1.0 if coef is None else _edge_average(coef, 3, periodic=False)
    return float(np.sum(ew * c * du * dv)) / h**2


# --------------------------------------------------------- centered grads

def centered_gradient(u, geo, i):
    """Centered first difference along axis i; zero on the x4 faces (reflection)."""
    h = geo.grid.spacing[i]
    if i < 3:
        return (np.roll(u, -1, axis=i) - np.roll(u, 1, axis=i)) / (2 * h)
    out = np.zeros_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2 * h)
    return out


def _centered_gradient_adjoint(y, geo, i):
    h = geo.grid.spacing[i]
    if i < 3:
        return (np.roll(y, 1, axis=i) - np.roll(y, -1, axis=i)) / (2 * h)
    z = np.zeros_like(y)
    z[..., 1:-1] = y[..., 1:-1]
    out = np.zeros_like(y)
    out[..., 1:] += z[..., :-1]
    out[..., :-1] -= z[..., 1:]
    return out / (2 * h)


def _tangential_gradient(v, geo, a):
    """Centered difference of a face field (2, n1, n2, n3) along tangent axis a."""
    h = geo.grid.spacing[a]
    return (np.roll(v, -1, axis=a + 1) - np.roll(v, 1, axis=a + 1)) / (2 * h)


# ------------------------------------------------------------- laplacians

def laplacian(u, geo, bc=FLOW_BC):
    """Second-order Laplacian (div grad) with periodic x1..x3.

    With ``bc.neumann_zero`` the x4 faces use even reflection of u; the
    stencil is then the weighted form -W^-1 K u and is self-adjoint in the
    trapezoidal inner product.  Otherwise the faces use the one-sided
    stencil (2u0 - 5u1 + 4u2 - u3)/h^2, exact on cubics.
    """
    u = _check(u, geo)
    W = geo.cell_weight
    out = np.zeros_like(u)
    for i in range(3):
        out -= _stiffness_axis(u, geo, i)
    if bc.neumann_zero:
        out -= _stiffness_axis(u, geo, 3)
        return out / W
    out /= W
    h = geo.grid.spacing[3]
    d2 = np.empty_like(u)
    d2[..., 1:-1] = (u[..., 2:] - 2 * u[..., 1:-1] + u[..., :-2]) / h**2
    d2[..., 0] = (2 * u[..., 0] - 5 * u[..., 1] + 4 * u[..., 2] - u[..., 3]) / h**2
    d2[..., -1] = (2 * u[..., -1] - 5 * u[..., -2] + 4 * u[..., -3] - u[..., -4]) / h**2
    return out + d2


def boundary_laplacian(v, geo):
    """Periodic 7-point Laplacian on each boundary 3-torus (area-weighted form)."""
    v = _check_face(v, geo)
    a = geo.area_weight
    ea = _face_edge_weights(geo)
    out = np.zeros_like(v)
    for i in range(3):
        h = geo.grid.spacing[i]
        flux = ea[i] * (np.roll(v, -1, axis=i + 1) - v) / h**2
        out += flux - np.roll(flux, 1, axis=i + 1)
    return out / a


def normal_derivative(u, geo):
    """Outward normal derivative on both faces, one-sided second order."""
    u = _check(u, geo)
    h = geo.grid.spacing[3]
    bottom = (3 * u[..., 0] - 4 * u[..., 1] + u[..., 2]) / (2 * h)
    top = (3 * u[..., -1] - 4 * u[..., -2] + u[..., -3]) / (2 * h)
    return np.stack([bottom, top])


# -------------------------------------------------------- curvature terms

def gradient_tensor(geo):
    """A = (2/3) R g - 2 Ric, shape (4, 4) + grid.shape."""
    A = geo._cache.get("gradient_tensor")
    if A is None:
        A = -2.0 * geo.Ric
        for i in range(4):
            A[i, i] = A[i, i] + (2.0 / 3.0) * geo.R
        geo._cache["gradient_tensor"] = A
    return A


def _gradient_term_apply(u, geo):
    """K_A u: weighted operator of the form int A(grad u, grad v) dV."""
    A = gradient_tensor(geo)
    W = geo.cell_weight
    out = np.zeros_like(u)
    for i in range(4):
        if np.any(A[i, i] != 0):
            out += _stiffness_axis(u, geo, i, coef=A[i, i])
    grads = None
    for i in range(4):
        for j in range(4):
            if i == j or not np.any(A[i, j] != 0):
                continue
            if grads is None:
                grads = [centered_gradient(u, geo, k) for k in range(4)]
            out += _centered_gradient_adjoint(W * A[i, j] * grads[j], geo, i)
    return out


def _gradient_term_value(u, v, geo):
    A = gradient_tensor(geo)
    W = geo.cell_weight
    total = 0.0
    for i in range(4):
        if np.any(A[i, i] != 0):
            total += _edge_products(u, v, geo, i, coef=A[i, i])
    for i in range(4):
        for j in range(4):
            if i != j and np.any(A[i, j] != 0):
                gu = centered_gradient(u, geo, i)
                gv = centered_gradient(v, geo, j)
                total += float(np.sum(W * A[i, j] * gu * gv))
    return total


def _boundary_term_apply(b, geo):
    """Weighted face operator of int_dM L(grad b, grad c) dS, b a face field."""
    Lt = geo.L
    a = geo.area_weight
    ea = _face_edge_weights(geo)
    out = np.zeros_like(b)
    for i in range(3):
        if np.any(Lt[i, i] != 0):
            h = geo.grid.spacing[i]
            flux = ea[i] * _edge_average(Lt[i, i], i + 1) * (np.roll(b, -1, axis=i + 1) - b) / h**2
            out += np.roll(flux, 1, axis=i + 1) - flux
    for i in range(3):
        for j in range(3):
            if i != j and np.any(Lt[i, j] != 0):
                y = a * Lt[i, j] * _tangential_gradient(b, geo, j)
                h = geo.grid.spacing[i]
                out += (np.roll(y, 1, axis=i + 1) - np.roll(y, -1, axis=i + 1)) / (2 * h)
    return out


def _boundary_term_value(b, c, geo):
    Lt = geo.L
    a = geo.area_weight
    ea = _face_edge_weights(geo)
    total = 0.0
    for i in range(3):
        if np.any(Lt[i, i] != 0):
            h = geo.grid.spacing[i]
            db = np.roll(b, -1, axis=i + 1) - b
            dc = np.roll(c, -1, axis=i + 1) - c
            total += float(np.sum(ea[i] * _edge_average(Lt[i, i], i + 1) * db * dc)) / h**2
    for i in range(3):
        for j in range(3):
            if i != j and np.any(Lt[i, j] != 0):
                gb = _tangential_gradient(b, geo, i)
                gc = _tangential_gradient(c, geo, j)
                total += float(np.sum(a * Lt[i, j] * gb * gc))
    return total


# ------------------------------------------------------------- P4, P43

def paneitz_p4(u, geo, bc=FLOW_BC):
    """Paneitz operator of the background applied to u.

    Flat backgrounds: Lap(Lap u), reflecting u when ``bc.neumann_zero`` and
    Lap u when ``bc.p3_zero``.  Synthetic backgrounds add -div(A grad u).
    """
    u = _check(u, geo)
    first = BoundaryConditionSet(bc.neumann_zero, bc.neumann_zero)
    second = BoundaryConditionSet(bc.p3_zero, bc.p3_zero)
    out = laplacian(laplacian(u, geo, first), geo, second)
    if geo.has_gradient_terms():
        out += _gradient_term_apply(u, geo) / geo.cell_weight
    return out


def p43_apply(u, geo):
    """The flow operator: P4 with both boundary conditions plus the weak
    contribution of the second fundamental form term on the boundary slabs."""
    out = paneitz_p4(u, geo, FLOW_BC)
    if geo.has_boundary_terms():
        W = geo.cell_weight
        extra = -2.0 * _boundary_term_apply(geo.grid.trace(u), geo)
        out[..., 0] += extra[0] / W[..., 0]
        out[..., -1] += extra[1] / W[..., -1]
    return out


def p43_bilinear(u, v, geo):
    """Discrete <P43 u, v>: int Lap u Lap v + int A(grad u, grad v) - 2 int_dM L(grad u, grad v)."""
    u = _check(u, geo)
    v = _check(v, geo)
    W = geo.cell_weight
    lu = laplacian(u, geo)
    lv = lu if v is u else laplacian(v, geo)
    total = float(np.sum(W * lu * lv))
    if geo.has_gradient_terms():
        total += _gradient_term_value(u, v, geo)
    if geo.has_boundary_terms():
        total -= 2.0 * _boundary_term_value(geo.grid.trace(u), geo.grid.trace(v), geo)
    return total


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free operator on volume fields."""

    apply: Callable[[np.ndarray], np.ndarray]
    geo: BackgroundGeometry
    bc: BoundaryConditionSet = FLOW_BC

    def __call__(self, u):
        return self.apply(u)

    def weighted(self, u):
        """W * op(u): the symmetric (Euclidean) matrix form of the operator."""
        return self.geo.cell_weight * self.apply(u)

    def inner(self, u, v):
        return float(np.sum(self.geo.cell_weight * u * v))


def p43_operator(geo, bc=FLOW_BC):
    if not (bc.neumann_zero and bc.p3_zero):
        raise ValueError("the P43 operator requires both boundary conditions")
    return LinearOperator(apply=lambda u: p43_apply(u, geo), geo=geo, bc=bc)


def variational_p3(w, geo):
    """Boundary operator induced by the discrete form.

    For w satisfying the interior equation P4 w = 0,
    <P43 w, phi> = 2 sum_dM a * variational_p3(w) * phi, the discrete
    counterpart of the Green formula.  Used by the boundary flow.
    """
    r = geo.cell_weight * p43_apply(w, geo)
    return np.stack([r[..., 0], r[..., -1]]) / (2.0 * geo.area_weight)


# ------------------------------------------------------------------- P3

def tangential_hessian(v, geo, a, b):
    """D_a D_b of a face field: compact second difference for a == b,
    four-point corner stencil otherwise."""
    ha, hb = geo.grid.spacing[a], geo.grid.spacing[b]
    if a == b:
        return (np.roll(v, -1, axis=a + 1) - 2 * v + np.roll(v, 1, axis=a + 1)) / ha**2
    pp = np.roll(np.roll(v, -1, axis=a + 1), -1, axis=b + 1)
    pm = np.roll(np.roll(v, -1, axis=a + 1), 1, axis=b + 1)
    mp = np.roll(np.roll(v, 1, axis=a + 1), -1, axis=b + 1)
    mm = np.roll(np.roll(v, 1, axis=a + 1), 1, axis=b + 1)
    return (pp - pm - mp + mm) / (4 * ha * hb)


def chang_qing_p3(u, geo, bc=NO_BC):
    """Chang-Qing boundary operator evaluated with one-sided normal derivatives.

    ``bc`` selects the Laplacian used inside the normal derivative: with
    ``bc.neumann_zero`` the reflected stencil, otherwise the one-sided one.
    """
    u = _check(u, geo)
    lap = laplacian(u, geo, BoundaryConditionSet(bc.neumann_zero, bc.neumann_zero))
    dn = normal_derivative(u, geo)
    out = -0.5 * normal_derivative(lap, geo) - boundary_laplacian(dn, geo)
    if geo.is_flat:
        return out
    b = geo.grid.trace(u)
    if np.any(geo.H0 != 0):
        out += (4.0 / 3.0) * geo.H0 * boundary_laplacian(b, geo)
        for a in range(3):
            out += (2.0 / 3.0) * _tangential_gradient(geo.H0, geo, a) * _tangential_gradient(b, geo, a)
    for a in range(3):
        for c in range(3):
            if np.any(geo.L[a, c] != 0):
                out += geo.L[a, c] * tangential_hessian(b, geo, a, c)
    out += (geo.F_tilde - geo.grid.trace(geo.R) / 3.0) * dn
    return out
