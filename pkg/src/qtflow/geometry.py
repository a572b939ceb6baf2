"""Discretized manifold T^3 x [0, 1] and its background geometry.

Fields on the manifold are plain ``numpy`` arrays of shape ``grid.shape``
(C order, x4 fastest).  Boundary fields have shape ``grid.face_shape``
(``(2, n1, n2, n3)``): index 0 is the face x4 = 0, index 1 the face x4 = 1.
A single face may also be given as an ``(n1, n2, n3)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


class GeometryError(ValueError):
    pass


FACES = {"x4=0": 0, "x4=1": 1}


@dataclass(frozen=True)
class Grid:
    n1: int
    n2: int
    n3: int
    n4: int
    L1: float = 1.0
    L2: float = 1.0
    L3: float = 1.0

    @property
    def shape(self):
        return (self.n1, self.n2, self.n3, self.n4)

    @property
    def face_shape(self):
        return (2, self.n1, self.n2, self.n3)

    @property
    def spacing(self):
        return (self.L1 / self.n1, self.L2 / self.n2, self.L3 / self.n3, 1.0 / (self.n4 - 1))

    @property
    def lengths(self):
        return (self.L1, self.L2, self.L3, 1.0)

    @property
    def size(self):
        return self.n1 * self.n2 * self.n3 * self.n4

    def axes(self):
        """1D coordinate arrays for x1..x4."""
        h = self.spacing
        return tuple(np.arange(n) * hi for n, hi in zip(self.shape, h))

    def coords(self):
        """Broadcastable coordinate arrays (x1, x2, x3, x4) over the volume grid."""
        return np.meshgrid(*self.axes(), indexing="ij", sparse=True)

    def face_coords(self):
        """Broadcastable (x1, x2, x3) over one face."""
        return np.meshgrid(*self.axes()[:3], indexing="ij", sparse=True)

    def trace(self, u):
        """Restrict a volume field to both boundary faces."""
        return np.stack([u[..., 0], u[..., -1]])


def build_grid(n1, n2, n3, n4, L1=1.0, L2=1.0, L3=1.0):
    for axis, n, minimum in (("n1", n1, 4), ("n2", n2, 4), ("n3", n3, 4), ("n4", n4, 5)):
        if int(n) != n or n < minimum:
            raise GridError(f"{axis} = {n} is too small: need {axis} >= {minimum}")
    for axis, length in (("L1", L1), ("L2", L2), ("L3", L3)):
        if not length > 0:
            raise GridError(f"{axis} must be positive, got {length}")
    return Grid(int(n1), int(n2), int(n3), int(n4), float(L1), float(L2), float(L3))


@dataclass(frozen=True, eq=False)
class BackgroundGeometry:
    """Background metric data g0 on M and its boundary.

    ``Ric`` has shape ``(4, 4) + grid.shape`` and ``L`` (second fundamental
    form) has shape ``(3, 3) + grid.face_shape``.  ``F_tilde`` is the
    curvature scalar R^a_nan entering the boundary operator; it cannot be
    derived from the other fields and defaults to zero.
    """

    grid: Grid
    R: np.ndarray
    Ric: np.ndarray
    Q0: np.ndarray
    H0: np.ndarray
    T0: np.ndarray
    L: np.ndarray
    volume_weight: np.ndarray
    area_weight: np.ndarray
    F_tilde: np.ndarray
    kind: str = "flat"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def is_flat(self):
        return self.kind == "flat"

    @property
    def cell_weight(self):
        """Volume quadrature weights: volume_weight with the x4 trapezoid halving."""
        w = self._cache.get("cell_weight")
        if w is None:
            w = self.volume_weight.copy()
            w[..., 0] *= 0.5
            w[..., -1] *= 0.5
            w.setflags(write=False)
            self._cache["cell_weight"] = w
        return w

    @property
    def volume(self):
        return float(self.cell_weight.sum())

    @property
    def area(self):
        return float(self.area_weight.sum())

    def has_gradient_terms(self):
        return bool(np.any(self.R != 0) or np.any(self.Ric != 0))

    def has_boundary_terms(self):
        return bool(np.any(self.L != 0))


def _flat_fields(grid):
    h = grid.spacing
    return dict(
        R=np.zeros(grid.shape),
        Ric=np.zeros((4, 4) + grid.shape),
        Q0=np.zeros(grid.shape),
        H0=np.zeros(grid.face_shape),
        T0=np.zeros(grid.face_shape),
        L=np.zeros((3, 3) + grid.face_shape),
        volume_weight=np.full(grid.shape, h[0] * h[1] * h[2] * h[3]),
        area_weight=np.full(grid.face_shape, h[0] * h[1] * h[2]),
        F_tilde=np.zeros(grid.face_shape),
    )


def flat_background(grid):
    """Flat product metric with totally geodesic boundary."""
    return BackgroundGeometry(grid=grid, kind="flat", **_flat_fields(grid))


def synthetic_background(grid, **fields):
    """Formal background built from user-supplied curvature fields.

    Missing fields default to their flat values.  Scalars are broadcast.
    The fields are not checked for consistency with an actual metric.
    """
    base = _flat_fields(grid)
    unknown = set(fields) - set(base)
    if unknown:
        raise GeometryError(f"unknown background fields: {sorted(unknown)}")
    out = {}
    for name, default in base.items():
        value = fields.get(name)
        if value is None:
            out[name] = default
            continue
        try:
            arr = np.broadcast_to(np.asarray(value, dtype=float), default.shape).copy()
        except ValueError:
            raise GeometryError(
                f"field {name} has shape {np.shape(value)}, expected {default.shape}"
            ) from None
        if not np.all(np.isfinite(arr)):
            raise GeometryError(f"field {name} has non-finite values")
        out[name] = arr
    for name in ("Ric", "L"):
        t = out[name]
        scale = max(1.0, float(np.abs(t).max()))
        if not np.allclose(t, np.swapaxes(t, 0, 1), rtol=0.0, atol=1e-12 * scale):
            raise GeometryError(f"{name} is not symmetric")
    for name in ("volume_weight", "area_weight"):
        if np.any(out[name] <= 0):
            raise GeometryError(f"{name} must be strictly positive")
    return BackgroundGeometry(grid=grid, kind="synthetic", **out)


def _check_shape(f, shape, what):
    f = np.asarray(f, dtype=float)
    if f.shape != shape:
        raise GeometryError(f"{what} has shape {f.shape}, grid expects {shape}")
    return f


def integrate_volume(f, geo):
    """Integral of f against dV0 (trapezoid across x4, exact periodic sums)."""
    f = _check_shape(f, geo.grid.shape, "field")
    return float(np.sum(f * geo.cell_weight))


def integrate_boundary(f, geo, face="both"):
    """Integral of a boundary field against dS0 over one or both faces."""
    if face == "both":
        f = _check_shape(f, geo.grid.face_shape, "boundary field")
        return float(np.sum(f * geo.area_weight))
    idx = FACES[face]
    f = np.asarray(f, dtype=float)
    if f.shape == geo.grid.face_shape:
        f = f[idx]
    f = _check_shape(f, geo.grid.face_shape[1:], "face field")
    return float(np.sum(f * geo.area_weight[idx]))
