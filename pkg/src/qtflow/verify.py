"""Operator verification report and flow hypothesis checks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .config import random_smooth_field
from .geometry import build_grid, flat_background
from .operators import laplacian, p43_apply, p43_bilinear, paneitz_p4

KAPPA_BOUND = 4 * math.pi**2


def lanczos(apply, start, weight, iterations=50):
    """Ritz values of a W-self-adjoint operator from ``iterations`` Lanczos
    steps in the inner product <a, b> = sum(weight a b), with full
    reorthogonalization."""
    def dot(a, b):
        return float(np.sum(weight * a * b))

    q = start / math.sqrt(dot(start, start))
    basis, alpha, beta = [q], [], []
    for j in range(iterations):
        z = apply(basis[-1])
        a = dot(basis[-1], z)
        alpha.append(a)
        for b in basis:
            z = z - dot(b, z) * b
        nb = math.sqrt(max(dot(z, z), 0.0))
        if j == iterations - 1 or nb < 1e-14 * (abs(a) + 1.0):
            break
        beta.append(nb)
        basis.append(z / nb)
    T = np.diag(alpha) + np.diag(beta[: len(alpha) - 1], 1) + np.diag(beta[: len(alpha) - 1], -1)
    return np.linalg.eigvalsh(T)


def mode_eigenvalue(grid, k1=1, m=1):
    """Discrete eigenvalue (lambda_h + mu_h)^2 of cos(2 pi k1 x1/L1) cos(m pi x4)."""
    h1, h4 = grid.spacing[0], grid.spacing[3]
    lam = 2.0 * (1.0 - math.cos(2 * math.pi * k1 * h1 / grid.L1)) / h1**2
    mu = 2.0 * (1.0 - math.cos(m * math.pi * h4)) / h4**2
    return (lam + mu) ** 2


def continuum_mode_eigenvalue(L1=1.0, k1=1, m=1):
    return ((2 * math.pi * k1 / L1) ** 2 + (m * math.pi) ** 2) ** 2


def rayleigh_mode(geo, k1=1, m=1):
    """<op u, u>_W / <u, u>_W for u = cos(2 pi k1 x1/L1) cos(m pi x4)."""
    x1, _, _, x4 = geo.grid.coords()
    u = np.broadcast_to(np.cos(2 * np.pi * k1 * x1 / geo.grid.L1) * np.cos(m * np.pi * x4), geo.grid.shape)
    W = geo.cell_weight
    return float(np.sum(W * p43_apply(u, geo) * u)) / float(np.sum(W * u * u))


def observed_order(errors, spacings):
    """Least-squares slope of log(error) against log(h)."""
    e, h = np.log(np.asarray(errors)), np.log(np.asarray(spacings))
    return float(np.polyfit(h, e, 1)[0])


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    tolerance: float
    sense: str = "<="  # or ">="

    @property
    def passed(self):
        if not math.isfinite(self.measured):
            return False
        return self.measured <= self.tolerance if self.sense == "<=" else self.measured >= self.tolerance


def operator_checks(geo, seed=0, lanczos_iterations=50):
    """Symmetry, kernel, nonnegativity, bilinear compatibility and the
    discrete mode eigenvalue on the given background."""
    W = geo.cell_weight
    grid = geo.grid
    u = random_smooth_field(grid, 1.0, seed)
    v = random_smooth_field(grid, 1.0, seed + 1)
    nu = math.sqrt(float(np.sum(W * u * u)))
    nv = math.sqrt(float(np.sum(W * v * v)))
    ouv = float(np.sum(W * p43_apply(u, geo) * v))
    ovu = float(np.sum(W * p43_apply(v, geo) * u))
    checks = [Check("symmetry |<Pu,v> - <u,Pv>| / (|u||v|)", abs(ouv - ovu) / (nu * nv), 1e-10)]
    one = p43_apply(np.ones(grid.shape), geo)
    checks.append(Check("kernel max|P43 1|", float(np.abs(one).max()), 1e-12))
    b = p43_bilinear(u, v, geo)
    checks.append(Check("bilinear vs operator (relative)", abs(b - ouv) / max(abs(b), 1e-300), 1e-8))
    start = np.random.Generator(np.random.PCG64(seed)).standard_normal(grid.shape)
    ritz = lanczos(lambda x: p43_apply(x, geo), start, W, lanczos_iterations)
    checks.append(Check("Lanczos min Ritz / max Ritz", float(ritz[0] / ritz[-1]), -1e-8, ">="))
    # Second eigenvalue: deflate the constants and repeat.
    start = start - float(np.sum(W * start)) / float(W.sum())
    ritz2 = lanczos(lambda x: p43_apply(x, geo), start, W, lanczos_iterations)
    checks.append(Check("Lanczos smallest Ritz value off the constants", float(ritz2[0]), 0.0, ">="))
    if geo.is_flat:
        checks.append(Check("flat reduction max|P4 - Lap Lap| / max|P4|",
                            float(np.abs(paneitz_p4(u, geo) - laplacian(laplacian(u, geo), geo)).max()
                                  / np.abs(paneitz_p4(u, geo)).max()), 1e-12))
        exact = mode_eigenvalue(grid)
        checks.append(Check("mode eigenvalue vs (lambda_h + mu_h)^2 (relative)",
                            abs(rayleigh_mode(geo) - exact) / exact, 1e-8))
    return checks


def consistency_checks(levels=(8, 12, 16)):
    """Order of convergence of the mode eigenvalue to ((2 pi)^2 + pi^2)^2."""
    target = continuum_mode_eigenvalue()
    errors, hs = [], []
    for n in levels:
        geo = flat_background(build_grid(n, n, n, n + 1))
        errors.append(abs(rayleigh_mode(geo) - target) / target)
        hs.append(1.0 / n)
    return [Check(f"consistency order over n = {list(levels)}", observed_order(errors, hs), 1.8, ">=")], errors


def hypothesis_checks(geo, seed=0, tol=1e-8):
    """Standing hypotheses of the Q-flow: P43 nonnegative, T0 = 0, H0 = 0,
    kappa < 4 pi^2."""
    W = geo.cell_weight
    start = np.random.Generator(np.random.PCG64(seed)).standard_normal(geo.grid.shape)
    ritz = lanczos(lambda x: p43_apply(x, geo), start, W, 50)
    kappa = float(np.sum(W * geo.Q0)) + float(np.sum(geo.area_weight * geo.T0))
    return [
        Check("P43 nonnegative (min Ritz / max Ritz)", float(ritz[0] / ritz[-1]), -tol, ">="),
        Check("T0 = 0 (max|T0|)", float(np.abs(geo.T0).max()), tol),
        Check("H0 = 0 (max|H0|)", float(np.abs(geo.H0).max()), tol),
        Check("kappa < 4 pi^2 (kappa - 4 pi^2)", kappa - KAPPA_BOUND, 0.0, "<="),
    ]


def format_checks(checks, title):
    lines = [title]
    for c in checks:
        lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.measured:.3e} ({c.sense} {c.tolerance:.1e})")
    return "\n".join(lines) + "\n"


def checks_csv(checks):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "measured", "sense", "tolerance", "passed"])
    for c in checks:
        w.writerow([c.name, repr(c.measured), c.sense, repr(c.tolerance), int(c.passed)])
    return buf.getvalue()
