"""From scattering data to the conductivity: Fourier inversion, the nonlinear
Dirichlet problem Δw + |∇w|² = q in B_R with w = 0 on the sphere, and γ = e^{2w}.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from . import sphere
from .errors import SolverError
from .forward import BallBasis, composite_gauss
from .grids import PotentialGrid, ScatteringGrid
from .sphere import degree_arrays

log = logging.getLogger(__name__)


def invert_fourier(sg: ScatteringGrid, half_width: float, n: int, imag_tol: float = 1e-6) -> PotentialGrid:
    """q(x) = (2π)^{-3} Σ_k q̂(k) e^{-ix·k} Δk³ on the x-grid (q̂(k) = ∫ q e^{ix·k} dx).

    The sum factorizes over axes.  The imaginary part is discarded when it is
    at most ``imag_tol`` relative to the real part.
    """
    g = PotentialGrid.zeros(half_width, n, name="q")
    E = np.exp(-1j * np.outer(g.axis, sg.axis))  # (n_x, n_k)
    q = np.einsum("ai,bj,ck,ijk->abc", E, E, E, sg.values, optimize=True)
    q *= sg.dk**3 / (2 * np.pi) ** 3
    scale = max(np.max(np.abs(q.real)), 1e-300)
    resid = float(np.max(np.abs(q.imag)) / scale) if np.any(q) else 0.0
    if resid > imag_tol:
        raise ValueError(f"inverse transform has imaginary residue {resid:.2e}; symmetrize the scattering grid")
    out = g.with_values(q.real)
    out.info = {"imag_residue": resid, "k_max": sg.k_max, "n_k": sg.n}
    return out


# ---------------------------------------------------------------------------
# nonlinear Dirichlet problem
# ---------------------------------------------------------------------------


def grid_interpolator(q: PotentialGrid, order: int = 5) -> Callable:
    """Spline interpolant of grid samples (zero outside the box)."""
    coeffs = ndimage.spline_filter(np.asarray(q.values, float), order=order, mode="grid-constant")

    def f(x):
        x = np.asarray(x, float)
        idx = (x.reshape(-1, 3).T + q.half_width) / q.h
        v = ndimage.map_coordinates(coeffs, idx, order=order, mode="grid-constant", prefilter=False)
        return v.reshape(x.shape[:-1])

    return f


@dataclass
class BallExpansion:
    """w(x) = Σ_{l,m,k} a[l²+l+m, k] φ_k^l(r) Y_lm(x̂), φ_k^l vanishing at r = R."""

    R: float
    L: int
    basis: BallBasis
    a: np.ndarray

    def evaluate(self, x, chunk: int = 4096):
        """Real values and gradients at points (..., 3); zero outside the ball."""
        x = np.asarray(x, float)
        batch = x.shape[:-1]
        pts = x.reshape(-1, 3)
        u = np.zeros(len(pts))
        du = np.zeros((len(pts), 3))
        ls, _ = degree_arrays(self.L)
        for i in range(0, len(pts), chunk):
            p = pts[i:i + chunk]
            r = np.linalg.norm(p, axis=-1)
            inside = r < self.R
            if not np.any(inside):
                continue
            p, r = p[inside], r[inside]
            rs = np.where(r > 0, r, 1.0)
            Y, G = sphere.ylm_at(self.L, np.where(r[:, None] > 0, p, [0.0, 0.0, 1.0]), gradient=True)
            v = np.zeros(len(p), dtype=complex)
            dv = np.zeros((len(p), 3), dtype=complex)
            for l in range(self.L + 1):
                sel = ls == l
                phi, dphi = self.basis.eval(l, r)
                c = (self.a[sel] @ phi[1:]).T
                dc = (self.a[sel] @ dphi[1:]).T
                v += np.sum(c * Y[:, sel], axis=1)
                dv += np.sum(dc * Y[:, sel], axis=1)[:, None] * (p / rs[:, None])
                dv += np.einsum("ps,psc->pc", c, G[:, sel, :]) / rs[:, None]
            idx = np.arange(i, i + len(inside))[inside]
            u[idx] = v.real
            du[idx] = dv.real
        return u.reshape(batch), du.reshape(batch + (3,))

    def __call__(self, x):
        return self.evaluate(x)[0]


class _PoissonBall:
    """Spectral Galerkin solver of Δw = F in B_R with w = 0 on the sphere."""

    def __init__(self, R: float, L: int, Nr: int, n_radial: int | None = None):
        self.R, self.L = float(R), int(L)
        self.basis = BallBasis(R, Nr)
        self.rq, self.wq = composite_gauss(0.0, R, n_radial or (Nr + L // 2 + 12))
        self.grid = sphere.sphere_grid(3 * L // 2 + 2, 1.0)
        self.ls, _ = degree_arrays(L)
        self.phi, self.dphi, self.Kinv = [], [], []
        for l in range(L + 1):
            phi, dphi = self.basis.eval(l, self.rq)
            phi, dphi = phi[1:], dphi[1:]
            w1 = self.wq * self.rq**2
            K = (dphi * w1) @ dphi.T + (phi * (self.wq * l * (l + 1.0))) @ phi.T
            self.phi.append(phi)
            self.dphi.append(dphi)
            self.Kinv.append(np.linalg.inv(K))
        unit = self.grid.unit_nodes()
        self.points = self.rq[:, None, None, None] * unit[None]

    def solve(self, F_nodes):
        """Coefficients a (n_coeffs, Nr) of the solution for F at the quadrature nodes."""
        Fc = np.stack([self.grid.analyze(F_nodes[i], self.L) for i in range(len(self.rq))])  # (nr, ncoef)
        a = np.zeros((len(self.ls), self.basis.Nr), dtype=complex)
        w = self.wq * self.rq**2
        for l in range(self.L + 1):
            sel = self.ls == l
            b = (self.phi[l] * w) @ Fc[:, sel]  # (Nr, nsel)
            a[sel] = (-self.Kinv[l] @ b).T
        return a

    def gradient_sq(self, a):
        """|∇w|² at the quadrature nodes."""
        out = np.zeros(self.points.shape[:-1])
        for i, r in enumerate(self.rq):
            c = np.zeros(len(self.ls), dtype=complex)
            dc = np.zeros(len(self.ls), dtype=complex)
            for l in range(self.L + 1):
                sel = self.ls == l
                c[sel] = a[sel] @ self.phi[l][:, i]
                dc[sel] = a[sel] @ self.dphi[l][:, i]
            ur = self.grid.synthesize(dc).real
            gt = self.grid.synthesize_gradient(c).real / r
            # the synthesized gradient is tangential: |∇w|² = w_r² + |∇_t w|²
            out[i] = ur**2 + np.sum(gt * gt, axis=-1)
        return out


def solve_w(q, R: float, L: int = 16, Nr: int = 16, tol: float = 1e-8, max_iter: int = 100,
            out: PotentialGrid | None = None, n_radial: int | None = None) -> PotentialGrid:
    """Picard iteration w ← Δ^{-1}_D (q - |∇w|²) on B_R.

    ``q`` is a PotentialGrid (spline-interpolated) or a callable on points.
    The result lives on ``out`` (default: the grid of q) and carries the
    spectral expansion in ``info["expansion"]``.
    """
    if isinstance(q, PotentialGrid):
        r = q.radius()
        total = max(np.sum(np.abs(q.values)), 1e-300)
        outside = float(np.sum(np.abs(q.values[r >= R])) / total)
        if outside > 1e-8:
            log.warning("q has %.1e of its mass outside B_R; truncated", outside)
        qc = q.with_values(np.where(r < R, q.values, 0.0))
        qfun = grid_interpolator(qc)
        out = q if out is None else out
    else:
        qfun = q
        outside = 0.0
        if out is None:
            raise ValueError("give an output grid when q is a callable")
    P = _PoissonBall(R, L, Nr, n_radial)
    qn = qfun(P.points)
    a = P.solve(qn)
    hist = []
    relax = 1.0
    for it in range(max_iter):
        new = P.solve(qn - P.gradient_sq(a))
        step = float(np.linalg.norm(new - a) / max(np.linalg.norm(new), 1e-300))
        if hist and step > hist[-1] and relax == 1.0:
            relax = 0.5
            log.info("solve_w: residual grew, under-relaxing")
        a = a + relax * (new - a)
        hist.append(step)
        if step <= tol:
            break
        if step > 1e3 or not np.isfinite(step):
            raise SolverError(f"solve_w diverged; residual history {hist[-5:]}")
    else:
        raise SolverError(f"solve_w did not converge in {max_iter} iterations; residual history {hist[-5:]}")
    exp = BallExpansion(R, L, P.basis, a)
    w = out.with_values(exp(out.points()), name="w")
    w.info = {"iterations": len(hist), "history": hist, "relax": relax, "mass_outside": outside,
              "expansion": exp, "L": L, "Nr": Nr}
    return w


def gamma_from_w(w: PotentialGrid) -> PotentialGrid:
    g = w.with_values(np.exp(2.0 * np.asarray(w.values, float)), name="gamma")
    g.info = {}
    return g


def discrete_potential(gamma: PotentialGrid) -> np.ndarray:
    """Δγ^{1/2}/γ^{1/2} by fourth-order differences (periodic wrap at the box edge)."""
    s = np.sqrt(gamma.values)
    lap = np.zeros_like(s)
    for ax in range(3):
        lap += (-np.roll(s, 2, ax) + 16 * np.roll(s, 1, ax) - 30 * s
                + 16 * np.roll(s, -1, ax) - np.roll(s, -2, ax)) / 12
    return lap / gamma.h**2 / s


def relative_error(rec: PotentialGrid, truth, R: float, background: float | None = None) -> float:
    """‖rec - truth‖ / ‖truth - background‖ over grid points in B_R (background None: ‖truth‖)."""
    pts = rec.points()
    mask = np.linalg.norm(pts, axis=-1) < R
    t = truth(pts[mask]) if callable(truth) else np.asarray(truth)[mask]
    den = t if background is None else t - background
    return float(np.linalg.norm(rec.values[mask] - t) / max(np.linalg.norm(den), 1e-300))


@dataclass
class ManufacturedW:
    """w* = c (1 - r²/R²)² (1 + x₁/R) and q = Δw* + |∇w*|² in closed form."""

    R: float = 1.0
    c: float = 0.2
    info: dict = field(default_factory=dict)

    def w(self, x):
        x = np.asarray(x, float)
        b = 1 - np.sum(x * x, -1) / self.R**2
        return np.where(b > 0, self.c * b * b * (1 + x[..., 0] / self.R), 0.0)

    def q(self, x):
        x = np.asarray(x, float)
        R, c = self.R, self.c
        r2 = np.sum(x * x, -1)
        b = 1 - r2 / R**2
        g = c * (1 + x[..., 0] / R)
        lap_b2 = 8 * r2 / R**4 - 12 * b / R**2
        lap = lap_b2 * g + 2 * (2 * b * (-2 * x[..., 0] / R**2)) * (c / R)
        grad = (-4 * b * g / R**2)[..., None] * x
        grad[..., 0] += b * b * c / R
        return np.where(b > 0, lap + np.sum(grad * grad, -1), 0.0)
