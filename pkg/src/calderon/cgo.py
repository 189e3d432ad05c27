"""CGO boundary traces, exterior solutions and the scattering transform.

The boundary integral equation for the trace f_ρ of a complex geometrical
optics solution reads (I + S_ρΛ̃ - B_ρ - I/2) f = e^{x·ρ}.  On the sphere the
exact identity S_ρΛ1 - B_ρ - I/2 = 0 turns the operator into I + S_ρ D with
D = Λ̃ - Λ1, which is computed without cancellation and only needs the
degrees where D is not negligible.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from . import sphere
from .errors import InvertibilityFailure, SolverError
from .faddeev import ComplexFrequency, LayerOperators, assemble_layers, eval_G, symbol, xnorm_truncated
from .faddeev import eval_double_offboundary, eval_single_offboundary
from .forward import ConductivityField, DtNMap, composite_gauss, interior_solution
from .grids import PotentialGrid
from .sphere import BoundaryField, degree_arrays, n_coeffs

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# frequency pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencyPair:
    k: np.ndarray
    s: float
    eta1: np.ndarray
    eta2: np.ndarray

    @property
    def r(self) -> float:
        return math.sqrt(max(self.s**2 - (self.k @ self.k) / 4.0, 0.0))

    @property
    def rho1(self) -> ComplexFrequency:
        return ComplexFrequency(self.s * self.eta1, self.k / 2 + self.r * self.eta2)

    @property
    def rho2(self) -> ComplexFrequency:
        return ComplexFrequency(-self.s * self.eta1, self.k / 2 - self.r * self.eta2)


def perpendicular_frame(k, ref=None):
    """Orthonormal (e1, e2) spanning k⊥ with (k̂, e1, e2) positively oriented.

    For k = 0 the plane z⊥ (or ``ref``⊥) is used.
    """
    k = np.asarray(k, float)
    nk = np.linalg.norm(k)
    axis = k / nk if nk > 0 else (np.asarray(ref, float) / np.linalg.norm(ref) if ref is not None else np.array([0.0, 0, 1]))
    trial = np.eye(3)[np.argmin(np.abs(axis))]
    e1 = trial - (trial @ axis) * axis
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1), axis


def build_pair(k, s: float, eta1, eta2=None) -> FrequencyPair:
    """ρ1 = sη1 + i(k/2 + rη2), ρ2 = -sη1 + i(k/2 - rη2), r = sqrt(s² - |k|²/4)."""
    k = np.asarray(k, float)
    eta1 = np.asarray(eta1, float)
    nk = np.linalg.norm(k)
    if s < nk / 2 - 1e-14:
        raise ValueError(f"s = {s} below |k|/2 = {nk / 2}")
    if abs(np.linalg.norm(eta1) - 1) > 1e-12:
        raise ValueError("η1 must be a unit vector")
    if abs(eta1 @ k) > 1e-12 * max(nk, 1.0):
        raise ValueError("η1 must be orthogonal to k")
    if eta2 is None:
        if nk > 0:
            eta2 = np.cross(k / nk, eta1)
        else:
            _, _, axis = perpendicular_frame(k)
            if abs(eta1 @ axis) > 1e-12:
                raise ValueError("for k = 0 give η2 explicitly or take η1 ⊥ z")
            eta2 = np.cross(axis, eta1)
    eta2 = np.asarray(eta2, float)
    if abs(eta2 @ eta1) > 1e-12 or abs(eta2 @ k) > 1e-12 * max(nk, 1.0) or abs(np.linalg.norm(eta2) - 1) > 1e-12:
        raise ValueError("η2 must complete an orthonormal pair in k⊥")
    return FrequencyPair(k, float(s), eta1, eta2)


# ---------------------------------------------------------------------------
# exponential traces and the BIE
# ---------------------------------------------------------------------------


def exp_trace(rho: ComplexFrequency, L: int, R: float) -> np.ndarray:
    """Degree-L coefficients of e^{x·ρ} on r = R.

    For ρ·ρ = 0 the degree-l part is (ρ·x)^l / l!, a harmonic polynomial, so
    each degree is projected exactly on a degree-L grid.
    """
    n = n_coeffs(L)
    if rho.is_zero:
        c = np.zeros(n, dtype=complex)
        c[0] = math.sqrt(4 * math.pi)
        return c
    g = sphere.sphere_grid(L, 1.0)
    z = g.unit_nodes() @ (rho.rho / rho.tau)
    ls, _ = degree_arrays(L)
    out = np.zeros(n, dtype=complex)
    pw = np.ones_like(z)
    lt = math.log(rho.tau * R)
    for l in range(L + 1):
        sel = ls == l
        out[sel] = g.analyze(pw)[sel] * math.exp(l * lt - math.lgamma(l + 1))
        pw = pw * z
    return out


def exp_values(rho: ComplexFrequency, points) -> np.ndarray:
    return np.exp(np.asarray(points, float) @ rho.rho)


@dataclass
class TraceSolution:
    rho: ComplexFrequency
    R: float
    f: BoundaryField
    residual: float
    condition: float
    info: dict = field(default_factory=dict)


def defect_tail(dtn: DtNMap) -> float:
    """Relative size of Λ̃ - Λ1 on the top degree."""
    D = dtn.defect_matrix()
    ls, _ = degree_arrays(dtn.L)
    top = ls == dtn.L
    # defects far below 1/R count as resolved
    scale = max(np.max(np.abs(D)), 1.0 / dtn.R)
    return float(np.max(np.abs(D[top])) / scale)


def truncation_indicator(dtn: DtNMap, rho: ComplexFrequency) -> float:
    """R² |D_L| ((τR)^L / L!)²: size of the top-degree contribution to a sample.

    The coefficients of e^{x·ρ} grow like (τR)^l / l! up to l ≈ τR, so a
    degree-L truncation is adequate only where this product is negligible.
    """
    D = dtn.defect_matrix()
    ls, _ = degree_arrays(dtn.L)
    out = 0.0
    for l in (dtn.L - 1, dtn.L):
        if l < 0:
            continue
        sel = ls == l
        d = max(np.max(np.abs(D[sel])), np.max(np.abs(D[:, sel])))
        if d == 0:
            continue
        logamp = 2 * (l * math.log(max(rho.tau * dtn.R, 1e-300)) - math.lgamma(l + 1)) if rho.tau > 0 else -np.inf
        out = max(out, dtn.R**2 * d * math.exp(min(logamp, 700.0)))
    return float(out)


def equilibrate(A: np.ndarray, sweeps: int = 8):
    """Ruiz row/column scalings (dr, dc) making diag(dr) A diag(dc) roughly unit in max-norm."""
    dr = np.ones(A.shape[0])
    dc = np.ones(A.shape[1])
    M = np.abs(A)
    for _ in range(sweeps):
        B = dr[:, None] * M * dc[None, :]
        r = np.sqrt(np.max(B, axis=1))
        c = np.sqrt(np.max(B, axis=0))
        dr /= np.where(r > 0, r, 1.0)
        dc /= np.where(c > 0, c, 1.0)
    return dr, dc


def _active_indices(D: np.ndarray, tol: float) -> np.ndarray:
    mag = np.maximum(np.abs(D).max(axis=0), np.abs(D).max(axis=1))
    top = mag.max() if mag.size else 0.0
    return np.flatnonzero(mag > tol * top) if top > 0 else np.zeros(0, dtype=int)


def _equilibrated_solve(A, b, rho, max_condition):
    dr, dc = equilibrate(A)
    As = dr[:, None] * A * dc[None, :]
    lu, piv = sla.lu_factor(As, check_finite=False)
    rcond, _ = sla.lapack.zgecon(lu, np.abs(As).sum(axis=0).max(), norm="1")
    cond = 1.0 / rcond if rcond > 0 else float("inf")
    if not np.isfinite(cond) or cond > max_condition:
        raise InvertibilityFailure(f"BIE operator numerically singular at |ρ| = {rho.norm:.3g} (cond {cond:.2e})", cond)
    return dc * sla.lu_solve((lu, piv), dr * b, check_finite=False), cond


def solve_bie(dtn: DtNMap, rho: ComplexFrequency, ops: LayerOperators | None = None,
              rhs: np.ndarray | None = None, max_condition: float = 1e10, tail_tol: float = 1e-8,
              reduce_tol: float | None = 1e-13) -> TraceSolution:
    """Solve (I + S_ρΛ̃ - B_ρ - I/2) f = e^{x·ρ} on the sphere of Λ̃.

    With ``reduce_tol`` set, D = Λ̃ - Λ1 is restricted to the index set P
    where it exceeds reduce_tol·max|D|, and the equivalent small system
    (I + D_PP S_PP) y = D_PP e_P is solved; then f = e - S[:, P] y.
    ``reduce_tol=None`` forces the dense solve of I + S D.
    """
    R, L = dtn.R, dtn.L
    if ops is None:
        ops = assemble_layers(rho, L, R)
    if ops.L != L or abs(ops.R - R) > 1e-14 * R:
        raise ValueError("layer operators and DtN map live on different spaces")
    tail = truncation_indicator(dtn, rho)
    if tail > tail_tol:
        warnings.warn(f"degree {L} truncation not negligible at |ρ| = {rho.norm:.3g} "
                      f"(top-degree contribution {tail:.1e}); BIE under-resolved", RuntimeWarning)
    n = n_coeffs(L)
    D = dtn.defect_matrix()
    e = exp_trace(rho, L, R) if rhs is None else np.asarray(rhs, complex)
    P = _active_indices(D, reduce_tol) if reduce_tol is not None else None
    if P is not None and len(P) < n // 2:
        if len(P) == 0:
            f, cond = e.copy(), 1.0
        else:
            DP = D[np.ix_(P, P)]
            y, cond = _equilibrated_solve(np.eye(len(P)) + DP @ ops.S[np.ix_(P, P)], DP @ e[P], rho, max_condition)
            f = e - ops.S[:, P] @ y
        method = "reduced"
    else:
        f, cond = _equilibrated_solve(np.eye(n) + ops.S @ D, e, rho, max_condition)
        method = "dense"
    A_f = f + ops.S @ (D @ f)
    res = float(np.linalg.norm(A_f - e) / max(np.linalg.norm(e), 1e-300))
    return TraceSolution(rho, R, BoundaryField(f), res, cond,
                         info={"truncation": tail, "identity_residual": ops.identity_residual(),
                               "method": method, "active": 0 if P is None else len(P)})


def exterior_psi(sol: TraceSolution, dtn: DtNMap, ops: LayerOperators, points) -> np.ndarray:
    """ψ(x, ρ) = e^{x·ρ} - (S_ρΛ̃ - D_ρ) f_ρ at points outside the ball."""
    pts = np.atleast_2d(np.asarray(points, float))
    r = np.linalg.norm(pts, axis=-1)
    if np.any(r <= sol.R * (1 + 1e-12)):
        raise ValueError("exterior_psi needs points strictly outside the ball")
    lam_f = BoundaryField(dtn.apply(sol.f.coeffs))
    return exp_values(sol.rho, pts) - eval_single_offboundary(ops, lam_f, pts) + eval_double_offboundary(ops, sol.f, pts)


# ---------------------------------------------------------------------------
# scattering transform
# ---------------------------------------------------------------------------


def scattering_sample(dtn: DtNMap, pair: FrequencyPair, sol: TraceSolution | None = None,
                      ops: LayerOperators | None = None) -> complex:
    """∫ (Λ̃ e^{x·ρ2} - ∂_ν e^{x·ρ2}) f_{ρ1} dS on the sphere of Λ̃.

    ∂_ν of the harmonic e^{x·ρ2} is Λ1 of its trace, so the integrand is
    (D e^{x·ρ2}) f_{ρ1} with D = Λ̃ - Λ1.
    """
    if sol is None:
        sol = solve_bie(dtn, pair.rho1, ops)
    e2 = exp_trace(pair.rho2, dtn.L, dtn.R)
    De2 = BoundaryField(dtn.defect_matrix() @ e2)
    return sphere.pair(De2, sol.f, dtn.R)


@dataclass
class QhatEstimate:
    k: np.ndarray
    lam: float
    value: complex
    samples: np.ndarray
    skipped: int
    flagged: bool
    info: dict = field(default_factory=dict)


def scattering_qhat(dtn: DtNMap, k, lam: float, M_s: int = 4, M_eta: int = 8, **kw) -> QhatEstimate:
    """(1/(2πλ)) ∫_S ∫_λ^{2λ} sample ds dη1: Gauss in s, trapezoid on the circle S = k⊥ ∩ S²."""
    k = np.asarray(k, float)
    if lam < np.linalg.norm(k):
        raise ValueError("λ must be at least |k|")
    if M_s < 1 or M_eta < 4:
        raise ValueError("need M_s >= 1 and M_eta >= 4")
    xs, ws = np.polynomial.legendre.leggauss(M_s)
    svals = lam * (1.5 + 0.5 * xs)
    sw = 0.5 * lam * ws
    e1, e2, _ = perpendicular_frame(k)
    th = 2 * np.pi * np.arange(M_eta) / M_eta
    tw = 2 * np.pi / M_eta
    samples = np.full((M_s, M_eta), np.nan + 0j)
    skipped = 0
    total = 0.0 + 0.0j
    conds = []
    truncs = []
    for i, s in enumerate(svals):
        for j, t in enumerate(th):
            eta1 = math.cos(t) * e1 + math.sin(t) * e2
            eta2 = -math.sin(t) * e1 + math.cos(t) * e2
            pair = build_pair(k, s, eta1, eta2)
            try:
                sol = solve_bie(dtn, pair.rho1, **kw)
            except (InvertibilityFailure, np.linalg.LinAlgError) as exc:
                log.warning("sample (s=%.3g, θ=%.3g) skipped: %s", s, t, exc)
                skipped += 1
                continue
            conds.append(sol.condition)
            truncs.append(sol.info["truncation"])
            samples[i, j] = scattering_sample(dtn, pair, sol)
            total += sw[i] * tw * samples[i, j]
    n = M_s * M_eta
    if skipped == n:
        raise SolverError(f"every scattering sample failed at k = {k}")
    # renormalize over the surviving quadrature weight
    W = np.sum(sw[:, None] * tw * ~np.isnan(samples.real))
    value = total * (2 * np.pi * lam) / W / (2 * np.pi * lam) if skipped else total / (2 * np.pi * lam)
    return QhatEstimate(k, lam, complex(value), samples, skipped, skipped > 0.1 * n,
                        info={"max_condition": float(max(conds)) if conds else float("nan"),
                              "max_truncation": float(max(truncs)) if truncs else float("nan")})


# ---------------------------------------------------------------------------
# potentials from conductivities
# ---------------------------------------------------------------------------


def potential_values(gamma: ConductivityField, x, h: float = 1e-4) -> np.ndarray:
    """q = Δγ^{1/2} / γ^{1/2} by central differences of ∇γ^{1/2} = ∇γ / (2γ^{1/2})."""
    x = np.asarray(x, float)
    lap = np.zeros(x.shape[:-1])
    for i, e in enumerate(np.eye(3)):
        gp = gamma.gradient(x + h * e)[..., i] / (2 * np.sqrt(gamma(x + h * e)))
        gm = gamma.gradient(x - h * e)[..., i] / (2 * np.sqrt(gamma(x - h * e)))
        lap += (gp - gm) / (2 * h)
    return lap / np.sqrt(gamma(x))


def potential_grid(gamma: ConductivityField, half_width: float, n: int, h: float = 1e-4) -> PotentialGrid:
    """q sampled on the periodic grid, zero outside the ball of γ."""
    grid = PotentialGrid.zeros(half_width, n, name="q")
    pts = grid.points()
    inside = np.linalg.norm(pts, axis=-1) < gamma.R
    vals = np.zeros(pts.shape[:-1])
    vals[inside] = potential_values(gamma, pts[inside], h)
    return grid.with_values(vals)


def radial_potential(profile: Callable, h: float = 1e-4) -> Callable:
    """q(r) for a radial γ(r): (s'' + 2 s'/r) / s with s = γ^{1/2}."""

    def q(r):
        r = np.maximum(np.asarray(r, float), 2 * h)
        s = lambda t: np.sqrt(profile(t))
        d2 = (s(r + h) - 2 * s(r) + s(r - h)) / h**2
        d1 = (s(r + h) - s(r - h)) / (2 * h)
        return (d2 + 2 * d1 / r) / s(r)

    return q


def radial_qhat(profile: Callable, support: float, k, n: int = 400) -> np.ndarray:
    """q̂(k) = ∫ q e^{ix·k} dx = 4π ∫ q(r) r² sinc(|k| r) dr for radial q supported in r <= support."""
    q = radial_potential(profile)
    r, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * support * (r + 1)
    w = 0.5 * support * w
    kn = np.linalg.norm(np.atleast_2d(np.asarray(k, float)), axis=-1)
    kernel = np.sinc(np.outer(kn, r) / np.pi)
    return 4 * np.pi * kernel @ (q(r) * r * r * w)


# ---------------------------------------------------------------------------
# Lippmann-Schwinger oracle
# ---------------------------------------------------------------------------


@dataclass
class CutoffSpec:
    """Smooth radial cutoffs: φ_B ≡ 1 on B_R with support in B_{R_out}; η_B likewise."""

    R: float
    R_out: float
    eta_R: float | None = None
    eta_R_out: float | None = None

    @staticmethod
    def _smooth_step(r, a, b):
        t = np.clip((np.asarray(r, float) - a) / (b - a), 0.0, 1.0)
        # C^∞ transition built from e^{-1/t}
        with np.errstate(divide="ignore", over="ignore"):
            f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
            g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
        return g / (f + g)

    def phi_B(self, x):
        return self._smooth_step(np.linalg.norm(x, axis=-1), self.R, self.R_out)

    def eta_B(self, x):
        if self.eta_R is None:
            return self.phi_B(x)
        if self.eta_R_out == 0:
            return np.zeros(np.shape(x)[:-1])
        return self._smooth_step(np.linalg.norm(x, axis=-1), self.eta_R, self.eta_R_out)


def _offset(q: PotentialGrid):
    return np.full(3, np.pi / (2 * q.half_width))


def _grid_frequencies(q: PotentialGrid):
    k = 2 * np.pi * np.fft.fftfreq(q.n, d=q.h)
    KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
    return np.stack([KX, KY, KZ], -1)


def ls_oracle_phi(q: PotentialGrid, rho: ComplexFrequency, tol: float = 1e-8, max_iter: int = 200,
                  relax: float = 1.0) -> PotentialGrid:
    """Φ = g_ρ * (q (1 + Φ)) by fixed point on the periodic grid.

    Φ = e^{iδ·x} w with w periodic; the multiplier 1/p_ρ(ξ + δ) never meets
    the characteristic circle for the half-step offset δ.
    """
    delta = _offset(q)
    pts = q.points()
    mod = np.exp(1j * (pts @ delta))
    p = symbol(rho, _grid_frequencies(q) + delta)
    if np.min(np.abs(p)) <= 1e-8:
        raise ValueError("grid frequency on the characteristic variety")
    qv = np.asarray(q.values, dtype=complex)
    phi = np.zeros_like(qv)
    hist = []
    what = None
    for it in range(max_iter):
        src = qv * (1.0 + phi)
        what = np.fft.fftn(src / mod) / p
        new = mod * np.fft.ifftn(what)
        step = np.linalg.norm(new - phi) / max(np.linalg.norm(new), 1e-300)
        phi = phi + relax * (new - phi)
        hist.append(step)
        if step <= tol:
            break
        if it > 5 and hist[-1] > hist[-2] > hist[-3] and hist[-1] > 1.0:
            raise SolverError(f"Lippmann-Schwinger iteration diverging at |ρ| = {rho.norm:.3g}: {hist[-4:]}")
    else:
        raise SolverError(f"Lippmann-Schwinger iteration stalled: last step {hist[-1]:.2e}")
    # spectrum of the final iterate for exact off-grid evaluation
    what = np.fft.fftn(phi / mod)
    contraction = float(hist[-1] / hist[-2]) if len(hist) > 1 and hist[-2] > 0 else 0.0
    out = q.with_values(phi, name="Phi")
    out.info = {"delta": delta, "what": what, "iterations": len(hist), "history": hist,
                "contraction": contraction, "rho": rho}
    return out


def ls_evaluate(phi: PotentialGrid, points, chunk: int = 256) -> np.ndarray:
    """Trigonometric interpolant of Φ at arbitrary points (direct Fourier sum)."""
    pts = np.atleast_2d(np.asarray(points, float))
    what = phi.info["what"]
    delta = phi.info["delta"]
    n = phi.n
    A = phi.half_width
    k = 2 * np.pi * np.fft.fftfreq(n, d=phi.h)
    # the grid starts at -A: shift phases accordingly
    out = np.empty(len(pts), dtype=complex)
    for i in range(0, len(pts), chunk):
        y = pts[i:i + chunk] + A
        ex = np.exp(1j * y[:, 0:1] * k[None])
        ey = np.exp(1j * y[:, 1:2] * k[None])
        ez = np.exp(1j * y[:, 2:3] * k[None])
        t = np.einsum("abc,pc->pab", what, ez)
        t = np.einsum("pab,pb->pa", t, ey)
        out[i:i + chunk] = np.einsum("pa,pa->p", t, ex) / n**3
    return out * np.exp(1j * (pts @ delta))


def ls_trace(q: PotentialGrid, rho: ComplexFrequency, L: int, R: float, gamma_boundary: float = 1.0, **kw):
    """Degree-L coefficients of γ^{-1/2} e^{x·ρ}(1 + Φ) on r = R, with the Φ grid."""
    phi = ls_oracle_phi(q, rho, **kw)
    g = sphere.sphere_grid(L, R)
    pts = g.nodes().reshape(-1, 3)
    vals = exp_values(rho, pts) * (1.0 + ls_evaluate(phi, pts)) / math.sqrt(gamma_boundary)
    return g.analyze(vals.reshape(g.shape)), phi


def trace_l2_difference(c1, c2, R: float) -> float:
    """Relative L²(∂B_R) difference of two coefficient vectors."""
    return float(np.linalg.norm(c1 - c2) / max(np.linalg.norm(c2), 1e-300))


def remainder_diagnostic(q: PotentialGrid, k, lam: float, M_s: int = 2, M_eta: int = 4,
                         cutoff: CutoffSpec | None = None, **kw):
    """Averages (1/λ)∫_S∫_λ^{2λ} over both ρ_i of ‖Φ‖_{X^{1/2}} and ‖η_B q‖_{X^{-1/2}}."""
    k = np.asarray(k, float)
    if not np.any(q.values):
        return 0.0, 0.0
    xs, ws = np.polynomial.legendre.leggauss(M_s)
    svals = lam * (1.5 + 0.5 * xs)
    sw = 0.5 * lam * ws
    e1, e2, _ = perpendicular_frame(k)
    tw = 2 * np.pi / M_eta
    etaq = q.with_values(q.values * (cutoff.eta_B(q.points()) if cutoff is not None else 1.0))
    a1 = a2 = 0.0
    for s, w in zip(svals, sw):
        for j in range(M_eta):
            t = 2 * np.pi * j / M_eta
            pair = build_pair(k, s, math.cos(t) * e1 + math.sin(t) * e2, -math.sin(t) * e1 + math.cos(t) * e2)
            for rho in (pair.rho1, pair.rho2):
                phi = ls_oracle_phi(q, rho, **kw)
                a1 += w * tw * xnorm_truncated(phi, rho, 0.5) / 2
                a2 += w * tw * (xnorm_truncated(etaq, rho, -0.5) if np.any(etaq.values) else 0.0) / 2
    return a1 / lam, a2 / lam


# ---------------------------------------------------------------------------
# structural identity check
# ---------------------------------------------------------------------------


def compactness_identity_residual(gamma: ConductivityField, dtn: DtNMap, rho: ComplexFrequency, g: BoundaryField,
                                  support: float | None = None, Nr: int = 24, n_radial: int = 24,
                                  L_vol: int | None = None, return_parts: bool = False):
    """‖(S_ρΛγ - B_ρ - I/2) g + T ∫ G_ρ ∇log γ·∇u dy‖ / ‖g‖ on L²(∂B_R).

    u solves div(γ∇u) = 0 with u = g.  Green's representation gives
    (S_ρΛγ - B_ρ - I/2) g = -T ∫ G_ρ(x - y) ∇log γ·∇u dy when γ = 1 on the
    boundary; the volume integral is restricted to r <= ``support`` where
    ∇γ lives, which keeps the kernel non-singular.
    """
    R, L = dtn.R, dtn.L
    ops = assemble_layers(rho, L, R)
    lhs = ops.S @ (dtn.defect_matrix() @ g.truncate(L).coeffs)
    a = support if support is not None else (gamma.R0 if gamma.R0 is not None else R)
    if a >= R:
        raise ValueError("∇log γ must vanish near the boundary")
    u = interior_solution(gamma, g.truncate(L), Nr=Nr, R=R)
    Lv = L_vol or (L + 16)
    vg = sphere.sphere_grid(Lv, 1.0)
    unit = vg.unit_nodes().reshape(-1, 3)
    wv = vg.weights().reshape(-1)
    rq, wq = composite_gauss(0.0, a, n_radial, gamma.breakpoints)
    bg = sphere.sphere_grid(L + 4, R)
    xb = bg.nodes().reshape(-1, 3)
    acc = np.zeros(len(xb), dtype=complex)
    for r, w in zip(rq, wq):
        _, _, grad = u.shell(r, vg)
        y = r * unit
        dens = np.einsum("pc,pc->p", gamma.gradient(y) / gamma(y)[:, None], grad.reshape(-1, 3))
        K = eval_G(rho, xb[:, None, :] - y[None, :, :])
        acc += K @ (dens * wv) * (w * r * r)
    rhs = -bg.analyze(acc.reshape(bg.shape), L)
    scale = max(np.linalg.norm(g.truncate(L).coeffs), 1e-300)
    res = float(np.linalg.norm(lhs - rhs) / scale)
    if return_parts:
        return res, lhs, rhs
    return res
