"""Faddeev Green's function, its harmonic part, and layer operators on a sphere.

For ρ = a + ib with ρ·ρ = 0 and τ = |a| = |b|, write x1 = â·x and r⊥ for the
distance of x from the â-axis.  Residue calculus reduces the Fourier integral
defining g_ρ to

    g_ρ(x) = e^{-ib·x}/(4π) [ -e^{-a·x}/|x| + ∫_0^τ J0(p r⊥) e^{-x1(τ-p)} dp ],

so that G_ρ = -e^{x·ρ} g_ρ = G0 + H_ρ with G0 = 1/(4π|x|) and

    H_ρ(x) = -(1/4π) ∫_0^τ J0(p r⊥) e^{p x1} dp,

a real entire harmonic function.  On a sphere H_ρ(x - y) separates through
isotropic plane waves e^{pζ·x}, ζ = â + i(cos φ b̂ + sin φ ĉ), which gives
the layer operators in closed form up to a trigonometric sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, j0, j1

from . import sphere
from .errors import QuadratureError
from .sphere import BoundaryField, degree_arrays, n_coeffs

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class ComplexFrequency:
    """ρ = a + ib with ρ·ρ = 0."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, float).reshape(3)
        b = np.asarray(self.b, float).reshape(3)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        scale = max(na, nb, 1e-300)
        if abs(na - nb) > 1e-12 * scale or abs(a @ b) > 1e-12 * scale**2:
            raise ValueError("ρ·ρ must vanish: need |a| = |b| and a·b = 0")

    @classmethod
    def from_vector(cls, rho):
        rho = np.asarray(rho, complex)
        return cls(rho.real, rho.imag)

    @classmethod
    def from_frame(cls, tau, ahat, bhat):
        ahat = np.asarray(ahat, float) / np.linalg.norm(ahat)
        bhat = np.asarray(bhat, float)
        bhat = bhat - (bhat @ ahat) * ahat
        bhat /= np.linalg.norm(bhat)
        return cls(tau * ahat, tau * bhat)

    @property
    def rho(self) -> np.ndarray:
        return self.a + 1j * self.b

    @property
    def tau(self) -> float:
        return float(np.linalg.norm(self.a))

    @property
    def norm(self) -> float:
        """|ρ| = sqrt(2) τ."""
        return math.sqrt(2.0) * self.tau

    @property
    def is_zero(self) -> bool:
        return self.tau == 0.0

    def frame(self):
        """Orthonormal (â, b̂, ĉ = â×b̂); a fixed frame when ρ = 0."""
        if self.is_zero:
            return np.eye(3)
        ah = self.a / self.tau
        bh = self.b / self.tau
        return np.stack([ah, bh, np.cross(ah, bh)])

    def scaled(self, s: float) -> "ComplexFrequency":
        return ComplexFrequency(self.a * s, self.b * s)

    def conj(self) -> "ComplexFrequency":
        return ComplexFrequency(self.a, -self.b)

    def dot(self, x) -> np.ndarray:
        return np.asarray(x) @ self.rho


def symbol(rho: ComplexFrequency, xi) -> np.ndarray:
    """p_ρ(ξ) = -|ξ|² + 2iρ·ξ, the symbol of Δ + 2ρ·∇."""
    xi = np.asarray(xi, float)
    return -np.sum(xi * xi, axis=-1) + 2j * (xi @ rho.rho)


def G0(x) -> np.ndarray:
    return 1.0 / (FOUR_PI * np.linalg.norm(np.asarray(x, float), axis=-1))


def _frame_coords(rho: ComplexFrequency, x):
    x = np.asarray(x, float)
    F = rho.frame()
    x1 = x @ F[0]
    xp = x - x1[..., None] * F[0]
    rp = np.linalg.norm(xp, axis=-1)
    return x1, xp, rp


def _gauss_doubling(integrand, lo, hi, shape, tol, n0=32, n_max=8192, scale=None):
    """∫_lo^hi integrand(p) dp for arrays of targets, doubling GL nodes until stable.

    ``integrand(p)`` receives p with shape (n, 1...) broadcast against the
    targets and returns an array of shape (k, n, *shape) for k outputs.
    """
    prev = None
    n = n0
    while n <= n_max:
        x, w = np.polynomial.legendre.leggauss(n)
        half = 0.5 * (hi - lo)
        p = lo + half * (x + 1.0)
        p = p.reshape((n,) + (1,) * len(shape) if np.ndim(lo) == 0 else p.shape)
        vals = integrand(p, half)
        wb = w.reshape((1, n) + (1,) * len(shape))
        cur = np.sum(vals * wb, axis=1)
        if prev is not None:
            ref = np.abs(cur) if scale is None else scale
            err = np.max(np.abs(cur - prev) / np.maximum(ref, 1e-300))
            if err <= tol:
                return cur, float(err)
        prev = cur
        n *= 2
    raise QuadratureError(f"kernel quadrature stalled at {n_max} nodes (error {err:.2e})", err)


_CHUNK = 16384


def eval_H(rho: ComplexFrequency, x, tol: float = 1e-12, gradient: bool = False):
    """H_ρ(x) = G_ρ(x) - G0(x) and optionally its gradient."""
    x = np.asarray(x, float)
    shape = x.shape[:-1]
    if x.ndim > 2 or (x.ndim == 2 and len(x) > _CHUNK):
        flat = x.reshape(-1, 3)
        parts = [_eval_H(rho, flat[i:i + _CHUNK], tol, gradient) for i in range(0, len(flat), _CHUNK)]
        if gradient:
            return (np.concatenate([p[0] for p in parts]).reshape(shape),
                    np.concatenate([p[1] for p in parts]).reshape(shape + (3,)))
        return np.concatenate(parts).reshape(shape)
    return _eval_H(rho, x, tol, gradient)


def _eval_H(rho, x, tol, gradient):
    shape = x.shape[:-1]
    if rho.is_zero:
        z = np.zeros(shape)
        return (z, np.zeros(shape + (3,))) if gradient else z
    tau = rho.tau
    x1, xp, rp = _frame_coords(rho, x)
    # majorant ∫_0^τ e^{p x1} dp sets the error scale
    scale = np.where(np.abs(x1) * tau > 1e-8, np.expm1(tau * x1) / np.where(x1 == 0, 1, x1), tau)
    scale = np.abs(scale) * (1.0 + tau)

    def integrand(p, half):
        e = np.exp(p * x1) * half
        if not gradient:
            return (j0(p * rp) * e)[None]
        return np.stack([j0(p * rp) * e, p * j0(p * rp) * e, -p * j1(p * rp) * e])

    vals, err = _gauss_doubling(integrand, 0.0, tau, shape, tol, scale=scale)
    H = -vals[0] / FOUR_PI
    if not gradient:
        return H
    F = rho.frame()
    dx1 = -vals[1] / FOUR_PI
    dr = -vals[2] / FOUR_PI
    er = np.where(rp[..., None] > 0, xp / np.where(rp > 0, rp, 1.0)[..., None], 0.0)
    return H, dx1[..., None] * F[0] + dr[..., None] * er


def eval_G(rho: ComplexFrequency, x, tol: float = 1e-12) -> np.ndarray:
    """G_ρ = G0 + H_ρ, a fundamental solution of -Δ."""
    return G0(x) + eval_H(rho, x, tol)


def grad_G0(x) -> np.ndarray:
    x = np.asarray(x, float)
    r = np.linalg.norm(x, axis=-1)
    return -x / (FOUR_PI * r[..., None] ** 3)


def eval_grad_G(rho: ComplexFrequency, x, tol: float = 1e-12) -> np.ndarray:
    return grad_G0(x) + eval_H(rho, x, tol, gradient=True)[1]


# cancellation in -e^{-ρ·x}(G0 + H) grows like e^{τ|x1|} for x1 < 0
_BRANCH = 12.0


def eval_g(rho: ComplexFrequency, x, tol: float = 1e-10) -> np.ndarray:
    """Faddeev kernel g_ρ(x), the fundamental solution of Δ + 2ρ·∇.

    g_0 = -1/(4π|x|).  Behind the origin (τ x1 < -12) the cancellation-free
    form -e^{-ib·x}/(4π) ∫_0^∞ J0((t+τ) r⊥) e^{-|x1| t} dt is used.
    """
    x = np.asarray(x, float)
    if np.any(np.linalg.norm(x, axis=-1) == 0):
        raise ValueError("g_ρ is singular at x = 0")
    if rho.is_zero:
        return -G0(x).astype(complex)
    tau = rho.tau
    x1, _, rp = _frame_coords(rho, x)
    out = np.empty(x.shape[:-1], dtype=complex)
    far = tau * x1 < -_BRANCH
    near = ~far
    if np.any(near):
        xn = x[near]
        out[near] = -np.exp(-(xn @ rho.rho)) * (G0(xn) + eval_H(rho, xn, tol * 1e-2))
    if np.any(far):
        s = -x1[far]
        r = rp[far]
        T = 40.0 / s

        # integrate t on [0, T] per point: map to the unit interval
        def mapped(u, half):
            t = u * T
            return (j0((t + tau) * r) * np.exp(-s * t) * T * half)[None]

        vals, _ = _gauss_doubling(mapped, 0.0, 1.0, s.shape, tol, scale=T)
        phase = np.exp(-1j * (x[far] @ rho.b))
        out[far] = -phase * vals[0] / FOUR_PI
    return out


# ---------------------------------------------------------------------------
# layer operators
# ---------------------------------------------------------------------------


def _isotropic_moments(rho: ComplexFrequency, L: int, M: int):
    """A[i, k] = ∫ conj(Y_i) (ζ_k·x̂)^{l_i} dΩ and At[i, k] = ∫ Y_i (ζ_k·x̂)^{l_i} dΩ.

    ζ_k = â + i(cos φ_k b̂ + sin φ_k ĉ), φ_k = 2πk/M.  Degree-l_i integrands are
    polynomials, so the degree-L grid is exact.
    """
    F = rho.frame()
    grid = sphere.sphere_grid(L, 1.0)
    xh = grid.unit_nodes()
    phi = 2 * np.pi * np.arange(M) / M
    zeta = F[0][None, :] + 1j * (np.cos(phi)[:, None] * F[1][None, :] + np.sin(phi)[:, None] * F[2][None, :])
    dots = np.einsum("tpc,kc->ktp", xh, zeta)  # (M, nθ, nφ)
    ls, _ = degree_arrays(L)
    n = n_coeffs(L)
    A = np.zeros((n, M), dtype=complex)
    powk = np.ones_like(dots)
    for l in range(L + 1):
        sel = ls == l
        c = grid.analyze(powk)  # (M, n)
        A[sel] = c[:, sel].T
        powk = powk * dots
    perm, sign = sphere.real_pairing_matrix(L)
    At = sign[:, None] * A[perm]
    return A, At


def harmonic_layer_matrices(rho: ComplexFrequency, L: int, R: float):
    """Coefficient matrices of the H_ρ parts of S_ρ and B_ρ on the sphere r = R.

    Exact for the degree-L projection: the p-integral is done in closed form
    and the φ-sum is an exact trapezoid rule.
    """
    n = n_coeffs(L)
    if rho.is_zero:
        z = np.zeros((n, n), dtype=complex)
        return z, z.copy()
    M = 2 * L + 2
    A, At = _isotropic_moments(rho, L, M)
    ls, _ = degree_arrays(L)
    tau = rho.tau
    li = ls[:, None].astype(float)
    lj = ls[None, :].astype(float)
    # log of R^{li+lj} τ^{li+lj+1} / ((li+lj+1) li! lj!) to avoid overflow
    logc = (li + lj) * math.log(R) + (li + lj + 1) * math.log(tau) - np.log(li + lj + 1) \
        - gammaln(li + 1) - gammaln(lj + 1)
    coef = np.exp(logc) * (-1.0) ** lj
    ang = (A @ At.T) * (2 * np.pi / M)
    SH = -(R**2 / (8 * np.pi**2)) * coef * ang
    BH = SH * (lj / R)
    return SH, BH


@dataclass
class LayerOperators:
    """S_ρ, B_ρ on degree <= L coefficients of the sphere r = R.

    (S f)(x) = ∫ G_ρ(x - y) f(y) dS_y and (B f)(x) = p.v. ∫ ∂_{ν_y} G_ρ(x - y) f(y) dS_y.
    """

    rho: ComplexFrequency
    R: float
    L: int
    S: np.ndarray
    B: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def S0(self) -> np.ndarray:
        ls, _ = degree_arrays(self.L)
        return self.R / (2 * ls + 1.0)

    @property
    def B0(self) -> np.ndarray:
        ls, _ = degree_arrays(self.L)
        return -1.0 / (2 * (2 * ls + 1.0))

    def identity_residual(self) -> float:
        """‖S Λ1 - B - I/2‖ relative to ‖B‖; vanishes for the exact operators."""
        ls, _ = degree_arrays(self.L)
        Z = self.S * (ls / self.R)[None, :] - self.B - 0.5 * np.eye(n_coeffs(self.L))
        return float(np.max(np.abs(Z)) / max(np.max(np.abs(self.B)), 1.0))


def assemble_layers(rho: ComplexFrequency, L: int, R: float = 1.0) -> LayerOperators:
    """Layer operators with the G0 parts from the sphere spectrum and H_ρ parts in closed form."""
    SH, BH = harmonic_layer_matrices(rho, L, R)
    ls, _ = degree_arrays(L)
    S = SH + np.diag(R / (2 * ls + 1.0))
    B = BH + np.diag(-1.0 / (2 * (2 * ls + 1.0)))
    return LayerOperators(rho, float(R), L, S, B, info={"tauR": rho.tau * R})


def harmonic_layer_matrices_direct(rho: ComplexFrequency, L: int, R: float, Lq: int | None = None):
    """Reference S_H, B_H by double node quadrature of pointwise H_ρ; for testing."""
    Lq = Lq or (L + int(math.ceil(4 * rho.tau * R)) + 8)
    g = sphere.sphere_grid(Lq, R)
    pts = g.nodes().reshape(-1, 3)
    w = g.weights().reshape(-1)
    Y = sphere.ylm_at(L, pts)
    nu = pts / R
    d = pts[:, None, :] - pts[None, :, :]
    H, gH = eval_H(rho, d, gradient=True)
    dH = -np.einsum("xyc,yc->xy", gH, nu)
    # coefficients per unit-sphere convention: divide the x-integral by R²
    left = (Y.conj() * w[:, None]).T / R**2
    right = Y * w[:, None]
    return left @ H @ right, left @ dH @ right


def _check_offboundary(x, R):
    r = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(r - R) <= 1e-12 * R):
        raise ValueError("point on the sphere: use the boundary operators")
    return r


def _harmonic_quadrature(rho, f: BoundaryField, R, x, kind):
    r = np.linalg.norm(x, axis=-1)
    Lq = f.L + int(math.ceil(2 * rho.tau * (R + np.max(r)))) + 16
    g = sphere.sphere_grid(Lq, R)
    y = g.nodes().reshape(-1, 3)
    w = g.weights().reshape(-1)
    fv = g.synthesize(f.truncate(f.L).coeffs).reshape(-1)
    d = x[:, None, :] - y[None, :, :]
    if kind == "single":
        K = eval_H(rho, d)
    else:
        _, gH = eval_H(rho, d, gradient=True)
        K = -np.einsum("xyc,yc->xy", gH, y / R)
    return K @ (w * fv)


def eval_single_offboundary(ops: LayerOperators, f: BoundaryField, x) -> np.ndarray:
    """S_ρ f at points off the sphere; the G0 part by its exact multipole series."""
    x = np.atleast_2d(np.asarray(x, float))
    R = ops.R
    r = _check_offboundary(x, R)
    ls, _ = degree_arrays(f.L)
    Y = sphere.ylm_at(f.L, x)
    ratio = np.where(r[:, None] > R, (R / r[:, None]) ** (ls + 1), (r[:, None] / R) ** ls)
    v0 = R * (Y * ratio) @ (f.coeffs / (2 * ls + 1))
    return v0 + _harmonic_quadrature(ops.rho, f, R, x, "single")


def eval_double_offboundary(ops: LayerOperators, f: BoundaryField, x) -> np.ndarray:
    """D_ρ f = ∫ ∂_{ν_y} G_ρ(x - y) f(y) dS_y at points off the sphere."""
    x = np.atleast_2d(np.asarray(x, float))
    R = ops.R
    r = _check_offboundary(x, R)
    ls, _ = degree_arrays(f.L)
    Y = sphere.ylm_at(f.L, x)
    out = r[:, None] > R
    fac = np.where(out, ls / (2 * ls + 1.0) * (R / r[:, None]) ** (ls + 1),
                   -(ls + 1.0) / (2 * ls + 1.0) * (r[:, None] / R) ** ls)
    v0 = (Y * fac) @ f.coeffs
    return v0 + _harmonic_quadrature(ops.rho, f, R, x, "double")


# ---------------------------------------------------------------------------
# truncated Bourgain norm
# ---------------------------------------------------------------------------


def xnorm_truncated(field, rho: ComplexFrequency, b: float) -> float:
    """‖ |p_ρ(ξ)|^b û(ξ) ‖ over the grid frequencies shifted by half a step.

    ``field`` is a PotentialGrid; with b = 0 this is the grid L² norm.
    """
    u = np.asarray(field.values, dtype=complex)
    n = field.n
    h = field.h
    A = field.half_width
    delta = np.pi / (2 * A)
    pts = field.points()
    mod = np.exp(-1j * delta * pts.sum(axis=-1))
    U = np.fft.fftn(u * mod)
    k = 2 * np.pi * np.fft.fftfreq(n, d=h) + delta
    KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
    xi = np.stack([KX, KY, KZ], -1)
    if b != 0:
        p = np.abs(symbol(rho, xi))
        if np.min(p) <= 1e-8:
            raise ValueError("grid frequency on the characteristic variety of p_ρ")
        weight = p ** (2 * b)
    else:
        weight = 1.0
    return float(np.sqrt(h**3 / n**3 * np.sum(weight * np.abs(U) ** 2)))
