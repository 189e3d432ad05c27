"""Pointwise recovery of γ and its gradient on the boundary from oscillatory probes.

A probe at x ∈ ∂B_R with tangent t is the boundary trace of the harmonic
exponential e^{N(it - ν)·(y - x)}, cut off by a smooth polynomial bump of radius
c N^{-1/2} and normalized to unit γ≡1 Dirichlet energy.  Its energy
localizes at x as N grows, so ⟨Λγ f_N, f̄_N⟩ → γ(x).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import sphere
from .errors import EllipticityError, ResolutionError
from .forward import DtNMap, composite_gauss, interior_solution
from .sphere import BoundaryField, SphericalGrid, degree_arrays

log = logging.getLogger(__name__)

CUTOFF = 3.0


BUMP_POWER = 8


def bump(s):
    """Polynomial bump (1 - s²)^8 on [0, 1], zero beyond (C^7 at the edge)."""
    s = np.asarray(s, float)
    return np.clip(1.0 - s * s, 0.0, None) ** BUMP_POWER


def tangent_frame(x):
    """Unit normal and two orthonormal tangents at x on a sphere."""
    x = np.asarray(x, float)
    nu = x / np.linalg.norm(x)
    a = np.eye(3)[np.argmin(np.abs(nu))]
    t1 = np.cross(nu, a)
    t1 /= np.linalg.norm(t1)
    return nu, t1, np.cross(nu, t1)


def required_degree(N: float, R: float = 1.0) -> int:
    """Harmonic degree that resolves a probe: content sits near l ≈ N R."""
    k = N * R
    return int(math.ceil(k + 10.0 * math.sqrt(k) + 8))


@dataclass
class OscillatoryProbe:
    x: np.ndarray
    t: np.ndarray
    N: float
    field: BoundaryField
    R: float = 1.0
    cutoff: float = CUTOFF
    info: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.field.L

    @property
    def grid(self) -> SphericalGrid:
        return sphere.sphere_grid(self.L, self.R)


def _harmonic_energy(c, R, dtn1=None):
    if dtn1 is None:
        ls, _ = degree_arrays(sphere.degree_of(c.size))
        lc = c * (ls / R)
    else:
        lc = dtn1.apply(c)
    return float(np.real(R**2 * np.vdot(c, lc)))


def make_probe(x, t, N: float, grid: SphericalGrid, dtn1: DtNMap | None = None,
               cutoff: float = CUTOFF, tail_tol: float = 1e-8) -> OscillatoryProbe:
    """Build f_N at x with oscillation direction t on ``grid``.

    Raises ``ResolutionError`` when the grid degree leaves more than
    ``tail_tol`` of the H^{1/2} energy in the top band of degrees.
    """
    if N < 4:
        raise ValueError("probe frequency N must be >= 4")
    R = grid.R
    x = np.asarray(x, float)
    t = np.asarray(t, float)
    if abs(np.linalg.norm(x) - R) > 1e-10 * R:
        raise ValueError("probe centre must lie on the sphere")
    nu = x / R
    if abs(np.dot(t, nu)) > 1e-10 or abs(np.linalg.norm(t) - 1) > 1e-10:
        raise ValueError("t must be a unit tangent at x")
    y = grid.nodes()
    d = y - x
    dist = np.linalg.norm(d, axis=-1)
    radius = cutoff / math.sqrt(N)
    phase = N * (d @ (1j * t - nu))
    vals = bump(dist / radius) * np.exp(phase)
    c = grid.analyze(vals)
    L = grid.L
    ls, _ = degree_arrays(L)
    band = ls > L - max(2, int(math.sqrt(N * R)))
    w = ls + 1.0
    tail = float(np.sum(w[band] * np.abs(c[band]) ** 2) / np.sum(w * np.abs(c) ** 2))
    if tail > tail_tol:
        raise ResolutionError(
            f"probe N={N:g} unresolved at L={L}: top-band energy {tail:.1e}; use L >= {required_degree(N, R)}"
        )
    E = _harmonic_energy(c, R, dtn1)
    c = c / math.sqrt(E)
    f = BoundaryField(c)
    # norm profile: ‖f‖_{H^s} ~ N^{s - 1/2}
    prof = {s: sphere.hs_norm(f, s) / N ** (s - 0.5) for s in (0.0, 0.5, 1.0)}
    if max(prof.values()) / min(prof.values()) > 100.0:
        warnings.warn(f"probe norm profile off the N^(s-1/2) law: {prof}", RuntimeWarning)
    return OscillatoryProbe(x, t, float(N), f, R, cutoff, info={"tail": tail, "profile": prof})


def probe_ladder(x, t, Ns: Sequence[float], R: float = 1.0, L: int | None = None, **kw):
    """Probes at x for increasing N on one grid fine enough for the largest N."""
    L = L or required_degree(max(Ns), R)
    g = sphere.sphere_grid(L, R)
    return [make_probe(x, t, N, g, **kw) for N in Ns]


@dataclass
class ProbeEstimate:
    Ns: np.ndarray
    sequence: np.ndarray
    estimate: float
    extrapolated: bool = False


def _dtn_apply(dtn: DtNMap, f: BoundaryField):
    c = f.coeffs
    if dtn.L < f.L:
        tail = np.sum(np.abs(c[sphere.n_coeffs(dtn.L):]) ** 2) / np.sum(np.abs(c) ** 2)
        if tail > 1e-12:
            raise ResolutionError(f"DtN degree {dtn.L} below probe degree {f.L}")
        c = c[: sphere.n_coeffs(dtn.L)]
    elif dtn.L > f.L:
        c = f.truncate(dtn.L).coeffs
    return c, dtn.apply(c)


def _richardson(Ns, seq):
    # e_N ≈ e + a/N from the last two terms
    n1, n2 = Ns[-2], Ns[-1]
    return float((n2 * seq[-1] - n1 * seq[-2]) / (n2 - n1))


def recover_gamma_boundary(dtn: DtNMap, probes: Sequence[OscillatoryProbe], extrapolate: bool = False) -> ProbeEstimate:
    """Sequence e_N = ⟨Λγ f_N, f̄_N⟩ over the probe ladder."""
    xs = {tuple(np.round(p.x, 12)) for p in probes}
    if len(xs) != 1:
        raise ValueError("probes must share their centre")
    seq = []
    for p in probes:
        c, lc = _dtn_apply(dtn, p.field)
        seq.append(float(np.real(p.R**2 * np.vdot(c, lc))))
    Ns = np.array([p.N for p in probes])
    seq = np.array(seq)
    if extrapolate and len(seq) > 1:
        return ProbeEstimate(Ns, seq, _richardson(Ns, seq), True)
    return ProbeEstimate(Ns, seq, float(seq[-1]))


def rellich_integrand(f_vals, grad_t, lam_vals, gamma_vals, nu, alpha):
    """Boundary integrand whose integral tends to α·∇γ(x).

    α·∇ū on the boundary is split into α·∇_t f̄ plus the co-normal part
    (α·ν) conj(Λf)/γ; both are boundary data.
    """
    an = nu @ alpha
    at = grad_t @ alpha
    return an * (gamma_vals * np.sum(np.abs(grad_t) ** 2, axis=-1) - np.abs(lam_vals) ** 2 / gamma_vals) \
        - 2.0 * np.real(lam_vals * np.conj(at))


def recover_gradient_boundary(dtn: DtNMap, gamma_b, probes: Sequence[OscillatoryProbe], alpha,
                              extrapolate: bool = False) -> ProbeEstimate:
    """Estimates of α·∇γ(x) from the Rellich-type boundary identity.

    ``gamma_b`` is a BoundaryField of boundary values, a scalar, or a
    callable of boundary points.
    """
    alpha = np.asarray(alpha, float)
    seq = []
    for p in probes:
        g = p.grid
        c, lc = _dtn_apply(dtn, p.field)
        cc = c if c.size == p.field.coeffs.size else BoundaryField(c).truncate(p.L).coeffs
        lc = BoundaryField(lc).truncate(p.L).coeffs
        fv = g.synthesize(cc)
        gt = g.synthesize_gradient(cc)
        lv = g.synthesize(lc)
        if isinstance(gamma_b, BoundaryField):
            gv = np.real(g.synthesize(gamma_b.truncate(min(gamma_b.L, p.L)).coeffs))
        elif callable(gamma_b):
            gv = np.asarray(gamma_b(g.nodes()), float)
        else:
            gv = np.full(g.shape, float(gamma_b))
        if np.min(gv) <= 0:
            raise EllipticityError("boundary conductivity not positive at a node")
        integrand = rellich_integrand(fv, gt, lv, gv, g.unit_nodes(), alpha)
        seq.append(float(np.real(g.integrate(integrand))))
    Ns = np.array([p.N for p in probes])
    seq = np.array(seq)
    if extrapolate and len(seq) > 1:
        return ProbeEstimate(Ns, seq, _richardson(Ns, seq), True)
    return ProbeEstimate(Ns, seq, float(seq[-1]))


def stability_gap(d1: DtNMap, d2: DtNMap) -> float:
    """‖Λ1 - Λ2‖ as a map H^{1/2} → H^{-1/2} in the discrete Sobolev weights."""
    if d1.L != d2.L or abs(d1.R - d2.R) > 1e-14 * d1.R:
        raise ValueError("DtN maps live on different spaces")
    w = sphere.sobolev_weights(d1.L, -0.5)
    if d1.is_diagonal and d2.is_diagonal:
        return float(np.max(np.abs(w * (d1.diagonal() - d2.diagonal()) * w)))
    D = d1.matrix - d2.matrix
    return float(np.linalg.norm(w[:, None] * D * w[None, :], 2))


def energy_weight_check(gamma, probe: OscillatoryProbe, psi: Callable, Nr: int = 24, n_radial: int = 12,
                        layers: int = 10) -> float:
    """Volume quadrature of ∫ ψ |∇u_N|² for the Galerkin solution with data f_N.

    Radial quadrature is graded towards r = R where the energy concentrates
    within depth ~1/N.
    """
    R = probe.R
    breaks = [R - (2.0**k) / probe.N for k in range(layers) if R - (2.0**k) / probe.N > 0]
    rq, wq = composite_gauss(0.0, R, n_radial, breaks)
    u = interior_solution(gamma, probe.field, Nr=Nr, R=R)
    g = sphere.sphere_grid(probe.L + 2, 1.0)
    total = 0.0
    unit = g.unit_nodes()
    for r, w in zip(rq, wq):
        _, _, grad = u.shell(r, g)
        dens = np.sum(np.abs(grad) ** 2, axis=-1) * psi(r * unit)
        total += w * r * r * float(np.real(g.integrate(dens)))
    return total
