"""Moving DtN data from an inner sphere r = R1 to an outer sphere r = R.

The conductivity is extended across the shell R1 < r < R with a C¹ match at
R1 and γ ≡ 1 for r ≥ R0.  The transferred map is

    Λ̃ = Λ²¹ (-Λγ - Λ¹¹)^{-1} Λ¹² + Λ²²

with the shell blocks from ``forward.annulus_dtn``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import sphere
from .errors import EllipticityError, InvertibilityFailure
from .forward import AnnulusDtN, ConductivityField, DtNMap, riccati_propagate
from .sphere import BoundaryField, n_coeffs

log = logging.getLogger(__name__)


def hermite_cutoff(r, R1, R0):
    """Cubic χ with χ(R1) = 1, χ'(R1) = 0, χ = 0 for r >= R0 (C¹ there); and χ'."""
    h = R0 - R1
    s = np.clip((np.asarray(r, float) - R1) / h, 0.0, 1.0)
    chi = 1.0 - 3.0 * s * s + 2.0 * s**3
    dchi = (-6.0 * s + 6.0 * s * s) / h
    return chi, dchi


def _slope_profile(r, R1, delta):
    """(r - R1) or its bounded rescue δ tanh((r - R1)/δ); equal value and slope at R1."""
    d = np.asarray(r, float) - R1
    if delta is None:
        return d, np.ones_like(d)
    th = np.tanh(d / delta)
    return delta * th, 1.0 - th * th


@dataclass
class ExtendedConductivity:
    """Shell conductivity built from boundary value and normal derivative on r = R1."""

    field: ConductivityField
    gamma_b: BoundaryField
    dgamma_b: BoundaryField
    R1: float
    R0: float
    R: float
    delta: float | None = None
    info: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.field(x)


def _angular(f: BoundaryField):
    c = f.coeffs

    def val(x):
        return np.real(sphere.ylm_at(f.L, x) @ c)

    def grad(x):
        _, G = sphere.ylm_at(f.L, x, gradient=True)
        return np.real(np.einsum("...nc,n->...c", G, c))

    return val, grad


def _is_constant(f: BoundaryField, tol: float) -> bool:
    scale = max(abs(f.coeffs[0]), 1.0)
    return bool(np.max(np.abs(f.coeffs[1:]), initial=0.0) <= tol * scale)


def extend_conductivity(gamma_b: BoundaryField, dgamma_b: BoundaryField, R1: float = 1.0, R0: float = 1.5,
                        R: float = 2.0, C0: float | None = None, radial_tol: float = 1e-14,
                        n_check: int = 4000) -> ExtendedConductivity:
    """γ_ext(rθ) = 1 + χ(r) [γ_b(θ) - 1 + (r - R1) dγ_b(θ)] on R1 <= r <= R.

    If the sampled minimum falls below C0/2, the slope term (r - R1) is
    replaced by δ tanh((r - R1)/δ) with the largest δ in a halving ladder
    that restores C0/2; value and slope at R1 are unchanged.
    """
    if not 0 < R1 < R0 < R:
        raise ValueError("need 0 < R1 < R0 < R")
    gamma_b = BoundaryField(np.asarray(gamma_b.coeffs))
    dgamma_b = BoundaryField(np.asarray(dgamma_b.coeffs))
    Lb = max(gamma_b.L, dgamma_b.L)
    grid = sphere.sphere_grid(max(Lb, 2) + 2, 1.0)
    gv = np.real(grid.synthesize(gamma_b.truncate(grid.L).coeffs))
    dv = np.real(grid.synthesize(dgamma_b.truncate(grid.L).coeffs))
    if C0 is None:
        C0 = float(min(np.min(gv), 1.0))
    if np.min(gv) < C0 * (1 - 1e-12) or C0 <= 0:
        raise EllipticityError(f"boundary values below the floor: min {np.min(gv):.3e}, C0 {C0:.3e}")
    radial = _is_constant(gamma_b, radial_tol) and _is_constant(dgamma_b, radial_tol)
    Y00 = 1.0 / np.sqrt(4 * np.pi)

    rr = np.linspace(R1, R, 801)
    chi, _ = hermite_cutoff(rr, R1, R0)
    delta = None
    h = R0 - R1
    for k in range(40):
        slope, _ = _slope_profile(rr, R1, delta)
        vals = 1.0 + chi[:, None] * ((gv.reshape(-1) - 1.0)[None, :] + slope[:, None] * dv.reshape(-1)[None, :])
        if np.min(vals) >= 0.5 * C0:
            break
        delta = h * 0.5**k
    else:
        raise EllipticityError("extension could not be made elliptic")
    if delta is not None:
        log.warning("extension slope term bounded with delta=%.3e to keep gamma >= C0/2", delta)

    def rad_term(r):
        c, _ = hermite_cutoff(r, R1, R0)
        return c

    def slope_term(r):
        c, _ = hermite_cutoff(r, R1, R0)
        return c * _slope_profile(r, R1, delta)[0]

    if radial:
        g0 = float(np.real(gamma_b.coeffs[0])) * Y00
        d0 = float(np.real(dgamma_b.coeffs[0])) * Y00

        def prof(r):
            c, _ = hermite_cutoff(r, R1, R0)
            s, _ = _slope_profile(r, R1, delta)
            return 1.0 + c * (g0 - 1.0 + s * d0)

        def dprof(r):
            c, dc = hermite_cutoff(r, R1, R0)
            s, ds = _slope_profile(r, R1, delta)
            return dc * (g0 - 1.0 + s * d0) + c * ds * d0

        fld = ConductivityField.radial(prof, dprof, R, R_inner=R1, R0=R0, breakpoints=(R0,),
                                       label="extension")
    else:
        ga, gga = _angular(gamma_b)
        da, gda = _angular(dgamma_b)

        def func(x):
            r = np.linalg.norm(x, axis=-1)
            return 1.0 + rad_term(r) * (ga(x) - 1.0) + slope_term(r) * da(x)

        def grad(x):
            r = np.linalg.norm(x, axis=-1)
            xh = x / r[..., None]
            c, dc = hermite_cutoff(r, R1, R0)
            s, ds = _slope_profile(r, R1, delta)
            A = ga(x) - 1.0
            D = da(x)
            dr = dc * (A + s * D) + c * ds * D
            tang = (c[..., None] * gga(x) + (c * s)[..., None] * gda(x)) / r[..., None]
            return dr[..., None] * xh + tang

        terms = [
            (lambda r: np.ones_like(np.asarray(r, float)), lambda x: np.ones(np.shape(x)[:-1])),
            (rad_term, lambda x: ga(x) - 1.0),
            (slope_term, da),
        ]
        fld = ConductivityField.general(func, grad, R, R_inner=R1, R0=R0, terms=terms,
                                        breakpoints=(R0,), label="extension")
    fld.C0 = 0.5 * C0
    info = {"radial": radial, "delta": delta, "min": float(np.min(vals)), "C0": C0,
            "sup_grad_log": fld.sup_grad_log(n_check)}
    return ExtendedConductivity(fld, gamma_b, dgamma_b, R1, R0, R, delta, info)


def radial_extension(gamma: ConductivityField, R1: float = 1.0, R0: float = 1.5, R: float = 2.0,
                     **kw) -> ExtendedConductivity:
    """Extension from the exact value and radial derivative of a radial γ at R1."""
    c = np.sqrt(4 * np.pi)
    gb = BoundaryField(np.array([float(gamma.profile(R1)) * c]))
    db = BoundaryField(np.array([float(gamma.dprofile(R1)) * c]))
    return extend_conductivity(gb, db, R1, R0, R, **kw)


@dataclass
class TransferResult:
    dtn: DtNMap
    condition: float
    operator: np.ndarray = field(repr=False, default=None)


def _inner_operator(dtn: DtNMap, blocks: AnnulusDtN):
    if dtn.L != blocks.L:
        raise ValueError(f"DtN degree {dtn.L} != shell degree {blocks.L}")
    if abs(dtn.R - blocks.R1) > 1e-12 * blocks.R1:
        raise ValueError("DtN map does not live on the inner sphere of the shell")
    return -dtn.matrix - blocks.L11


def _radial_defect(dtn: DtNMap, shell: ConductivityField, R1: float, R: float) -> np.ndarray:
    """Λ̃ - l/R per degree by Riccati propagation through the shell.

    Flux continuity at R1 gives y(R1) = (R1 (Λγ - l/R1) + l (1 - γ_b)) / γ_b;
    the result equals the block formula per degree, without its cancellation.
    """
    ells = np.arange(dtn.L + 1, dtype=float)
    d_in = dtn.defect if dtn.defect is not None else dtn.eigenvalues - ells / dtn.R
    gb = float(shell.profile(R1))
    y0 = (R1 * d_in + ells * (1.0 - gb)) / gb
    y, _ = riccati_propagate(shell, ells, y0, R1, R)
    gR = float(shell.profile(R))
    return ((gR - 1.0) * ells + gR * y) / R


def transfer_dtn(dtn: DtNMap, blocks: AnnulusDtN, max_condition: float = 1e12,
                 shell: ConductivityField | None = None) -> TransferResult:
    """Λ̃ on r = R from Λγ on r = R1 and the shell blocks.

    When Λγ and the shell conductivity ``shell`` are radial, the per-degree
    defect Λ̃ - l/R is also obtained by Riccati propagation and stored, so
    later stages see it without cancellation; the gap to the block formula
    is recorded in ``info``.
    """
    A = _inner_operator(dtn, blocks)
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > max_condition:
        raise InvertibilityFailure(f"(-Λγ - Λ¹¹) numerically singular, cond {cond:.2e}", cond)
    diag = all(np.count_nonzero(M - np.diag(np.diag(M))) == 0
               for M in (A, blocks.L12, blocks.L21, blocks.L22))
    if diag:
        a = np.diag(A)
        lam = np.diag(blocks.L21) * np.diag(blocks.L12) / a + np.diag(blocks.L22)
        ls, _ = sphere.degree_arrays(dtn.L)
        first = np.array([sphere.lm_index(l, 0) for l in range(dtn.L + 1)])
        eig = lam[first].real
        # defect from l/R without cancellation where Λγ is diagonal with a defect
        out = DtNMap(blocks.R, dtn.L, eigenvalues=eig, info={"method": "transfer", "condition": cond})
        if shell is not None and shell.kind == "radial" and dtn.is_diagonal:
            defect = _radial_defect(dtn, shell, blocks.R1, blocks.R)
            ells = np.arange(dtn.L + 1)
            gap = float(np.max(np.abs(eig - (ells / blocks.R + defect))) / max(np.max(np.abs(eig)), 1e-300))
            out = DtNMap(blocks.R, dtn.L, eigenvalues=ells / blocks.R + defect, defect=defect,
                         info={"method": "transfer+riccati", "condition": cond, "block_formula_gap": gap})
    else:
        lu = sla.lu_factor(A)
        M = blocks.L21 @ sla.lu_solve(lu, blocks.L12) + blocks.L22
        out = DtNMap(blocks.R, dtn.L, entries=M, info={"method": "transfer", "condition": cond})
    return TransferResult(out, cond, A)


def inner_trace(dtn: DtNMap, blocks: AnnulusDtN, f) -> np.ndarray:
    """g = (-Λγ - Λ¹¹)^{-1} Λ¹² f: the trace on r = R1 of the solution with data f on r = R."""
    A = _inner_operator(dtn, blocks)
    return np.linalg.solve(A, blocks.L12 @ np.asarray(f))
