"""Forward conductivity solvers and Dirichlet-to-Neumann maps on balls and shells.

Everything is expressed in the harmonic coefficient space of ``sphere``:
a DtN map is an operator on coefficient vectors, so that
``Λ Y_j = Σ_i M_ij Y_i`` on the sphere of radius R.

Two independent routes are provided for radial conductivities: a Riccati
ODE per degree (``dtn_radial``) and spectral Galerkin (``dtn_general``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.sparse import diags as sparse_diags
from scipy.special import eval_jacobi

from . import sphere
from .errors import EllipticityError, InvertibilityFailure, SolverError
from .sphere import BoundaryField, degree_arrays, n_coeffs

log = logging.getLogger(__name__)

RADIAL_EPS = 1e-6


# ---------------------------------------------------------------------------
# conductivities
# ---------------------------------------------------------------------------


@dataclass
class ConductivityField:
    """A conductivity on a ball (``R_inner is None``) or a shell (R_inner, R).

    Radial fields carry ``profile``/``dprofile`` of r.  General fields carry
    ``func``/``grad`` of Cartesian points (..., 3), and optionally ``terms``,
    a separable form γ(x) = Σ ρ_t(|x|) α_t(x/|x|) used for fast assembly.
    ``breakpoints`` lists radii where γ is not smooth; quadrature and
    radial elements split there.
    """

    kind: str
    R: float
    R_inner: float | None = None
    profile: Callable | None = None
    dprofile: Callable | None = None
    func: Callable | None = None
    grad: Callable | None = None
    terms: list | None = None
    C0: float = 0.0
    R0: float | None = None
    breakpoints: tuple = ()
    label: str = ""

    # -- construction helpers ----------------------------------------------

    @classmethod
    def radial(cls, profile, dprofile, R=1.0, *, R_inner=None, C0=None, R0=None, breakpoints=(), label=""):
        fld = cls("radial", float(R), R_inner, profile, dprofile, C0=0.0, R0=R0,
                  breakpoints=tuple(breakpoints), label=label)
        fld.C0 = fld.min_value() if C0 is None else C0
        return fld

    @classmethod
    def constant(cls, c=1.0, R=1.0, *, R_inner=None):
        c = float(c)
        return cls.radial(lambda r: np.full_like(np.asarray(r, float), c),
                          lambda r: np.zeros_like(np.asarray(r, float)),
                          R, R_inner=R_inner, C0=c, R0=(R_inner or 0.0) if c == 1.0 else None,
                          label=f"constant({c:g})")

    @classmethod
    def general(cls, func, grad, R=1.0, *, R_inner=None, C0=None, R0=None, terms=None,
                breakpoints=(), label=""):
        fld = cls("general", float(R), R_inner, func=func, grad=grad, terms=terms, R0=R0,
                  breakpoints=tuple(breakpoints), label=label)
        fld.C0 = fld.min_value() if C0 is None else C0
        return fld

    # -- evaluation ----------------------------------------------------------

    @property
    def r_min(self) -> float:
        return 0.0 if self.R_inner is None else float(self.R_inner)

    @property
    def one_near_outer(self) -> bool:
        return self.R0 is not None and self.R0 < self.R

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "radial":
            return np.asarray(self.profile(np.linalg.norm(x, axis=-1)), dtype=float)
        return np.asarray(self.func(x), dtype=float)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "radial":
            r = np.linalg.norm(x, axis=-1)
            rs = np.where(r > 0, r, 1.0)
            return (np.asarray(self.dprofile(r)) / rs)[..., None] * x
        return np.asarray(self.grad(x), dtype=float)

    def radial_values(self, r):
        if self.kind != "radial":
            raise TypeError("radial_values needs a radial conductivity")
        return np.asarray(self.profile(np.asarray(r, float)), dtype=float)

    def sample_points(self, n=4000, seed=0):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        r0 = self.r_min
        u = rng.random(n)
        r = (r0**3 + u * (self.R**3 - r0**3)) ** (1.0 / 3.0)
        return d * r[:, None]

    def min_value(self, n=4000) -> float:
        if self.kind == "radial":
            r = np.linspace(self.r_min, self.R, n)
            return float(np.min(self.radial_values(r)))
        return float(np.min(self(self.sample_points(n))))

    def sup_grad_log(self, n=4000) -> float:
        """Sampled sup |∇ log γ|; recorded, never enforced."""
        x = self.sample_points(n)
        return float(np.max(np.linalg.norm(self.gradient(x), axis=-1) / self(x)))

    def check(self, n=2000, seed=1, fd_tol=1e-5) -> dict:
        """Spot-check ellipticity, the γ≡1 shell and the gradient evaluator."""
        x = self.sample_points(n, seed)
        g = self(x)
        if np.min(g) < self.C0 - 1e-14 or self.C0 <= 0:
            raise EllipticityError(f"γ min {np.min(g):.3e} below floor C0={self.C0:.3e}")
        out = {"min": float(np.min(g)), "sup_grad_log": float(np.max(np.linalg.norm(self.gradient(x), axis=-1) / g))}
        if self.one_near_outer:
            r = np.linalg.norm(x, axis=-1)
            outer = r >= self.R0
            out["outer_dev"] = float(np.max(np.abs(g[outer] - 1.0), initial=0.0))
        h = 1e-6
        fd = np.zeros_like(x)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd[:, k] = (self(x + e) - self(x - e)) / (2 * h)
        sel = np.ones(len(x), bool)
        if self.breakpoints:
            r = np.linalg.norm(x, axis=-1)
            for b in self.breakpoints:
                sel &= np.abs(r - b) > 10 * h
        out["fd_grad_err"] = float(np.max(np.abs(fd[sel] - self.gradient(x)[sel]), initial=0.0))
        if out["fd_grad_err"] > fd_tol:
            raise ValueError(f"gradient evaluator mismatch {out['fd_grad_err']:.2e}")
        return out


def gaussian_profile(amplitude, center=0.0, width=0.4):
    """γ(r) = 1 + a exp(-((r - c)/w)^2) and its derivative."""

    def f(r):
        r = np.asarray(r, float)
        return 1.0 + amplitude * np.exp(-(((r - center) / width) ** 2))

    def df(r):
        r = np.asarray(r, float)
        z = (r - center) / width
        return -2.0 * amplitude * z / width * np.exp(-z * z)

    return f, df


def poly_bump_profile(amplitude, support, power=4):
    """γ(r) = 1 + a (1 - (r/s)^2)^p for r < s, 1 beyond; C^{p-1} at r = s."""

    def f(r):
        r = np.asarray(r, float)
        t = np.clip(1.0 - (r / support) ** 2, 0.0, None)
        return 1.0 + amplitude * t**power

    def df(r):
        r = np.asarray(r, float)
        t = np.clip(1.0 - (r / support) ** 2, 0.0, None)
        return amplitude * power * t ** (power - 1) * (-2.0 * r / support**2)

    return f, df


# ---------------------------------------------------------------------------
# DtN maps
# ---------------------------------------------------------------------------


@dataclass
class DtNMap:
    """Dirichlet-to-Neumann operator on degree <= L coefficients of the sphere r = R.

    Either ``eigenvalues`` (per degree, radial case) or a dense ``entries``
    matrix is set.  ``defect`` optionally holds eigenvalues minus l/R,
    computed without cancellation.
    """

    R: float
    L: int
    entries: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    defect: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.entries is None and self.eigenvalues is None:
            raise ValueError("DtNMap needs entries or eigenvalues")
        if self.entries is not None:
            self.entries = np.asarray(self.entries, dtype=complex)
            if self.entries.shape != (n_coeffs(self.L),) * 2:
                raise ValueError("entries shape does not match L")
        if self.eigenvalues is not None:
            self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)

    @property
    def is_diagonal(self) -> bool:
        return self.entries is None

    @property
    def matrix(self) -> np.ndarray:
        if self.entries is not None:
            return self.entries
        ls, _ = degree_arrays(self.L)
        return np.diag(self.eigenvalues[ls].astype(complex))

    def diagonal(self) -> np.ndarray:
        ls, _ = degree_arrays(self.L)
        if self.entries is None:
            return self.eigenvalues[ls].astype(complex)
        return np.diag(self.entries).copy()

    def defect_matrix(self) -> np.ndarray:
        """Λ - Λ_1 where Λ_1 is the harmonic (γ≡1) DtN of the same sphere."""
        ls, _ = degree_arrays(self.L)
        if self.entries is None:
            d = self.defect if self.defect is not None else self.eigenvalues - np.arange(self.L + 1) / self.R
            return np.diag(d[ls].astype(complex))
        return self.entries - np.diag(ls / self.R).astype(complex)

    def apply(self, coeffs):
        c = np.asarray(coeffs)
        if c.shape[-1] != n_coeffs(self.L):
            raise ValueError(f"field degree {sphere.degree_of(c.shape[-1])} != DtN degree {self.L}")
        if self.entries is None:
            ls, _ = degree_arrays(self.L)
            return c * self.eigenvalues[ls]
        return c @ self.entries.T

    def norm(self) -> float:
        if self.entries is None:
            return float(np.max(np.abs(self.eigenvalues)))
        return float(np.linalg.norm(self.entries, 2))

    def truncate(self, L: int) -> "DtNMap":
        if L > self.L:
            raise ValueError("cannot raise the degree of a DtN map")
        if self.entries is None:
            d = None if self.defect is None else self.defect[: L + 1]
            return DtNMap(self.R, L, eigenvalues=self.eigenvalues[: L + 1], defect=d, info=dict(self.info))
        n = n_coeffs(L)
        return DtNMap(self.R, L, entries=self.entries[:n, :n], info=dict(self.info))


def apply_dtn(dtn: DtNMap, f: BoundaryField) -> BoundaryField:
    if f.L != dtn.L:
        raise ValueError(f"field degree {f.L} != DtN degree {dtn.L}")
    return BoundaryField(dtn.apply(f.coeffs))


def harmonic_dtn(L: int, R: float = 1.0) -> DtNMap:
    """DtN map of γ≡1 on the ball of radius R: eigenvalue l/R."""
    return DtNMap(R, L, eigenvalues=np.arange(L + 1) / R, defect=np.zeros(L + 1),
                  info={"method": "closed-form"})


# ---------------------------------------------------------------------------
# radial ODE route
# ---------------------------------------------------------------------------


def riccati_propagate(gamma: ConductivityField, ells, y0, r_from: float, r_to: float, rtol: float = 1e-12,
                      atol=None):
    """Integrate y = r u'/u - l for every degree in ``ells`` from r_from to r_to.

    y' = -((2l+1) y + y²)/r - (γ'/γ)(l + y), split at the breakpoints of γ.
    The default absolute tolerance scales with |y0| so that small defects keep
    their relative accuracy.
    """
    ells = np.asarray(ells, float)
    y = np.asarray(y0, float).copy()
    if atol is None:
        atol = np.maximum(1e-13 * np.abs(y), 1e-30)

    def logd(r):
        return float(gamma.dprofile(r)) / float(gamma.profile(r))

    def rhs(r, y):
        return -((2 * ells + 1) * y + y * y) / r - logd(r) * (ells + y)

    def jac(r, y):
        return sparse_diags(-((2 * ells + 1) + 2 * y) / r - logd(r))

    bps = sorted(b for b in gamma.breakpoints if r_from < b < r_to)
    lo = r_from
    nfev = 0
    for hi in bps + [r_to]:
        sol = solve_ivp(rhs, (lo, hi), y, method="Radau", jac=jac, rtol=rtol, atol=atol)
        if not sol.success:
            raise SolverError(f"radial Riccati solve failed: {sol.message}")
        y = sol.y[:, -1]
        nfev += sol.nfev
        lo = hi
    return y, nfev


def dtn_radial(gamma: ConductivityField, L: int, R: float | None = None, rtol: float = 1e-12) -> DtNMap:
    """Radial DtN eigenvalues from a Riccati equation per degree.

    With y = r u'/u - l the regular solution of (γ r² u')' = l(l+1) γ u obeys
    y' = -((2l+1) y + y²)/r - (γ'/γ)(l + y), y(0) = 0, and the eigenvalue is
    γ(R)(l + y(R))/R.  y ≡ 0 for γ≡1, so the defect from l/R is computed
    without cancellation.
    """
    if gamma.kind != "radial":
        raise TypeError("dtn_radial needs a radial conductivity")
    R = gamma.R if R is None else float(R)
    r0 = RADIAL_EPS * R
    rr = np.linspace(r0, R, 2001)
    if np.min(gamma.radial_values(rr)) <= 0:
        raise EllipticityError("non-positive conductivity profile")
    ells = np.arange(L + 1, dtype=float)
    y, nfev = riccati_propagate(gamma, ells, np.zeros(L + 1), r0, R, rtol=rtol, atol=1e-14)
    gR = float(gamma.profile(R))
    eig = gR * (ells + y) / R
    defect = ((gR - 1.0) * ells + gR * y) / R
    return DtNMap(R, L, eigenvalues=eig, defect=defect,
                  info={"method": "riccati", "rtol": rtol, "nfev": int(nfev)})


# ---------------------------------------------------------------------------
# Galerkin route
# ---------------------------------------------------------------------------


def composite_gauss(a: float, b: float, n: int, breaks: Sequence[float] = ()):
    """Gauss-Legendre nodes on [a, b] split at interior breakpoints."""
    edges = [a] + sorted({float(x) for x in breaks if a < x < b}) + [b]
    x, w = np.polynomial.legendre.leggauss(n)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * w)
    return np.concatenate(xs), np.concatenate(ws)


def _legendre_and_derivative(t, n):
    """P_k(t) and P_k'(t) for k < n, shapes (n, len(t))."""
    t = np.asarray(t, float)
    P = np.zeros((n, t.size))
    dP = np.zeros((n, t.size))
    if n > 0:
        P[0] = 1.0
    if n > 1:
        P[1] = t
        dP[1] = 1.0
    for k in range(2, n):
        P[k] = ((2 * k - 1) * t * P[k - 1] - (k - 1) * P[k - 2]) / k
        dP[k] = dP[k - 2] + (2 * k - 1) * P[k - 1]
    return P, dP


class BallBasis:
    """Radial functions for degree l on [0, R].

    k = 0 is the harmonic lift s^l (s = r/R); k >= 1 are
    s^l (1 - s²) P^{(2, l+1/2)}_{k-1}(2s² - 1), which vanish at r = R.  The
    Jacobi weights make the interior block well conditioned for every l.
    """

    def __init__(self, R: float, Nr: int):
        self.R = float(R)
        self.Nr = int(Nr)
        self.K = self.Nr + 1
        self.boundary = (0,)

    def eval(self, l: int, r):
        r = np.asarray(r, float)
        s = r / self.R
        t = 2 * s * s - 1
        a, b = 2.0, l + 0.5
        k = np.arange(self.Nr)[:, None]
        P = eval_jacobi(k, a, b, t[None, :])
        dP = np.where(k > 0, 0.5 * (k + a + b + 1) * eval_jacobi(np.maximum(k - 1, 0), a + 1, b + 1, t[None, :]), 0.0)
        sl = s**l
        dsl = l * s ** (l - 1) if l > 0 else np.zeros_like(s)
        phi = np.empty((self.K, r.size))
        dphi = np.empty((self.K, r.size))
        phi[0] = sl
        dphi[0] = dsl
        one = 1 - s * s
        phi[1:] = sl * one * P
        dphi[1:] = dsl * one * P - 2 * s * sl * P + sl * one * 4 * s * dP
        return phi, dphi / self.R


class ShellBasis:
    """Continuous piecewise-polynomial radial functions on [R1, R].

    Elements split at ``breaks``; per element the two end hats plus bubbles
    (1 - t²) P_j(t), j < p - 1.  Dof 0 is the inner end, dof 1 the outer end.
    """

    def __init__(self, R1: float, R: float, p: int = 12, breaks: Sequence[float] = ()):
        self.R1, self.R, self.p = float(R1), float(R), int(p)
        self.edges = [self.R1] + sorted({float(b) for b in breaks if R1 < b < R}) + [self.R]
        ne = len(self.edges) - 1
        # vertex dofs: 0 = inner, 1 = outer, then interior vertices, then bubbles
        vert = [0] + list(range(2, 2 + ne - 1)) + [1]
        self._vert = vert
        self._nb = self.p - 1
        self.K = 2 + (ne - 1) + ne * self._nb
        self.boundary = (0, 1)

    def eval(self, l, r):
        r = np.asarray(r, float)
        phi = np.zeros((self.K, r.size))
        dphi = np.zeros((self.K, r.size))
        ne = len(self.edges) - 1
        for e in range(ne):
            lo, hi = self.edges[e], self.edges[e + 1]
            last = e == ne - 1
            sel = (r >= lo) & ((r < hi) | (last & (r <= hi)))
            if not np.any(sel):
                continue
            h = hi - lo
            t = 2 * (r[sel] - lo) / h - 1
            phi[self._vert[e], sel] += (1 - t) / 2
            dphi[self._vert[e], sel] += -1 / h
            phi[self._vert[e + 1], sel] += (1 + t) / 2
            dphi[self._vert[e + 1], sel] += 1 / h
            P, dP = _legendre_and_derivative(t, self._nb)
            base = 2 + (ne - 1) + e * self._nb
            phi[base:base + self._nb, sel] = (1 - t * t) * P
            dphi[base:base + self._nb, sel] = (-2 * t * P + (1 - t * t) * dP) * 2 / h
        return phi, dphi


def _radial_nodes(gamma: ConductivityField, lo, hi, n, extra_breaks=()):
    return composite_gauss(lo, hi, n, tuple(gamma.breakpoints) + tuple(extra_breaks))


def _radial_stiffness(gamma, basis, l, rq, wq, gq):
    phi, dphi = basis.eval(l, rq)
    w1 = wq * gq * rq * rq
    w2 = wq * gq * l * (l + 1.0)
    return (dphi * w1) @ dphi.T + (phi * w2) @ phi.T


def _condition_check(K, what):
    d = 1.0 / np.sqrt(np.abs(np.diag(K)))
    c = np.linalg.cond(K * d[:, None] * d[None, :])
    if not np.isfinite(c) or c > 1e14:
        raise InvertibilityFailure(f"{what}: stiffness numerically singular (cond {c:.2e})", c)
    return c


@dataclass
class GalerkinSolution:
    """Coefficients of Galerkin solutions for boundary data Y_j.

    ``U[i, k, j]`` is the coefficient of basis function (i, k) in the
    solution with datum Y_j on the boundary dof ``which``.  For radial γ,
    ``U`` is replaced by per-degree vectors ``Ul[l]`` (shape (K, nb)).
    """

    basis: object
    L: int
    U: np.ndarray | None = None
    Ul: list | None = None


def _solve_partition(K, bidx, iidx):
    Kii = K[np.ix_(iidx, iidx)]
    Kib = K[np.ix_(iidx, bidx)]
    Kbb = K[np.ix_(bidx, bidx)]
    Kbi = K[np.ix_(bidx, iidx)]
    cond = _condition_check(Kii, "Galerkin")
    X = -sla.solve(Kii, Kib, assume_a="her" if np.allclose(Kii, Kii.conj().T) else "gen")
    S = Kbb + Kbi @ X
    return X, S, cond


def _angular_setup(L, La):
    g = sphere.sphere_grid(La, 1.0)
    xh = g.unit_nodes().reshape(-1, 3)
    Y, G = sphere.ylm_at(L, xh, gradient=True)
    w = g.weights().reshape(-1)
    return xh, Y, G, w


def _angular_mats(Y, G, wa):
    A = (Y.conj().T * wa) @ Y
    B = sum((G[:, :, c].conj().T * wa) @ G[:, :, c] for c in range(3))
    return A, B


def _assemble_general(gamma, basis, L, rq, wq, La):
    """Dense stiffness over (i, k) for a general conductivity."""
    n = n_coeffs(L)
    ls, _ = degree_arrays(L)
    K = basis.K
    phis = [basis.eval(l, rq) for l in range(L + 1)]
    xh, Y, G, wa = _angular_setup(L, La)
    out = np.zeros((n, K, n, K), dtype=complex)
    if gamma.terms:
        for rad, ang in gamma.terms:
            rv = np.asarray(rad(rq), float)
            A, B = _angular_mats(Y, G, wa * np.asarray(ang(xh), float))
            M1 = np.empty((L + 1, L + 1, K, K))
            M2 = np.empty((L + 1, L + 1, K, K))
            for a in range(L + 1):
                pa, da = phis[a]
                for b in range(L + 1):
                    pb, db = phis[b]
                    M1[a, b] = (da * (wq * rv * rq * rq)) @ db.T
                    M2[a, b] = (pa * (wq * rv)) @ pb.T
            out += A[:, None, :, None] * M1[ls][:, ls].transpose(0, 2, 1, 3)
            out += B[:, None, :, None] * M2[ls][:, ls].transpose(0, 2, 1, 3)
    else:
        phi_i = np.stack([phis[l][0] for l in ls])  # (n, K, nq)
        dphi_i = np.stack([phis[l][1] for l in ls])
        for q in range(rq.size):
            gv = gamma(rq[q] * xh)
            A, B = _angular_mats(Y, G, wa * gv)
            dq = dphi_i[:, :, q]
            pq = phi_i[:, :, q]
            out += wq[q] * rq[q] ** 2 * A[:, None, :, None] * dq[:, :, None, None] * dq[None, None, :, :]
            out += wq[q] * B[:, None, :, None] * pq[:, :, None, None] * pq[None, None, :, :]
    # out[i, k, j, l] = a(ψ_{j,l}, ψ_{i,k}) : test index first
    return out.reshape(n * K, n * K)


def _galerkin_ball(gamma, L, Nr, R, nq=None, La=None):
    basis = BallBasis(R, Nr)
    n = n_coeffs(L)
    K = basis.K
    if gamma.kind == "radial":
        eig = np.zeros(L + 1)
        Ul = []
        conds = []
        for l in range(L + 1):
            q = nq or (2 * Nr + l + 32)
            rq, wq = _radial_nodes(gamma, 0.0, R, q)
            Kl = _radial_stiffness(gamma, basis, l, rq, wq, gamma.radial_values(rq))
            X, S, c = _solve_partition(Kl, [0], list(range(1, K)))
            conds.append(c)
            eig[l] = S[0, 0].real / R**2
            Ul.append(np.vstack([np.ones((1, 1)), X]))
        sol = GalerkinSolution(basis, L, Ul=Ul)
        dtn = DtNMap(R, L, eigenvalues=eig, info={"method": "galerkin-radial", "Nr": Nr, "cond": float(max(conds))})
        return dtn, sol
    q = nq or (2 * Nr + L + 24)
    rq, wq = _radial_nodes(gamma, 0.0, R, q)
    La = La or (L + 8)
    Kf = _assemble_general(gamma, basis, L, rq, wq, La)
    bidx = [i * K for i in range(n)]
    iidx = [i * K + k for i in range(n) for k in range(1, K)]
    X, S, c = _solve_partition(Kf, bidx, iidx)
    U = np.zeros((n, K, n), dtype=complex)
    U[:, 0, :] = np.eye(n)
    U[:, 1:, :] = X.reshape(n, K - 1, n)
    dtn = DtNMap(R, L, entries=S / R**2, info={"method": "galerkin-general", "Nr": Nr, "cond": float(c)})
    return dtn, GalerkinSolution(basis, L, U=U)


def dtn_general(gamma: ConductivityField, L: int, Nr: int = 24, R: float | None = None, **kw) -> DtNMap:
    """DtN map on the ball from the weak co-normal derivative of Galerkin solutions."""
    R = gamma.R if R is None else float(R)
    return _galerkin_ball(gamma, L, Nr, R, **kw)[0]


# ---------------------------------------------------------------------------
# interior solutions
# ---------------------------------------------------------------------------


class InteriorSolution:
    """Evaluator of the Galerkin solution with a given boundary datum."""

    def __init__(self, sol: GalerkinSolution, f: BoundaryField, R: float):
        self.sol = sol
        self.R = float(R)
        self.L = sol.L
        c = f.truncate(sol.L).coeffs
        ls, _ = degree_arrays(sol.L)
        if sol.Ul is not None:
            # per-coefficient radial weights: W[i, k] = c_i * Ul[l_i][k]
            self.W = np.stack([sol.Ul[l][:, 0] for l in ls]) * c[:, None]
        else:
            self.W = np.einsum("ikj,j->ik", sol.U, c)
        self._ls = ls

    def radial_coeffs(self, r):
        """u_i(r) and u_i'(r) for every harmonic i at scalar radius r."""
        r = np.atleast_1d(np.asarray(r, float))
        out = np.zeros((r.size, self.W.shape[0]), dtype=complex)
        dout = np.zeros_like(out)
        for l in range(self.L + 1):
            sel = self._ls == l
            phi, dphi = self.sol.basis.eval(l, r)
            out[:, sel] = phi.T @ self.W[sel].T
            dout[:, sel] = dphi.T @ self.W[sel].T
        return out, dout

    def __call__(self, x):
        return self.evaluate(x)[0]

    def evaluate(self, x):
        """u and ∇u at points (..., 3)."""
        x = np.asarray(x, float)
        batch = x.shape[:-1]
        pts = x.reshape(-1, 3)
        r = np.linalg.norm(pts, axis=-1)
        Y, G = sphere.ylm_at(self.L, pts, gradient=True)
        u = np.zeros(len(pts), dtype=complex)
        du = np.zeros((len(pts), 3), dtype=complex)
        rs = np.where(r > 0, r, 1.0)
        for l in range(self.L + 1):
            sel = self._ls == l
            phi, dphi = self.sol.basis.eval(l, r)
            a = (self.W[sel] @ phi).T  # (P, nsel)
            da = (self.W[sel] @ dphi).T
            u += np.sum(a * Y[:, sel], axis=1)
            du += np.sum(da * Y[:, sel], axis=1)[:, None] * (pts / rs[:, None])
            du += np.einsum("ps,psc->pc", a, G[:, sel, :]) / rs[:, None]
        return u.reshape(batch), du.reshape(batch + (3,))

    def shell(self, r: float, grid):
        """u, ∂_r u and ∇u on the nodes of ``grid`` scaled to radius r."""
        a, da = self.radial_coeffs(r)
        u = grid.synthesize(a[0])
        ur = grid.synthesize(da[0])
        gs = grid.synthesize_gradient(a[0]) * grid.R / r
        nh = grid.unit_nodes()
        return u, ur, ur[..., None] * nh + gs


def interior_solution(gamma: ConductivityField, f: BoundaryField, Nr: int = 24, R: float | None = None, **kw):
    """Galerkin solution of div(γ∇u) = 0 in the ball with u = f on the boundary."""
    R = gamma.R if R is None else float(R)
    _, sol = _galerkin_ball(gamma, f.L, Nr, R, **kw)
    return InteriorSolution(sol, f, R)


# ---------------------------------------------------------------------------
# annulus blocks
# ---------------------------------------------------------------------------


@dataclass
class AnnulusDtN:
    """Blocks Λ^{ab} of the shell DtN, a,b ∈ {1 (r=R1), 2 (r=R)}.

    Row 1 is -γ ∂_r w on r = R1, row 2 is γ ∂_r w on r = R, with w solving
    div(γ∇w) = 0 in the shell and w = f1, f2 on the two spheres.
    """

    R1: float
    R: float
    L: int
    L11: np.ndarray
    L12: np.ndarray
    L21: np.ndarray
    L22: np.ndarray
    info: dict = field(default_factory=dict)

    def block(self) -> np.ndarray:
        return np.block([[self.L11, self.L12], [self.L21, self.L22]])

    def apply(self, f1, f2):
        return self.L11 @ f1 + self.L12 @ f2, self.L21 @ f1 + self.L22 @ f2

    def energy(self, f1, f2) -> complex:
        """Dirichlet energy ∫γ|∇w|² from the boundary pairing."""
        g1, g2 = self.apply(f1, f2)
        return complex(self.R1**2 * np.vdot(f1, g1) + self.R**2 * np.vdot(f2, g2))


def annulus_dtn(gamma: ConductivityField, L: int, Nr: int = 24, R1: float | None = None,
                R: float | None = None, La: int | None = None) -> AnnulusDtN:
    """Assemble the four shell blocks from Galerkin solves with one-sided data.

    ``Nr`` is the polynomial degree per radial element.
    """
    R1 = gamma.R_inner if R1 is None else float(R1)
    R = gamma.R if R is None else float(R)
    if R1 is None or not 0 < R1 < R:
        raise ValueError("annulus_dtn needs 0 < R1 < R")
    breaks = tuple(gamma.breakpoints) + ((gamma.R0,) if gamma.R0 and R1 < gamma.R0 < R else ())
    basis = ShellBasis(R1, R, p=Nr, breaks=breaks)
    n = n_coeffs(L)
    K = basis.K
    nq = Nr + 24
    rq, wq = composite_gauss(R1, R, nq, breaks)
    if gamma.kind == "radial":
        ls, _ = degree_arrays(L)
        s = np.zeros((L + 1, 2, 2))
        conds = []
        gq = gamma.radial_values(rq)
        for l in range(L + 1):
            Kl = _radial_stiffness(gamma, basis, l, rq, wq, gq)
            _, S, c = _solve_partition(Kl, [0, 1], list(range(2, K)))
            conds.append(c)
            s[l] = S.real
        blocks = [np.diag(s[ls, a, b].astype(complex)) for a in range(2) for b in range(2)]
        cond = max(conds)
    else:
        Kf = _assemble_general(gamma, basis, L, rq, wq, La or (L + 8))
        b1 = [i * K for i in range(n)]
        b2 = [i * K + 1 for i in range(n)]
        iidx = [i * K + k for i in range(n) for k in range(2, K)]
        _, S, cond = _solve_partition(Kf, b1 + b2, iidx)
        blocks = [S[:n, :n], S[:n, n:], S[n:, :n], S[n:, n:]]
    L11 = blocks[0] / R1**2
    L12 = blocks[1] / R1**2
    L21 = blocks[2] / R**2
    L22 = blocks[3] / R**2
    return AnnulusDtN(R1, R, L, L11, L12, L21, L22,
                      info={"method": f"galerkin-shell-{gamma.kind}", "p": Nr, "breaks": list(breaks), "cond": float(cond)})


# ---------------------------------------------------------------------------
# radial two-point oracle (tests and diagnostics)
# ---------------------------------------------------------------------------


def radial_two_point(gamma: ConductivityField, l: int, R1: float, R: float, rtol=1e-12):
    """2x2 energy matrix of degree l on the shell by shooting (ODE)."""
    def rhs(r, z):
        u, p = z[:2], z[2:]  # p = γ r² u'
        g = float(gamma.profile(r))
        return np.concatenate([p / (g * r * r), l * (l + 1.0) * g * u])

    bps = sorted(b for b in gamma.breakpoints if R1 < b < R)
    z = np.array([1.0, 0.0, 0.0, 1.0])  # columns: (u(R1)=1, p=0), (u=0, p=1)
    lo = R1
    for hi in bps + [R]:
        sol = solve_ivp(rhs, (lo, hi), z, method="DOP853", rtol=rtol, atol=1e-14)
        z = sol.y[:, -1]
        lo = hi
    # u(R) = a*f1' + b*p1 ; solve for p(R1) making u(R1)=f1, u(R)=f2
    uR = z[:2]
    pR = z[2:]
    S = np.zeros((2, 2))
    for col, (f1, f2) in enumerate([(1.0, 0.0), (0.0, 1.0)]):
        p1 = (f2 - f1 * uR[0]) / uR[1]
        flux_in = -p1  # -γ r² ∂_r w at R1
        flux_out = f1 * pR[0] + p1 * pR[1]
        S[0, col] = flux_in
        S[1, col] = flux_out
    return S
