"""Spherical-harmonic calculus on a sphere of radius R.

Coefficients are stored for orthonormal complex harmonics on the *unit*
sphere, with the Condon-Shortley phase and flat index ``l*l + l + m``.
A field on the sphere of radius R is ``f(R x) = sum c_lm Y_lm(x)``, so
surface integrals over the radius-R sphere pick up a factor R**2.

The grid is Gauss-Legendre in cos(theta) times 2L+2 uniform azimuths, which
integrates every polynomial of degree <= 2L+1 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def n_coeffs(L: int) -> int:
    return (L + 1) ** 2


def lm_index(l, m):
    return l * l + l + m


@lru_cache(maxsize=64)
def degree_arrays(L: int):
    """Per-coefficient degree and order arrays (read-only)."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])
    ls.flags.writeable = False
    ms.flags.writeable = False
    return ls, ms


def degree_of(ncoef: int) -> int:
    L = int(round(np.sqrt(ncoef))) - 1
    if (L + 1) ** 2 != ncoef:
        raise ValueError(f"{ncoef} is not a square coefficient count")
    return L


def legendre_table(L: int, x: np.ndarray, M: int | None = None) -> list[np.ndarray]:
    """Normalised associated Legendre functions.

    Returns a list indexed by m = 0..M whose entry has shape (L+1-m, len(x))
    and holds Pbar_l^m(x) for l = m..L, normalised so that
    ``Pbar_l^m(cos t) exp(i m p)`` is orthonormal on the unit sphere.
    """
    M = L if M is None else M
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = []
    pmm = np.full_like(x, 1.0 / np.sqrt(4.0 * np.pi))
    for m in range(M + 1):
        if m > 0:
            pmm = -np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * s * pmm
        tab = np.empty((L + 1 - m, x.size))
        tab[0] = pmm
        if L > m:
            tab[1] = np.sqrt(2.0 * m + 3.0) * x * pmm
        for j in range(2, L + 1 - m):
            l = m + j
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            tab[j] = a * (x * tab[j - 1] - b * tab[j - 2])
        out.append(tab)
    return out


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    """Gauss-Legendre x uniform-azimuth grid on the sphere of radius R."""

    L: int
    R: float = 1.0
    cos_theta: np.ndarray = field(init=False, repr=False)
    gl_weights: np.ndarray = field(init=False, repr=False)
    phi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be non-negative")
        x, w = np.polynomial.legendre.leggauss(self.L + 1)
        object.__setattr__(self, "cos_theta", x[::-1].copy())
        object.__setattr__(self, "gl_weights", w[::-1].copy())
        nphi = 2 * self.L + 2
        object.__setattr__(self, "phi", 2.0 * np.pi * np.arange(nphi) / nphi)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.L + 1, 2 * self.L + 2)

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def _plm(self):
        cached = self.__dict__.get("_plm_cache")
        if cached is None:
            cached = legendre_table(self.L, self.cos_theta)
            self.__dict__["_plm_cache"] = cached
        return cached

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self.cos_theta)

    def unit_nodes(self) -> np.ndarray:
        """Unit normals at the nodes, shape (nθ, nφ, 3)."""
        st = np.sqrt(1.0 - self.cos_theta**2)[:, None]
        ct = self.cos_theta[:, None]
        return np.stack(
            np.broadcast_arrays(st * np.cos(self.phi), st * np.sin(self.phi), ct),
            axis=-1,
        )

    def nodes(self) -> np.ndarray:
        return self.R * self.unit_nodes()

    def weights(self) -> np.ndarray:
        """Surface-measure weights on the radius-R sphere, shape (nθ, nφ)."""
        nphi = self.shape[1]
        w = self.gl_weights[:, None] * (2.0 * np.pi / nphi) * self.R**2
        return np.broadcast_to(w, self.shape).copy()

    def integrate(self, values) -> complex:
        v = np.asarray(values)
        return np.sum(v * self.weights(), axis=(-2, -1))

    # -- transforms -------------------------------------------------------

    def analyze(self, values, L: int | None = None) -> np.ndarray:
        """Quadrature projection of node values onto degree <= L harmonics.

        Accepts a leading batch shape: values (..., nθ, nφ) -> (..., (L+1)**2).
        """
        L = self.L if L is None else L
        if L > self.L:
            raise ValueError(f"cannot analyze to degree {L} on a degree-{self.L} grid")
        v = np.asarray(values)
        if v.shape[-2:] != self.shape:
            raise ValueError(f"node array shape {v.shape[-2:]} != grid shape {self.shape}")
        nphi = self.shape[1]
        g = np.fft.fft(v, axis=-1) * (2.0 * np.pi / nphi)
        g = g * self.gl_weights[:, None]
        batch = v.shape[:-2]
        out = np.zeros(batch + (n_coeffs(L),), dtype=complex)
        plm = self._plm
        for m in range(L + 1):
            tab = plm[m][: L + 1 - m]
            ls = np.arange(m, L + 1)
            out[..., lm_index(ls, m)] = g[..., :, m] @ tab.T
            if m > 0:
                out[..., lm_index(ls, -m)] = (-1) ** m * (g[..., :, nphi - m] @ tab.T)
        return out

    def synthesize(self, coeffs) -> np.ndarray:
        """Node values of a coefficient array (..., (L'+1)**2) with L' <= L."""
        c = np.asarray(coeffs)
        Lf = degree_of(c.shape[-1])
        if Lf > self.L:
            raise ValueError(f"field degree {Lf} exceeds grid degree {self.L}")
        nth, nphi = self.shape
        batch = c.shape[:-1]
        F = np.zeros(batch + (nth, nphi), dtype=complex)
        plm = self._plm
        for m in range(Lf + 1):
            tab = plm[m][: Lf + 1 - m]
            ls = np.arange(m, Lf + 1)
            F[..., :, m] = c[..., lm_index(ls, m)] @ tab
            if m > 0:
                F[..., :, nphi - m] = (-1) ** m * (c[..., lm_index(ls, -m)] @ tab)
        return np.fft.ifft(F, axis=-1) * nphi

    def synthesize_gradient(self, coeffs) -> np.ndarray:
        """Surface gradient of a field at the nodes, shape (..., nθ, nφ, 3).

        Uses d/dθ Pbar_l^m = (m cotθ) Pbar_l^m + c_lm Pbar_l^{m+1} with
        c_lm = sqrt((l-m)(l+m+1)), valid for m >= 0.
        """
        c = np.asarray(coeffs)
        Lf = degree_of(c.shape[-1])
        if Lf > self.L:
            raise ValueError(f"field degree {Lf} exceeds grid degree {self.L}")
        nth, nphi = self.shape
        ct = self.cos_theta
        st = np.sqrt(1.0 - ct**2)
        batch = c.shape[:-1]
        Ft = np.zeros(batch + (nth, nphi), dtype=complex)
        Fp = np.zeros(batch + (nth, nphi), dtype=complex)
        plm = self._plm
        for m in range(Lf + 1):
            ls = np.arange(m, Lf + 1)
            tab = plm[m][: Lf + 1 - m]
            dtab = (m * ct / st) * tab
            if m < Lf:
                up = plm[m + 1][: Lf - m]  # l = m+1..Lf
                cl = np.sqrt((ls[1:] - m) * (ls[1:] + m + 1.0))
                dtab[1:] += cl[:, None] * up
            ptab = tab / st
            cp = c[..., lm_index(ls, m)]
            Ft[..., :, m] = cp @ dtab
            Fp[..., :, m] = 1j * m * (cp @ ptab)
            if m > 0:
                cn = c[..., lm_index(ls, -m)] * (-1) ** m
                # Y_{l,-m} = (-1)^m Pbar_l^m e^{-imφ}
                Ft[..., :, nphi - m] = cn @ dtab
                Fp[..., :, nphi - m] = -1j * m * (cn @ ptab)
        dth = np.fft.ifft(Ft, axis=-1) * nphi
        dph = np.fft.ifft(Fp, axis=-1) * nphi
        th = self.theta[:, None]
        ph = self.phi[None, :]
        e_th = np.stack(np.broadcast_arrays(np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th) + 0 * ph), -1)
        e_ph = np.stack(np.broadcast_arrays(-np.sin(ph) + 0 * th, np.cos(ph) + 0 * th, 0 * th * ph), -1)
        return (dth[..., None] * e_th + dph[..., None] * e_ph) / self.R


@lru_cache(maxsize=32)
def sphere_grid(L: int, R: float = 1.0) -> SphericalGrid:
    """Cached grid constructor."""
    return SphericalGrid(L, float(R))


def real_pairing_matrix(L: int):
    """Index map and sign for the bilinear pairing.

    For coefficient arrays a, b on the unit sphere,
    ``∫ a b dΩ = sum(a * sign * b[perm])``.
    """
    ls, ms = degree_arrays(L)
    perm = lm_index(ls, -ms)
    sign = np.where(ms % 2 == 0, 1.0, -1.0)
    return perm, sign


@dataclass
class BoundaryField:
    """A function on a sphere, held by its harmonic coefficients.

    ``coeffs`` has length (L+1)**2; node values are cached per grid.
    """

    coeffs: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        degree_of(self.coeffs.shape[-1])

    @property
    def L(self) -> int:
        return degree_of(self.coeffs.shape[-1])

    @classmethod
    def zeros(cls, L: int) -> "BoundaryField":
        return cls(np.zeros(n_coeffs(L), dtype=complex))

    @classmethod
    def unit(cls, L: int, l: int, m: int) -> "BoundaryField":
        c = np.zeros(n_coeffs(L), dtype=complex)
        c[lm_index(l, m)] = 1.0
        return cls(c)

    @classmethod
    def from_values(cls, values, grid: SphericalGrid, L: int | None = None) -> "BoundaryField":
        return analyze(values, grid, L)

    def values(self, grid: SphericalGrid) -> np.ndarray:
        key = id(grid)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not grid:
            hit = (grid, grid.synthesize(self.coeffs))
            self._cache[key] = hit
        return hit[1]

    def truncate(self, L: int) -> "BoundaryField":
        if L >= self.L:
            c = np.zeros(n_coeffs(L), dtype=complex)
            c[: self.coeffs.size] = self.coeffs
            return BoundaryField(c)
        return BoundaryField(self.coeffs[: n_coeffs(L)].copy())

    def conj(self) -> "BoundaryField":
        """Coefficients of the pointwise complex conjugate."""
        perm, sign = real_pairing_matrix(self.L)
        return BoundaryField(sign * np.conj(self.coeffs[perm]))

    def is_real(self, tol: float = 1e-10) -> bool:
        scale = max(np.max(np.abs(self.coeffs), initial=0.0), 1e-300)
        return bool(np.max(np.abs(self.coeffs - self.conj().coeffs), initial=0.0) <= tol * scale)

    def __add__(self, other):
        return BoundaryField(self.coeffs + _coeffs(other))

    def __sub__(self, other):
        return BoundaryField(self.coeffs - _coeffs(other))

    def __mul__(self, scalar):
        return BoundaryField(self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return BoundaryField(-self.coeffs)


def _coeffs(f):
    return f.coeffs if isinstance(f, BoundaryField) else np.asarray(f)


def analyze(values, grid: SphericalGrid, L: int | None = None) -> BoundaryField:
    """Project node samples on ``grid`` onto harmonics of degree <= L."""
    v = np.asarray(values)
    if v.shape != grid.shape:
        raise ValueError(f"expected {grid.size} node values in shape {grid.shape}, got {v.shape}")
    return BoundaryField(grid.analyze(v, L))


def synthesize(f: BoundaryField, grid: SphericalGrid) -> np.ndarray:
    return grid.synthesize(f.coeffs)


def sobolev_weights(L: int, s: float) -> np.ndarray:
    ls, _ = degree_arrays(L)
    return (1.0 + ls * (ls + 1.0)) ** (s / 2.0)


def hs_norm(f: BoundaryField, s: float) -> float:
    """Discrete H^s norm with per-degree weight (1 + l(l+1))^(s/2)."""
    w = sobolev_weights(f.L, s)
    return float(np.sqrt(np.sum((w * np.abs(f.coeffs)) ** 2)))


def tangential_gradient(f: BoundaryField, grid: SphericalGrid) -> np.ndarray:
    """Surface gradient of ``f`` at the grid nodes, shape (nθ, nφ, 3)."""
    return grid.synthesize_gradient(f.coeffs)


def product_grid_degree(L: int) -> int:
    # degree-L x degree-L product projected on degree L needs exactness to 3L
    return (3 * L + 1) // 2


def project_multiply(a: BoundaryField, b: BoundaryField, grid: SphericalGrid | None = None) -> BoundaryField:
    """Degree-L projection of the pointwise product a*b, L = max(a.L, b.L)."""
    L = max(a.L, b.L)
    R = grid.R if grid is not None else 1.0
    fine = sphere_grid(max(product_grid_degree(L), grid.L if grid is not None else 0), R)
    va = fine.synthesize(a.coeffs)
    vb = fine.synthesize(b.coeffs)
    return BoundaryField(fine.analyze(va * vb, L))


def pair(a: BoundaryField, b: BoundaryField, R: float = 1.0) -> complex:
    """Bilinear surface pairing ∫ a b dS on the radius-R sphere (no conjugation)."""
    L = min(a.L, b.L)
    perm, sign = real_pairing_matrix(L)
    ca = a.coeffs[: n_coeffs(L)]
    cb = b.coeffs[: n_coeffs(L)]
    return complex(R**2 * np.sum(ca * sign * cb[perm]))


def inner(a: BoundaryField, b: BoundaryField, R: float = 1.0) -> complex:
    """Sesquilinear ∫ a conj(b) dS."""
    L = min(a.L, b.L)
    return complex(R**2 * np.vdot(b.coeffs[: n_coeffs(L)], a.coeffs[: n_coeffs(L)]))


def ylm_at(L: int, points, gradient: bool = False):
    """Harmonics Y_lm at arbitrary directions.

    ``points`` (..., 3) need not be unit length; only the direction is used.
    Returns Y with shape (..., (L+1)**2) and, if ``gradient``, the unit-sphere
    surface gradient with shape (..., (L+1)**2, 3).
    """
    p = np.asarray(points, dtype=float)
    batch = p.shape[:-1]
    p = p.reshape(-1, 3)
    r = np.linalg.norm(p, axis=-1)
    ct = np.clip(p[:, 2] / r, -1.0, 1.0)
    st = np.sqrt(1.0 - ct * ct)
    ph = np.arctan2(p[:, 1], p[:, 0])
    plm = legendre_table(L, ct)
    n = n_coeffs(L)
    Y = np.zeros((p.shape[0], n), dtype=complex)
    if gradient:
        dT = np.zeros((p.shape[0], n), dtype=complex)
        dP = np.zeros((p.shape[0], n), dtype=complex)
        sts = np.where(st > 1e-300, st, 1e-300)
    for m in range(L + 1):
        ls = np.arange(m, L + 1)
        tab = plm[m]
        e = np.exp(1j * m * ph)
        Y[:, lm_index(ls, m)] = (tab * e).T
        if m > 0:
            Y[:, lm_index(ls, -m)] = ((-1) ** m * tab * np.conj(e)).T
        if gradient:
            dtab = (m * ct / sts) * tab
            if m < L:
                cl = np.sqrt((ls[1:] - m) * (ls[1:] + m + 1.0))
                dtab[1:] += cl[:, None] * plm[m + 1]
            ptab = tab / sts
            dT[:, lm_index(ls, m)] = (dtab * e).T
            dP[:, lm_index(ls, m)] = (1j * m * ptab * e).T
            if m > 0:
                dT[:, lm_index(ls, -m)] = ((-1) ** m * dtab * np.conj(e)).T
                dP[:, lm_index(ls, -m)] = ((-1) ** m * (-1j * m) * ptab * np.conj(e)).T
    Y = Y.reshape(batch + (n,))
    if not gradient:
        return Y
    e_th = np.stack([ct * np.cos(ph), ct * np.sin(ph), -st], -1)
    e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], -1)
    G = dT[..., None] * e_th[:, None, :] + dP[..., None] * e_ph[:, None, :]
    return Y, G.reshape(batch + (n, 3))
