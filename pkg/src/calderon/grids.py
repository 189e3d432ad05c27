"""Cartesian sample grids for potentials (x-space) and scattering data (k-space)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class PotentialGrid:
    """Samples on the uniform grid x_j = -A + j h, h = 2A/n, on each axis.

    ``values`` has shape (n, n, n), real or complex.
    """

    half_width: float
    n: int
    values: np.ndarray
    name: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.n,) * 3:
            raise ValueError(f"values shape {self.values.shape} != ({self.n},)*3")

    @classmethod
    def zeros(cls, half_width, n, dtype=float, name=""):
        return cls(float(half_width), int(n), np.zeros((n, n, n), dtype=dtype), name)

    @classmethod
    def from_function(cls, func, half_width, n, name=""):
        g = cls.zeros(half_width, n, name=name)
        g.values = np.asarray(func(g.points()))
        return g

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n)

    def points(self) -> np.ndarray:
        a = self.axis
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.points(), axis=-1)

    def l2(self, mask=None) -> float:
        v = np.abs(self.values) ** 2
        if mask is not None:
            v = np.where(mask, v, 0.0)
        return float(np.sqrt(self.h**3 * np.sum(v)))

    def with_values(self, values, name=None) -> "PotentialGrid":
        return PotentialGrid(self.half_width, self.n, values, self.name if name is None else name, dict(self.info))

    def central_slice(self, axis: int = 2) -> np.ndarray:
        return np.take(self.values, self.n // 2, axis=axis)


@dataclass
class ScatteringGrid:
    """q̂ samples on k_j = -K + j Δk, Δk = 2K/(n-1), j = 0..n-1 per axis (includes k = 0 for odd n)."""

    k_max: float
    n: int
    values: np.ndarray
    flags: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.n,) * 3:
            raise ValueError("values shape does not match the k-grid")
        if self.flags is None:
            self.flags = np.zeros(self.values.shape, dtype=np.int8)

    @classmethod
    def zeros(cls, k_max, n):
        return cls(float(k_max), int(n), np.zeros((n, n, n), dtype=complex))

    @property
    def dk(self) -> float:
        return 2.0 * self.k_max / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return -self.k_max + self.dk * np.arange(self.n)

    def points(self) -> np.ndarray:
        a = self.axis
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)

    def symmetrize(self) -> float:
        """Enforce q̂(-k) = conj(q̂(k)); return the relative deviation removed."""
        flipped = np.conj(self.values[::-1, ::-1, ::-1])
        scale = max(np.max(np.abs(self.values)), 1e-300)
        dev = float(np.max(np.abs(self.values - flipped)) / scale)
        self.values = 0.5 * (self.values + flipped)
        self.info["hermitian_deviation"] = dev
        return dev
