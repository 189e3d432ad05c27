"""Persistence: DtN maps, boundary fields and grid fields, plus tables and graymaps.

Binary files share one layout: ASCII header lines ``key value`` closed by
``end``, then little-endian float64 data, complex numbers as (re, im) pairs,
row-major.  Floats in headers are written in hexadecimal so every round trip
is bit-exact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .forward import DtNMap
from .grids import PotentialGrid, ScatteringGrid
from .sphere import BoundaryField, n_coeffs

VERSION = 1
_LE = "<f8"


def _write(path, magic: str, header: dict, arrays):
    lines = [magic, f"version {VERSION}"] + [f"{k} {v}" for k, v in header.items()] + ["end"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for a in arrays:
            a = np.ascontiguousarray(a)
            if np.iscomplexobj(a):
                a = a.view(np.float64) if a.dtype == np.complex128 else a.astype(np.complex128).view(np.float64)
            fh.write(np.asarray(a, dtype=_LE).tobytes(order="C"))


def _read(path, magic: str):
    with open(path, "rb") as fh:
        data = fh.read()
    header = {}
    pos = 0
    first = True
    while True:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode("ascii")
        pos = nl + 1
        if first:
            if line != magic:
                raise ValueError(f"{path}: not a {magic} file")
            first = False
            continue
        if line == "end":
            break
        key, _, val = line.partition(" ")
        header[key] = val
    if int(header.get("version", -1)) != VERSION:
        raise ValueError(f"{path}: unsupported version {header.get('version')}")
    return header, data[pos:]


def _take(buf, count, offset, complex_=True):
    n = 2 * count if complex_ else count
    a = np.frombuffer(buf, dtype=_LE, count=n, offset=offset).astype(np.float64)
    end = offset + 8 * n
    return (a.view(np.complex128) if complex_ else a), end


def _fhex(x) -> str:
    return float(x).hex()


# -- DtN maps -----------------------------------------------------------------


def write_dtn(path, dtn: DtNMap):
    hdr = {"R": _fhex(dtn.R), "L": dtn.L, "ordering": "lm-lexicographic"}
    if dtn.is_diagonal:
        hdr["kind"] = "diagonal"
        hdr["defect"] = int(dtn.defect is not None)
        arrays = [np.asarray(dtn.eigenvalues, float)]
        if dtn.defect is not None:
            arrays.append(np.asarray(dtn.defect, float))
        _write(path, "CALDERON-DTN", hdr, [a.astype(np.complex128) for a in arrays])
    else:
        hdr["kind"] = "dense"
        _write(path, "CALDERON-DTN", hdr, [np.asarray(dtn.entries, np.complex128)])


def read_dtn(path) -> DtNMap:
    hdr, buf = _read(path, "CALDERON-DTN")
    R = float.fromhex(hdr["R"])
    L = int(hdr["L"])
    if hdr["kind"] == "diagonal":
        eig, off = _take(buf, L + 1, 0)
        defect = None
        if int(hdr.get("defect", 0)):
            defect, _ = _take(buf, L + 1, off)
            defect = defect.real.copy()
        return DtNMap(R, L, eigenvalues=eig.real.copy(), defect=defect)
    n = n_coeffs(L)
    M, _ = _take(buf, n * n, 0)
    return DtNMap(R, L, entries=M.reshape(n, n).copy())


# -- boundary fields ------------------------------------------------------------


def write_field(path, f: BoundaryField, R: float = 1.0):
    _write(path, "CALDERON-FIELD", {"R": _fhex(R), "L": f.L}, [np.asarray(f.coeffs, np.complex128)])


def read_field(path):
    hdr, buf = _read(path, "CALDERON-FIELD")
    L = int(hdr["L"])
    c, _ = _take(buf, n_coeffs(L), 0)
    return BoundaryField(c.copy()), float.fromhex(hdr["R"])


# -- grid fields ----------------------------------------------------------------


def write_grid(path, g):
    if isinstance(g, ScatteringGrid):
        hdr = {"kind": "scattering", "extent": _fhex(g.k_max), "n": g.n, "dtype": "complex"}
        _write(path, "CALDERON-GRID", hdr, [g.values, g.flags.astype(np.float64)])
        return
    cplx = np.iscomplexobj(g.values)
    hdr = {"kind": "potential", "extent": _fhex(g.half_width), "n": g.n,
           "dtype": "complex" if cplx else "real", "name": g.name or "-"}
    _write(path, "CALDERON-GRID", hdr, [g.values if cplx else np.asarray(g.values, np.float64)])


def read_grid(path):
    hdr, buf = _read(path, "CALDERON-GRID")
    n = int(hdr["n"])
    ext = float.fromhex(hdr["extent"])
    if hdr["kind"] == "scattering":
        v, off = _take(buf, n**3, 0)
        fl, _ = _take(buf, n**3, off, complex_=False)
        return ScatteringGrid(ext, n, v.reshape((n,) * 3).copy(), fl.reshape((n,) * 3).astype(np.int8))
    cplx = hdr["dtype"] == "complex"
    v, _ = _take(buf, n**3, 0, complex_=cplx)
    name = hdr.get("name", "-")
    return PotentialGrid(ext, n, v.reshape((n,) * 3).copy(), "" if name == "-" else name)


# -- plain-text products ----------------------------------------------------------


def write_table(path, columns: dict):
    """Tab-delimited table, one column per key, floats in repr form."""
    keys = list(columns)
    cols = [np.atleast_1d(np.asarray(columns[k])) for k in keys]
    n = max(len(c) for c in cols)
    with open(path, "w") as fh:
        fh.write("\t".join(keys) + "\n")
        for i in range(n):
            fh.write("\t".join(repr(float(np.real(c[i]))) if i < len(c) else "" for c in cols) + "\n")


def read_table(path) -> dict:
    with open(path) as fh:
        keys = fh.readline().rstrip("\n").split("\t")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    return {k: np.array([float(r[i]) for r in rows if i < len(r) and r[i] != ""]) for i, k in enumerate(keys)}


def write_pgm(path, image: np.ndarray, lo: float | None = None, hi: float | None = None):
    """8-bit portable graymap of a 2-D array; the value range is kept in a comment."""
    a = np.asarray(image, float)
    lo = float(np.min(a)) if lo is None else lo
    hi = float(np.max(a)) if hi is None else hi
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    px = np.clip(np.round((a - lo) * scale), 0, 255).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n# range {lo!r} {hi!r}\n{w} {h}\n255\n".encode("ascii"))
        fh.write(px[::-1].tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = []
    pos = 0
    while len(parts) < 4:
        nl = data.index(b"\n", pos)
        line = data[pos:nl].decode("ascii")
        pos = nl + 1
        if line.startswith("#"):
            continue
        parts.extend(line.split())
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)[::-1]
