"""Flat ``key = value`` run configuration with a typed schema."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.replace(",", " ").split())


@dataclass
class RunConfig:
    # truth / input
    mode: str = "synthetic"  # synthetic | dtn-file
    gamma: str = "bump"  # unit | bump | gaussian
    gamma_amplitude: float = 0.3
    gamma_support: float = 0.8
    gamma_power: int = 4
    gamma_center: float = 0.0
    gamma_width: float = 0.3
    dtn_path: str = ""
    # geometry
    R1: float = 1.0
    R0: float = 1.5
    R: float = 2.0
    # forward and transfer resolution
    L: int = 24
    Nr: int = 24
    shell_degree: int = 16
    # boundary recovery
    boundary: str = "recover"  # recover | exact
    probe_N: tuple = (16.0, 32.0, 64.0)
    probe_degree: int = 2
    # scattering
    lam: float = 4.0
    M_s: int = 2
    M_eta: int = 8
    k_max: float = 2.0
    n_k: int = 9
    max_condition: float = 1e10
    # reconstruction
    grid_n: int = 32
    w_L: int = 16
    w_Nr: int = 16
    w_tol: float = 1e-8
    # execution
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in ("synthetic", "dtn-file"):
            raise ConfigError(f"mode must be synthetic or dtn-file, got {self.mode!r}")
        if self.mode == "synthetic" and self.gamma not in ("unit", "bump", "gaussian"):
            raise ConfigError(f"unknown synthetic conductivity {self.gamma!r}")
        if self.mode == "dtn-file" and not self.dtn_path:
            raise ConfigError("dtn-file mode needs dtn_path")
        if not 0 < self.R1 < self.R0 < self.R:
            raise ConfigError("need 0 < R1 < R0 < R")
        if self.boundary not in ("recover", "exact"):
            raise ConfigError("boundary must be recover or exact")
        if self.n_k < 2 or self.L < 1 or self.grid_n < 4 or self.threads < 1:
            raise ConfigError("resolution parameters out of range")
        if self.lam < 3 ** 0.5 * self.k_max:
            raise ConfigError(f"lam = {self.lam} below the largest |k| = {3 ** 0.5 * self.k_max:.3g}")
        if not self.probe_N or min(self.probe_N) < 4:
            raise ConfigError("probe_N must list frequencies N >= 4")

    def items(self):
        """(key, text) pairs in schema order, the format of config files and manifests."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append((f.name, " ".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v) if isinstance(v, float) else str(v)))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def _convert(name: str, typ, text: str):
    try:
        if typ in (float, "float"):
            return float(text)
        if typ in (int, "int"):
            return int(text)
        if typ in (tuple, "tuple"):
            return _floats(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {text!r}") from exc


def parse_config(text: str, **overrides) -> RunConfig:
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"line {n}: expected key = value")
        if key not in kinds:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _convert(key, kinds[key], val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, **overrides)
