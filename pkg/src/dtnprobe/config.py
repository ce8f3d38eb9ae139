"""Run configuration: dataclasses, TOML I/O and field-level validation."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomlkit

from .domain import ConfigurationError
from .nonlinearity import BUILTINS

__all__ = [
    "ConfigError",
    "GeometryConfig",
    "ProbeConfig",
    "SweepConfig",
    "SolverConfig",
    "Thresholds",
    "IdentityConfig",
    "FrechetConfig",
    "RecoveryConfig",
    "StabilityConfig",
    "RunConfig",
    "load_config",
    "dump_config",
    "parse_config",
]


class ConfigError(ConfigurationError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class GeometryConfig:
    n: int = 3
    N: int = 33
    side: float = 1.0
    r0: float = 0.44
    r1: float = 0.48
    axis: int = 2          # probe face normal axis (0-based)
    face: int = 1          # +1 upper face, -1 lower face


@dataclass
class ProbeConfig:
    count: int = 4
    min_factor: float = 4.0
    deltas: list = field(default_factory=list)   # empty: geometric default sweep
    corrector: bool = True


@dataclass
class SweepConfig:
    tau: float = 1.0
    n_t: int = 9


@dataclass
class SolverConfig:
    method: str = "direct"
    newton_method: str = "auto"
    newton_tol: float = 1e-10
    op_norm_rtol: float = 1e-6


@dataclass
class Thresholds:
    identity_rel: float = 1e-9
    flux_rel: float = 1e-12
    frechet_slope_min: float = 0.9
    frechet_slope_max: float = 1.1
    probe_h_half_slope: float = -1.5
    probe_lp_slope: float = 0.5
    slope_band: float = 0.35
    corrector_ratio: float = 2.0
    lambda1_rel: float = 0.02
    constant_rel: float = 0.05
    bump_rel: float = 0.25
    linear_rel: float = 0.10
    cubic_even_rel: float = 0.15
    stability_spread: float = 10.0


@dataclass
class IdentityConfig:
    pairs: int = 5
    extensions: int = 10


@dataclass
class FrechetConfig:
    nonlinearities: list = field(default_factory=lambda: [
        {"name": "cubic", "c3": 1.0, "c1": 0.0},
        {"name": "sine", "mu": 1.0},
    ])
    eps: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    amplitude: float = 1.0


@dataclass
class RecoveryConfig:
    constant_pair: list = field(default_factory=lambda: [2.0, 1.0])
    bump_radius: float = 0.3
    linear_lam: float = 1.0
    cubic_c3: float = 1.0


@dataclass
class StabilityConfig:
    base: dict = field(default_factory=lambda: {"name": "cubic", "c3": 1.0, "c1": 1.0})
    eps: list = field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4, 0.8])


@dataclass
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    A: list = field(default_factory=lambda: np.eye(3).tolist())
    probes: ProbeConfig = field(default_factory=ProbeConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    identity: IdentityConfig = field(default_factory=IdentityConfig)
    frechet: FrechetConfig = field(default_factory=FrechetConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def to_dict(self):
        return dataclasses.asdict(self)

    def validate(self):
        """Check every value against the module preconditions; raises :class:`ConfigError`."""
        g = self.geometry
        if g.n < 3:
            raise ConfigError("geometry.n", "n >= 3 required")
        if g.N < 8:
            raise ConfigError("geometry.N", "N >= 8 required")
        if g.side <= 0:
            raise ConfigError("geometry.side", "must be positive")
        h = g.side / (g.N - 1)
        if not h < g.r0 < g.r1:
            raise ConfigError("geometry.r0", f"need h={h:.4g} < r0 < r1 (r0={g.r0}, r1={g.r1})")
        if not 0 <= g.axis < g.n:
            raise ConfigError("geometry.axis", f"must lie in [0, {g.n})")
        if g.face not in (-1, 1):
            raise ConfigError("geometry.face", "must be +1 or -1")
        A = np.asarray(self.A, dtype=float)
        if A.shape != (g.n, g.n):
            raise ConfigError("A", f"expected a {g.n}x{g.n} matrix, got shape {A.shape}")
        if not np.allclose(A, A.T):
            raise ConfigError("A", "must be symmetric")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ConfigError("A", "must be positive definite")
        p = self.probes
        if p.count < 3:
            raise ConfigError("probes.count", "at least 3 deltas are needed for slope fits")
        if p.min_factor <= 0:
            raise ConfigError("probes.min_factor", "must be positive")
        for d in p.deltas:
            if not p.min_factor * h * (1 - 1e-12) <= d <= g.r0 / 2 * (1 + 1e-12):
                raise ConfigError("probes.deltas", f"delta={d} outside [{p.min_factor:g}h, r0/2] = "
                                  f"[{p.min_factor * h:.4g}, {g.r0 / 2:.4g}]")
        if not p.deltas and max(p.min_factor * h, g.r0 / 8) > g.r0 / 2:
            raise ConfigError("probes.min_factor", f"default delta range is empty: {p.min_factor:g}h = "
                              f"{p.min_factor * h:.4g} > r0/2 = {g.r0 / 2:.4g}")
        if self.sweep.tau <= 0:
            raise ConfigError("sweep.tau", "must be positive")
        if self.sweep.n_t < 3 or self.sweep.n_t % 2 == 0:
            raise ConfigError("sweep.n_t", "must be odd and >= 3 so that t = 0 is on the grid")
        for name in ("method", "newton_method"):
            if getattr(self.solver, name) not in ("auto", "direct", "amg", "cg"):
                raise ConfigError(f"solver.{name}", "must be one of auto, direct, amg, cg")
        for i, spec in enumerate(self.frechet.nonlinearities):
            _check_nonlinearity(spec, f"frechet.nonlinearities[{i}]")
        if len(self.frechet.eps) < 4 or any(e <= 0 for e in self.frechet.eps):
            raise ConfigError("frechet.eps", "need at least 4 positive step sizes")
        _check_nonlinearity(self.stability.base, "stability.base")
        if len(self.stability.eps) < 5 or any(e < 0 for e in self.stability.eps):
            raise ConfigError("stability.eps", "need at least 5 non-negative magnitudes")
        if len(self.recovery.constant_pair) != 2:
            raise ConfigError("recovery.constant_pair", "expected two potentials")
        if self.identity.pairs < 1 or self.identity.extensions < 1:
            raise ConfigError("identity", "pairs and extensions must be positive")
        return self


def _check_nonlinearity(spec, where):
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError(where, "expected a table with a 'name' key")
    if spec["name"] not in BUILTINS:
        raise ConfigError(f"{where}.name", f"unknown nonlinearity {spec['name']!r}; choose from {sorted(BUILTINS)}")


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}
_CLASSES = {
    "geometry": GeometryConfig, "probes": ProbeConfig, "sweep": SweepConfig, "solver": SolverConfig,
    "thresholds": Thresholds, "identity": IdentityConfig, "frechet": FrechetConfig,
    "recovery": RecoveryConfig, "stability": StabilityConfig,
}


def _coerce(cls, section, data):
    if not isinstance(data, dict):
        raise ConfigError(section, "expected a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key}", "expected a boolean")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{section}.{key}", "expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{section}.{key}", "expected a number")
            value = float(value)
        elif isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{section}.{key}", "expected a string")
        elif isinstance(default, list) and not isinstance(value, list):
            raise ConfigError(f"{section}.{key}", "expected an array")
        elif isinstance(default, dict) and not isinstance(value, dict):
            raise ConfigError(f"{section}.{key}", "expected a table")
        out[key] = value
    return cls(**out)


def parse_config(data):
    """:class:`RunConfig` from a plain mapping (unknown keys are errors)."""
    kwargs = {}
    for key, value in data.items():
        if key in _CLASSES:
            kwargs[key] = _coerce(_CLASSES[key], key, value)
        elif key == "A":
            if not isinstance(value, list):
                raise ConfigError("A", "expected an array of rows")
            kwargs["A"] = [[float(x) for x in row] for row in value]
        elif key == "seed":
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ConfigError("seed", "expected a non-negative integer")
            kwargs["seed"] = value
        elif key == "output_dir":
            kwargs["output_dir"] = str(value)
        else:
            raise ConfigError(key, "unknown key")
    return RunConfig(**kwargs).validate()


def load_config(path):
    """Parse and validate a TOML file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    try:
        data = tomlkit.parse(text).unwrap()
    except tomlkit.exceptions.ParseError as exc:
        raise ConfigError("config", f"TOML syntax error: {exc}") from None
    return parse_config(data)


def dump_config(cfg, path=None):
    """TOML text of ``cfg`` (also written to ``path`` if given)."""
    doc = tomlkit.document()
    data = cfg.to_dict()
    for key in ("seed", "output_dir", "A"):
        doc[key] = data.pop(key)
    for key, value in data.items():
        doc[key] = value
    text = tomlkit.dumps(doc)
    if path is not None:
        Path(path).write_text(text)
    return text
