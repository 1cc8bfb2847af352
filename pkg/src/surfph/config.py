"""Configuration loading, validation, and hashing.

All tunable numbers in the package live in one INI-style file; the packaged
``data/default.cfg`` carries the reference values.  ``load_config`` parses a
file into a tree of frozen dataclasses, ``config_hash`` produces a stable
digest of every field so that dictionary bundles can refuse to load under a
configuration other than the one that built them.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields, is_dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError

SPECIES = ("co2", "h2co3", "hco3", "h", "ha", "a")


@dataclass(frozen=True)
class Chemistry:
    k1: float = 0.0302
    k_m1: float = 10.9631
    K2: float = 0.2407
    K_HA_in: float = 7.9433e-5
    K_HA_out: float = 3.1623e-5
    eps: float = 1.0e9
    eps_prime: float = 1.0e6


@dataclass(frozen=True)
class Geometry:
    radius_cell: float = 650.0
    radius_outer: float = 800.0
    tip_width: float = 10.0
    tip_height: float = 10.0
    ca_layer_depth: float = 5.0


@dataclass(frozen=True)
class Diffusion:
    co2: float = 1710.0
    h2co3: float = 1110.0
    hco3: float = 1110.0
    h: float = 8690.0
    ha: float = 1560.0
    a: float = 1560.0


@dataclass(frozen=True)
class Catalysis:
    ca_interior: float = 20.0
    ca_surface: float = 20.0


@dataclass(frozen=True)
class Initial:
    mode: str = "table"
    inside: tuple = (0.0, 0.0, 0.0, 6.310e-5, 12.09, 15.22)
    outside: tuple = (0.4720, 0.0013, 9.901, 3.162e-5, 2.500, 2.500)
    ph_inside: float = 7.2
    ph_outside: float = 7.5


@dataclass(frozen=True)
class MeshConfig:
    n_interior: int = 60
    n_exterior: int = 80
    grading: float = 1.1


@dataclass(frozen=True)
class SolverConfig:
    rtol: float = 1.0e-6
    atol: float = 1.0e-9
    max_steps: int = 100000
    t_end: float = 500.0
    n_samples: int = 1001
    trace_dt: float = 0.25
    trace_pad: float = 20.0
    trace_log_start: float = 1.0e-3
    trace_log_end: float = 5.0
    trace_log_points: int = 80


@dataclass(frozen=True)
class CompartmentConfig:
    quench_length: float = 0.01
    coupling: str = "one_way"


@dataclass(frozen=True)
class Mapping:
    lam_max: float = 34.2
    a_max: float = 20.0
    gamma_log10_lo: float = -3.0
    gamma_log10_hi: float = -4.5


@dataclass(frozen=True)
class Measure:
    ph_ref: float = 7.5
    step: float = 0.02
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class GridConfig:
    lo: tuple = (0.6, 0.6, 0.0)
    hi: tuple = (1.0, 1.0, 1.0)
    shape: tuple = (12, 12, 12)


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 5
    restarts: int = 32
    max_iter: int = 200
    seed: int = 20260823


@dataclass(frozen=True)
class CompressConfig:
    rank: int = 3
    sv_ratio: float = 1.0e-3
    max_sweeps: int = 200
    tol_rel: float = 1.0e-8
    restarts: int = 5
    seed: int = 20260823


@dataclass(frozen=True)
class DceConfig:
    n_samples: int = 500
    mode: str = "diagonal"
    seed: int = 20260823
    max_retries: int = 100
    jitter_rel: float = 1.0e-6
    jitter_abs: float = 1.0e-12


@dataclass(frozen=True)
class EstimateConfig:
    eta: float = 1.0e-6
    tol_theta: float = 1.0e-5
    max_iter: int = 300
    sigma_inner: float = 1.0e-5
    theta_base: float = 1.0e4


@dataclass(frozen=True)
class Config:
    chemistry: Chemistry = Chemistry()
    geometry: Geometry = Geometry()
    diffusion: Diffusion = Diffusion()
    catalysis: Catalysis = Catalysis()
    initial: Initial = Initial()
    mesh: MeshConfig = MeshConfig()
    solver: SolverConfig = SolverConfig()
    compartment: CompartmentConfig = CompartmentConfig()
    mapping: Mapping = Mapping()
    measure: Measure = Measure()
    grid: GridConfig = GridConfig()
    cluster: ClusterConfig = ClusterConfig()
    compress: CompressConfig = CompressConfig()
    dce: DceConfig = DceConfig()
    estimate: EstimateConfig = EstimateConfig()


_SECTIONS = {f.name: f.type for f in fields(Config)}


def _parse_value(raw: str, target_type):
    raw = raw.split("#", 1)[0].strip()
    if target_type is float:
        return float(raw)
    if target_type is int:
        v = float(raw)
        if v != int(v):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(v)
    if target_type is str:
        return raw
    if target_type is tuple:
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        vals = tuple(float(p) for p in parts)
        if all(v == int(v) for v in vals) and all("." not in p and "e" not in p.lower() for p in parts):
            return tuple(int(v) for v in vals)
        return vals
    raise ValueError(f"unsupported config field type {target_type}")


def default_config_path() -> Path:
    """Path of the packaged default configuration file."""
    return Path(resources.files("surfph").joinpath("data/default.cfg"))


def load_config(path=None) -> Config:
    """Parse an INI-style configuration file into a Config tree.

    With ``path=None`` the packaged defaults are loaded.  Unknown sections
    or keys, or values that fail to parse, raise ConfigurationError; a file
    that omits a key inherits the packaged default for it.
    """
    if path is None:
        path = default_config_path()
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str          # keys are case-sensitive (K2, K_HA_in)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc

    sections = {}
    for sec_name in parser.sections():
        if sec_name not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{sec_name}]")
        sec_cls = _SECTIONS[sec_name]
        if isinstance(sec_cls, str):  # from __future__ annotations
            sec_cls = globals()[sec_cls]
        known = {f.name: f for f in fields(sec_cls)}
        kwargs = {}
        for key, raw in parser.items(sec_name):
            if key not in known:
                raise ConfigurationError(f"unknown key {key!r} in section [{sec_name}]")
            try:
                kwargs[key] = _parse_value(raw, known[key].type if not isinstance(known[key].type, str)
                                           else {"float": float, "int": int, "str": str, "tuple": tuple}[known[key].type])
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {sec_name}.{key}: {exc}") from exc
        sections[sec_name] = sec_cls(**kwargs)
    cfg = Config(**sections)
    validate_config(cfg)
    return cfg


def validate_config(cfg: Config) -> None:
    """Raise ConfigurationError on physically or structurally invalid values."""
    c, g, m = cfg.chemistry, cfg.geometry, cfg.mesh
    if min(c.k1, c.k_m1, c.K2, c.K_HA_in, c.K_HA_out, c.eps, c.eps_prime) <= 0:
        raise ConfigurationError("all rate and equilibrium constants must be positive")
    if not (0 < g.radius_cell < g.radius_outer):
        raise ConfigurationError("need 0 < radius_cell < radius_outer")
    if g.tip_width <= 0 or g.tip_height <= 0 or g.ca_layer_depth < 0:
        raise ConfigurationError("tip dimensions must be positive, ca_layer_depth nonnegative")
    if any(v <= 0 for v in vars(cfg.diffusion).values()):
        raise ConfigurationError("diffusivities must be positive")
    if cfg.catalysis.ca_interior < 1 or cfg.catalysis.ca_surface < 1:
        raise ConfigurationError("catalysis factors are multipliers and must be >= 1")
    if cfg.initial.mode not in ("table", "equilibrium"):
        raise ConfigurationError(f"initial.mode must be 'table' or 'equilibrium', got {cfg.initial.mode!r}")
    if len(cfg.initial.inside) != 6 or len(cfg.initial.outside) != 6:
        raise ConfigurationError("initial concentration vectors must have 6 entries")
    if m.n_interior < 3 or m.n_exterior < 3:
        raise ConfigurationError("need at least 3 mesh nodes per domain")
    if m.grading < 1.0:
        raise ConfigurationError("mesh grading ratio must be >= 1")
    s = cfg.solver
    if s.rtol <= 0 or s.atol <= 0 or s.t_end <= 0 or s.n_samples < 2:
        raise ConfigurationError("invalid solver tolerances or time grid")
    if cfg.compartment.quench_length <= 0:
        raise ConfigurationError("quench_length must be positive")
    if cfg.compartment.coupling not in ("one_way", "two_way"):
        raise ConfigurationError("compartment.coupling must be 'one_way' or 'two_way'")
    if cfg.measure.step <= 0 or cfg.measure.noise_sigma < 0:
        raise ConfigurationError("invalid measurement settings")
    gr = cfg.grid
    if len(gr.lo) != 3 or len(gr.hi) != 3 or len(gr.shape) != 3:
        raise ConfigurationError("grid lo/hi/shape must have 3 entries")
    for lo, hi in zip(gr.lo, gr.hi):
        if not (0.0 <= lo < hi <= 1.0):
            raise ConfigurationError("grid box must satisfy 0 <= lo < hi <= 1 per axis")
    if any(n < 2 for n in gr.shape):
        raise ConfigurationError("grid must have at least 2 points per axis")
    if cfg.cluster.k < 1 or cfg.cluster.restarts < 1:
        raise ConfigurationError("cluster.k and cluster.restarts must be >= 1")
    if cfg.compress.rank < 0:
        raise ConfigurationError("compress.rank must be >= 0 (0 = automatic)")
    if cfg.dce.mode not in ("diagonal", "full"):
        raise ConfigurationError("dce.mode must be 'diagonal' or 'full'")
    if cfg.dce.n_samples < 2:
        raise ConfigurationError("dce.n_samples must be >= 2")
    e = cfg.estimate
    if e.eta <= 0 or e.tol_theta <= 0 or e.max_iter < 1 or e.sigma_inner <= 0 or e.theta_base <= 0:
        raise ConfigurationError("invalid estimate settings")


def canonical_lines(cfg: Config):
    """Deterministic one-line-per-field rendering used for hashing."""
    out = []
    for sec in fields(Config):
        sub = getattr(cfg, sec.name)
        if not is_dataclass(sub):
            continue
        for f in fields(sub):
            v = getattr(sub, f.name)
            if isinstance(v, tuple):
                txt = ",".join(repr(x) for x in v)
            else:
                txt = repr(v)
            out.append(f"{sec.name}.{f.name}={txt}")
    return out


def config_hash(cfg: Config) -> str:
    """SHA-256 digest over every configuration field, in canonical order."""
    blob = "\n".join(canonical_lines(cfg)).encode()
    return hashlib.sha256(blob).hexdigest()
