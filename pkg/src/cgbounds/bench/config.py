"""Experiment configuration: YAML text validated into frozen dataclasses.

Schema (all quantities in reduced, dimensionless units)::

    name: coupled-eps0.1            # optional scenario label
    seed: 0                         # root seed for every random stream
    physics:
      regime: overdamped            # overdamped | langevin
      beta: 1.0                     # required
      gamma: 1.0                    # required for langevin
      potential:
        name: coupled_quadratic     # catalog name or "expression"
        params: {c: 0.25, eps: 0.1}
    map:
      name: coordinate              # catalog map name
      params: {d: 2, indices: [0]}
    grid:
      n: 128                        # cells per axis of the full grid
      n_std: 8.0                    # box half-width in Gibbs standard deviations
      bounds: null                  # optional explicit [[lo, hi], [lo, hi]]
    initial:
      fast_shift: 1.0               # fast coordinate offset, in conditional std units
    time:
      t_end: 1.0
      n_out: 41                     # output times, equally spaced including 0
    theorems: [relent-od, wasser-od, entropy-rate]
    constants:
      alpha_mode: auto              # auto | gaussian-analytic | bakry-emery | empirical-variance
      kappa_mode: auto              # auto | analytic | estimated
      n_points: 400
      n_pairs: 1000
    simulate:
      n: 10000                      # particles for the simulate subcommand
      h: 0.005
    sweep:
      param: eps
      values: [0.2, 0.1, 0.05]
    output:
      dir: out
      tolerance: 1.0e-3
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..errors import ConfigError
from ..model.maps import MAP_CATALOG
from ..model.potentials import CATALOG

OVERDAMPED_THEOREMS = ("relent-od", "wasser-od", "entropy-rate")
LANGEVIN_THEOREMS = ("relent-lan", "wasser-lan")
ALPHA_MODES = ("auto", "gaussian-analytic", "bakry-emery", "empirical-variance")
KAPPA_MODES = ("auto", "analytic", "estimated")


@dataclass(frozen=True)
class Physics:
    regime: str
    beta: float
    gamma: Optional[float]
    potential: str
    potential_params: dict


@dataclass(frozen=True)
class MapSpec:
    name: str
    params: dict


@dataclass(frozen=True)
class GridSpec:
    n: int = 128
    n_std: float = 8.0
    bounds: Optional[tuple] = None


@dataclass(frozen=True)
class TimeSpec:
    t_end: float = 1.0
    n_out: int = 41

    @property
    def output_times(self) -> list:
        return [self.t_end * i / (self.n_out - 1) for i in range(self.n_out)]


@dataclass(frozen=True)
class ConstantsSpec:
    alpha_mode: str = "auto"
    kappa_mode: str = "auto"
    n_points: int = 400
    n_pairs: int = 1000


@dataclass(frozen=True)
class SimulateSpec:
    n: int = 10000
    h: float = 0.005


@dataclass(frozen=True)
class SweepSpec:
    param: str = "eps"
    values: tuple = ()


@dataclass(frozen=True)
class Config:
    physics: Physics
    map: MapSpec
    grid: GridSpec
    time: TimeSpec
    theorems: tuple
    seed: int = 0
    name: str = "scenario"
    fast_shift: float = 1.0
    constants: ConstantsSpec = field(default_factory=ConstantsSpec)
    simulate: SimulateSpec = field(default_factory=SimulateSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    out_dir: str = "out"
    tolerance: float = 1e-3
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("raw")
        return d

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form of the validated configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    def with_param(self, key: str, value) -> "Config":
        """Copy with one potential parameter replaced (used by ε-sweeps)."""
        raw = copy.deepcopy(self.raw)
        raw["physics"]["potential"].setdefault("params", {})[key] = value
        raw.setdefault("name", self.name)
        raw["name"] = f"{self.name}-{key}{value:g}"
        return parse_config(raw)

    def with_overrides(self, seed: Optional[int] = None, tolerance: Optional[float] = None,
                       out_dir: Optional[str] = None) -> "Config":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = seed
        if tolerance is not None or out_dir is not None:
            raw.setdefault("output", {})
        if tolerance is not None:
            raw["output"]["tolerance"] = tolerance
        if out_dir is not None:
            raw["output"]["dir"] = str(out_dir)
        return parse_config(raw)


# ----------------------------------------------------------------- validation

def _section(raw: dict, key: str, required: bool = True) -> dict:
    if key not in raw or raw[key] is None:
        if required:
            raise ConfigError(key, "required section is missing")
        return {}
    if not isinstance(raw[key], dict):
        raise ConfigError(key, "must be a mapping")
    return raw[key]


def _number(sec: dict, key: str, path: str, *, required: bool = True, default=None, positive: bool = False,
            integer: bool = False, minimum=None):
    full = f"{path}.{key}"
    if key not in sec or sec[key] is None:
        if required:
            raise ConfigError(full, "required field is missing")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(full, f"expected a number, got {v!r}")
    if integer and not float(v).is_integer():
        raise ConfigError(full, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(full, "must be finite")
    if positive and v <= 0:
        raise ConfigError(full, f"must be positive, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(full, f"must be at least {minimum}, got {v!r}")
    return int(v) if integer else float(v)


def _choice(sec: dict, key: str, path: str, options, default=None):
    v = sec.get(key, default)
    if v is None:
        raise ConfigError(f"{path}.{key}", "required field is missing")
    if v not in options:
        raise ConfigError(f"{path}.{key}", f"must be one of {list(options)}, got {v!r}")
    return v


def _params(sec: dict, path: str) -> dict:
    p = sec.get("params", {}) or {}
    if not isinstance(p, dict):
        raise ConfigError(f"{path}.params", "must be a mapping")
    return {k: (tuple(v) if isinstance(v, list) else v) for k, v in p.items()}


def parse_config(raw: Any) -> Config:
    """Validate a raw mapping; errors name the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    raw = copy.deepcopy(raw)
    phys = _section(raw, "physics")
    regime = _choice(phys, "regime", "physics", ("overdamped", "langevin"), "overdamped")
    beta = _number(phys, "beta", "physics", positive=True)
    gamma = _number(phys, "gamma", "physics", required=regime == "langevin", positive=True)
    pot = phys.get("potential")
    if not isinstance(pot, dict) or "name" not in pot:
        raise ConfigError("physics.potential.name", "required field is missing")
    if pot["name"] not in CATALOG and pot["name"] != "expression":
        raise ConfigError("physics.potential.name", f"unknown potential {pot['name']!r}; known: {sorted(CATALOG)}")
    physics = Physics(regime, beta, gamma, pot["name"], _params(pot, "physics.potential"))

    msec = _section(raw, "map")
    if msec.get("name") not in MAP_CATALOG:
        raise ConfigError("map.name", f"must be one of {sorted(MAP_CATALOG)}, got {msec.get('name')!r}")
    cmap = MapSpec(msec["name"], _params(msec, "map"))

    gsec = _section(raw, "grid", required=False)
    bounds = gsec.get("bounds")
    if bounds is not None:
        try:
            bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        except (TypeError, ValueError):
            raise ConfigError("grid.bounds", "expected a list of [lo, hi] pairs") from None
        if any(hi <= lo for lo, hi in bounds):
            raise ConfigError("grid.bounds", "each pair needs lo < hi")
    grid = GridSpec(_number(gsec, "n", "grid", required=False, default=128, integer=True, minimum=8),
                    _number(gsec, "n_std", "grid", required=False, default=8.0, positive=True), bounds)

    tsec = _section(raw, "time")
    time = TimeSpec(_number(tsec, "t_end", "time", positive=True),
                    _number(tsec, "n_out", "time", required=False, default=41, integer=True, minimum=2))

    allowed = OVERDAMPED_THEOREMS if regime == "overdamped" else LANGEVIN_THEOREMS
    theorems = raw.get("theorems", list(allowed[:2]))
    if not isinstance(theorems, list) or not theorems:
        raise ConfigError("theorems", "must be a non-empty list")
    for i, th in enumerate(theorems):
        if th not in allowed:
            raise ConfigError(f"theorems[{i}]", f"{th!r} is not available for the {regime} regime; use {list(allowed)}")

    csec = _section(raw, "constants", required=False)
    constants = ConstantsSpec(_choice(csec, "alpha_mode", "constants", ALPHA_MODES, "auto"),
                              _choice(csec, "kappa_mode", "constants", KAPPA_MODES, "auto"),
                              _number(csec, "n_points", "constants", required=False, default=400, integer=True,
                                      minimum=10),
                              _number(csec, "n_pairs", "constants", required=False, default=1000, integer=True,
                                      minimum=10))

    ssec = _section(raw, "simulate", required=False)
    simulate = SimulateSpec(_number(ssec, "n", "simulate", required=False, default=10000, integer=True, minimum=2),
                            _number(ssec, "h", "simulate", required=False, default=0.005, positive=True))

    wsec = _section(raw, "sweep", required=False)
    values = wsec.get("values", [])
    if not isinstance(values, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
        raise ConfigError("sweep.values", "must be a list of numbers")
    sweep = SweepSpec(str(wsec.get("param", "eps")), tuple(float(v) for v in values))

    isec = _section(raw, "initial", required=False)
    osec = _section(raw, "output", required=False)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed!r}")
    return Config(physics, cmap, grid, time, tuple(theorems), seed, str(raw.get("name", "scenario")),
                  _number(isec, "fast_shift", "initial", required=False, default=1.0),
                  constants, simulate, sweep, str(osec.get("dir", "out")),
                  _number(osec, "tolerance", "output", required=False, default=1e-3, minimum=0.0), raw)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"not valid YAML: {exc}") from None
    return parse_config(raw)
