"""Run configuration: one dataclass per subcommand, JSON in and out."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

S1_MIN = 1.25
S2_WINDOW = (-0.5, -0.25)


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


@dataclass
class Common:
    grid: tuple[int, int, int] = (32, 32, 32)
    box: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 8 * math.pi)
    seed: int = 0
    output: str = "runs"


@dataclass
class NormsConfig(Common):
    band: int = 6
    count: int = 4
    s: tuple[float, ...] = (-0.375, 0.5, 1.5)
    s1: float = 1.5
    s2: float = -0.375
    p: float = 2.0
    r: float = 2.0


@dataclass
class LinearScanConfig(Common):
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    kmin: float = 0.5
    kmax: float = 64.0
    count: int = 40


@dataclass
class LinearSolveConfig(Common):
    grid: tuple[int, int, int] = (16, 16, 16)
    box: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 2 * math.pi)
    band: int = 4
    dt: float = 1e-3
    T: float = 1.0
    cadence: int = 100
    forcing: bool = True
    blocks: tuple[tuple[int, int], ...] = ((0, 0), (1, 0), (2, 1))
    tol: float = 1e-8


@dataclass
class PrepDataConfig(Common):
    box: tuple[float, float, float] = (2 * math.pi, 2 * math.pi, 8 * math.pi)
    K: float = math.pi
    eps: float = 0.05
    drift: tuple[float, float] = (0.1, 0.0)
    input: str = ""  # .fld holding b01, b02, b03; empty selects the builtin family
    probes: int = 24


@dataclass
class MhdRunConfig(Common):
    dt: float = 5e-3
    T: float = 0.5
    cadence: int = 50
    eps: float = 0.1
    band: int = 2
    data: str = "random"  # random | steady | lagrangian | path to .fld with b and u
    advection: bool = True
    coupling: bool = True
    freeze_b: bool = False
    div_tol: float = 1e-10


@dataclass
class LagrangianRunConfig(Common):
    dt: float = 2.5e-3
    T: float = 0.5
    cadence: int = 20
    eps: float = 0.1  # sup |grad Y0|
    velocity: float = 0.1  # L^2 norm of the initial velocity
    band: int = 2
    linear: bool = False
    energy: bool = True
    s1: float = 1.5
    s2: float = -0.375


@dataclass
class CrossCheckConfig(Common):
    dt: float = 5e-3
    T: float = 0.5
    cadence: int = 50
    eps: float = 0.1
    velocity: float = 0.1
    band: int = 2
    tol: float = 1e-3
    initial_tol: float = 1e-8


@dataclass
class IdentitySuiteConfig(Common):
    count: int = 20
    band: int = 2
    amplitude: float = 0.4
    tol: float = 1e-8


CONFIGS: dict[str, type] = {
    "norms": NormsConfig,
    "linear-scan": LinearScanConfig,
    "linear-solve": LinearSolveConfig,
    "prep-data": PrepDataConfig,
    "mhd-run": MhdRunConfig,
    "lagrangian-run": LagrangianRunConfig,
    "cross-check": CrossCheckConfig,
    "identity-suite": IdentitySuiteConfig,
}


def _coerce(name: str, default, value):
    """Check ``value`` against the type of the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{name}: must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        if default and not isinstance(default[0], tuple) and len(value) != len(default) and name not in ("s",):
            raise ConfigError(f"{name}: expected {len(default)} entries, got {len(value)}")
        proto = default[0] if default else 0.0
        return tuple(_coerce(f"{name}[{i}]", proto, v) for i, v in enumerate(value))
    raise ConfigError(f"{name}: unsupported field type")


def _validate(sub: str, cfg) -> None:
    if any(n < 4 or n % 2 for n in cfg.grid):
        raise ConfigError("grid: sample counts must be even integers >= 4")
    if any(L <= 0 for L in cfg.box):
        raise ConfigError("box: lengths must be positive")
    for name in ("dt", "T", "eps", "velocity", "K", "tol", "amplitude"):
        if hasattr(cfg, name) and getattr(cfg, name) <= 0 and not (name in ("eps", "velocity") and getattr(cfg, name) == 0):
            raise ConfigError(f"{name}: must be positive")
    for name in ("cadence", "count", "band", "probes"):
        if hasattr(cfg, name) and getattr(cfg, name) < 1:
            raise ConfigError(f"{name}: must be at least 1")
    if hasattr(cfg, "dt") and hasattr(cfg, "T"):
        n = round(cfg.T / cfg.dt)
        if not math.isclose(n * cfg.dt, cfg.T, rel_tol=1e-12):
            raise ConfigError("T: must be an integer multiple of dt")
    if sub == "linear-scan":
        if not math.isclose(math.fsum(d * d for d in cfg.direction), 1.0, abs_tol=1e-12):
            raise ConfigError("direction: must be a unit vector")
        if not 0 < cfg.kmin < cfg.kmax:
            raise ConfigError("kmin, kmax: need 0 < kmin < kmax")
    if sub == "mhd-run" and cfg.data not in ("random", "steady", "lagrangian") and not cfg.data.endswith(".fld"):
        raise ConfigError("data: expected random, steady, lagrangian or a .fld path")
    if sub == "lagrangian-run" and cfg.eps > 0.5:
        raise ConfigError("eps: sup |grad Y0| must not exceed 1/2")
    if getattr(cfg, "energy", False) or sub == "norms":
        check_energy_window(cfg.s1, cfg.s2)


def check_energy_window(s1: float, s2: float) -> None:
    """Regularity pair admitted by the energy functional: ``s1 > 5/4``, ``-1/2 < s2 < -1/4``."""
    if not s1 > S1_MIN:
        raise ConfigError(f"s1: must exceed 5/4 for the energy functional (got {s1})")
    if not S2_WINDOW[0] < s2 < S2_WINDOW[1]:
        raise ConfigError(f"s2: must lie in (-1/2, -1/4) for the energy functional (got {s2})")


def parse_config(subcommand: str, source: dict | str | Path | None = None, overrides: dict | None = None):
    """Validated config for ``subcommand`` from a dict or JSON file, with defaults filled."""
    if subcommand not in CONFIGS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cls = CONFIGS[subcommand]
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = dict(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
    data.update(overrides or {})
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys for {subcommand}: {', '.join(unknown)}")
    values = {k: _coerce(k, getattr(defaults, k), v) for k, v in data.items()}
    cfg = dataclasses.replace(defaults, **values)
    _validate(subcommand, cfg)
    return cfg


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def config_dict(cfg) -> dict:
    return {f.name: _plain(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def config_json(cfg) -> str:
    return json.dumps(config_dict(cfg), indent=2, sort_keys=True) + "\n"


def grid_of(cfg):
    from .spectral import Grid3

    return Grid3(*cfg.grid, *cfg.box)
