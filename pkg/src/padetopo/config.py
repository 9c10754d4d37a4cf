"""Scenario configuration: a versioned YAML tree with strict key checking."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "GeometrySpec",
    "IncidentSpec",
    "OptimiserSpec",
    "SweepCompareSpec",
    "DtValidateSpec",
    "ScenarioConfig",
    "default_config",
    "from_dict",
    "load",
    "dump",
]

SCHEMA_VERSION = 1
KINDS = ("sweep-compare", "dt-validate", "optimise-lens", "optimise-shield", "custom")
GEOMETRIES = ("four_scatterers", "dt_validation", "circles", "mesh_csv", "none")


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class GeometrySpec:
    kind: str = "four_scatterers"
    n_elem: int = 100
    distance: float = 2.0
    radius: float = 0.8
    lobes: int = 3
    depth: float = 0.2
    circles: list = field(default_factory=list)  # [[x, y, r, n_elem], ...]
    path: str | None = None


@dataclass
class IncidentSpec:
    direction: list = field(default_factory=lambda: [0.0, 1.0])
    amplitude: float = 1.0
    c: float = 1.0


@dataclass
class OptimiserSpec:
    domain: list = field(default_factory=lambda: [[-1.0, -1.0], [1.0, 1.0]])
    shape: list = field(default_factory=lambda: [32, 32])
    dt: float = 0.5
    max_steps: int = 40
    tol: float = 1e-4
    window: int = 5
    contour_grid: int = 97
    element_size: float | None = None
    maximise: bool = False
    max_points: int = 64
    max_div: int = 31


@dataclass
class SweepCompareSpec:
    omega0: float = 3.0
    grid: list = field(default_factory=lambda: [1.8, 4.2, 121])
    orders: list = field(default_factory=lambda: [2, 4, 6, 8, 10])
    threshold: float = 0.01


@dataclass
class DtValidateSpec:
    eps: float = 0.01
    eps2: float = 0.02
    n_hole: int = 100
    n_quad: int = 40
    curve_points: list = field(default_factory=lambda: [0, 15])
    n_curve: int = 41


@dataclass
class ScenarioConfig:
    schema_version: int = SCHEMA_VERSION
    scenario: str = "custom"
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    incident: IncidentSpec = field(default_factory=IncidentSpec)
    band: list = field(default_factory=lambda: [2.5, 3.5])
    degrees: list = field(default_factory=lambda: [4, 4])
    delta: float = 1e-2
    obs: list = field(default_factory=lambda: [[0.0, 0.0]])
    points: list = field(default_factory=list)
    optimiser: OptimiserSpec = field(default_factory=OptimiserSpec)
    sweep_compare: SweepCompareSpec = field(default_factory=SweepCompareSpec)
    dt_validate: DtValidateSpec = field(default_factory=DtValidateSpec)
    output: str = "out"
    seed: int = 0

    def validate(self) -> "ScenarioConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.scenario not in KINDS:
            raise ConfigError(f"scenario must be one of {KINDS}")
        if self.geometry.kind not in GEOMETRIES:
            raise ConfigError(f"geometry.kind must be one of {GEOMETRIES}")
        if self.geometry.kind == "mesh_csv" and not self.geometry.path:
            raise ConfigError("geometry.path is required for mesh_csv")
        if len(self.band) != 2 or not (0 < self.band[0] < self.band[1]):
            raise ConfigError("band must be [w1, w2] with 0 < w1 < w2")
        if len(self.degrees) != 2 or min(self.degrees) < 1:
            raise ConfigError("degrees must be [M, N] with M, N >= 1")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.incident.c <= 0:
            raise ConfigError("incident.c must be positive")
        if not self.obs or any(len(p) != 2 for p in self.obs):
            raise ConfigError("obs must be a nonempty list of [x, y] points")
        if any(len(p) != 2 for p in self.points):
            raise ConfigError("points must be [x, y] pairs")
        sc = self.sweep_compare
        if sc.omega0 <= 0 or len(sc.grid) != 3 or sc.grid[2] < 2:
            raise ConfigError("sweep_compare needs omega0 > 0 and grid [lo, hi, n]")
        dv = self.dt_validate
        if dv.eps <= 0 or dv.eps2 < 0 or dv.eps2 == dv.eps or dv.n_quad < 2:
            raise ConfigError("dt_validate needs eps > 0, eps2 >= 0 (0 disables extrapolation), eps2 != eps "
                              "and n_quad >= 2")
        op = self.optimiser
        if op.dt <= 0 or op.max_steps < 1 or len(op.shape) != 2:
            raise ConfigError("optimiser needs dt > 0, max_steps >= 1 and a 2-entry shape")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def from_dict(cls, data, path="config"):
    """Build dataclass ``cls`` from a mapping; unknown keys raise ConfigError."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = cls().__getattribute__(name) if cls is not ScenarioConfig else ScenarioConfig().__getattribute__(name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = from_dict(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = _coerce(default, value, f"{path}.{name}")
    return cls(**kwargs)


def _coerce(default, value, path):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path} must be a list")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string")
    return value


def default_config(kind: str = "custom") -> ScenarioConfig:
    """Editable defaults for each scenario kind.

    The lens and shield set-ups are desk-scale approximations; their design
    domains and observation points are choices of this package.
    """
    from .scenarios import dt_validation_points

    cfg = ScenarioConfig(scenario=kind)
    if kind == "sweep-compare":
        cfg.geometry = GeometrySpec("four_scatterers")
    elif kind == "dt-validate":
        cfg.geometry = GeometrySpec("dt_validation")
        cfg.points = dt_validation_points().tolist()
    elif kind == "optimise-shield":
        cfg.geometry = GeometrySpec("none")
        cfg.band = [4.5, 5.5]
        cfg.obs = [[-0.5, 2.0], [0.0, 2.0], [0.5, 2.0]]
        cfg.degrees = [4, 4]
        cfg.delta = 1e-4
        cfg.optimiser = OptimiserSpec(domain=[[-1.5, -0.5], [1.5, 0.5]], shape=[24, 8], dt=1.0, max_steps=11,
                                      tol=0.0, contour_grid=97, element_size=0.05)
    elif kind == "optimise-lens":
        cfg.geometry = GeometrySpec("none")
        cfg.band = [0.9, 1.1]
        cfg.obs = [[0.0, 3.0]]
        cfg.degrees = [3, 3]
        cfg.optimiser = OptimiserSpec(domain=[[-2.0, -0.5], [2.0, 0.5]], shape=[24, 8], max_steps=20,
                                      contour_grid=81, element_size=0.1, maximise=True)
    elif kind not in KINDS:
        raise ConfigError(f"scenario must be one of {KINDS}")
    return cfg


def load(path) -> ScenarioConfig:
    """Read a YAML scenario file; missing entries take the scenario defaults."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("top level of the config must be a mapping")
    if "schema_version" not in data:
        raise ConfigError("schema_version is required")
    base = default_config(data.get("scenario", "custom")).to_dict()
    merged = _merge(base, data)
    return from_dict(ScenarioConfig, merged).validate()


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            unknown = set(v) - set(out[k])
            if unknown:
                raise ConfigError(f"unknown key(s) in {k}: {sorted(unknown)}")
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def dump(cfg: ScenarioConfig, path) -> None:
    """Write the fully resolved config (defaults included)."""
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
