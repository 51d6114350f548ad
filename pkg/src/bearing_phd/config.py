"""Run configuration: JSON with unit-suffixed fields, converted to SI at load.

Scalar quantities carry their unit in the key name. Angles accept ``_rad``,
``_deg`` or ``_pi`` (multiples of pi radians); lengths accept ``_m``, ``_cm``
or ``_in``. Grids are ``[min, max, step]`` triples in the key's unit.
Serialization always writes ``_rad`` and ``_m`` so that load, dump, load
round-trips to the same configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .calibration import (
    D_T_GRID,
    MU_GRID,
    P_FN_GRID,
    P_U_GRID,
    SIGMA_GRID,
    THETA_C_GRID,
    GridSpec,
)
from .models import (
    ClutterParams,
    DetectionParams,
    FieldOfView,
    MeasurementParams,
    Pose2D,
    SensorModel,
    TargetState,
)
from .phd import FilterConfig

ANGLE_UNITS = {"rad": 1.0, "deg": math.pi / 180.0, "pi": math.pi}
LENGTH_UNITS = {"m": 1.0, "cm": 0.01, "in": 0.0254}
DEFAULT_THETA_SEP = math.radians(0.25)


class ConfigError(ValueError):
    """Invalid or incomplete configuration; the message names the offending field."""


def parse_quantity(text: str, kind: str = "angle") -> float:
    """Parse strings such as ``"2.25deg"``, ``"0.2pi"`` or ``"1.28in"`` to SI."""
    units = ANGLE_UNITS if kind == "angle" else LENGTH_UNITS
    s = text.strip()
    for unit in sorted(units, key=len, reverse=True):
        if s.endswith(unit):
            try:
                return float(s[: -len(unit)]) * units[unit]
            except ValueError:
                break
    raise ConfigError(f"cannot parse {kind} {text!r}; expected a number followed by one of {sorted(units)}")


def _quantity(section: dict, name: str, kind: str, where: str, default: float | None = None, grid: bool = False):
    units = ANGLE_UNITS if kind == "angle" else LENGTH_UNITS
    found = [(u, section[f"{name}_{u}"]) for u in units if f"{name}_{u}" in section]
    if len(found) > 1:
        raise ConfigError(f"{where}.{name}: give exactly one of {[f'{name}_{u}' for u, _ in found]}")
    if not found:
        if default is None:
            raise ConfigError(f"{where}.{name}_<unit> is required (units: {', '.join(units)})")
        return default
    unit, value = found[0]
    key = f"{where}.{name}_{unit}"
    try:
        if grid:
            if len(value) != 3:
                raise TypeError
            return GridSpec(*(float(v) * units[unit] for v in value))
        return float(value) * units[unit]
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {'[min, max, step]' if grid else 'a number'}, got {value!r}") from None


def _number(section: dict, name: str, where: str, default: Any = None, cast=float):
    if name not in section:
        if default is None:
            raise ConfigError(f"{where}.{name} is required")
        return default
    try:
        return cast(section[name])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{name}: expected {cast.__name__}, got {section[name]!r}") from None


def _grid(section: dict, name: str, where: str, default: GridSpec) -> GridSpec:
    if name not in section:
        return default
    try:
        return GridSpec(*(float(v) for v in section[name]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{name}: {exc}") from None


@dataclass
class WorldSpec:
    map_path: str | None = None
    targets: list[TargetState] = field(default_factory=list)
    robots: list[Pose2D] = field(default_factory=list)
    n_scans: int = 0
    length_scales: list[float] = field(default_factory=lambda: [1.0, 4.0, 20.0])
    horizon: int = 3
    actions_per_scale: int = 10
    max_turn: float = math.pi / 4


@dataclass
class CalibrationSpec:
    sigma_grid: GridSpec = SIGMA_GRID
    p_fn_grid: GridSpec = P_FN_GRID
    d_t_grid: GridSpec = D_T_GRID
    theta_c_grid: GridSpec = THETA_C_GRID
    p_u_grid: GridSpec = P_U_GRID
    mu_grid: GridSpec = MU_GRID
    range_bin: float = 0.2
    clutter_bin: float = math.pi / 20
    sigma_method: str = "consistency"
    knee_curve: str = "sse"
    weighted_detection_fit: bool = False


@dataclass
class EvaluateSpec:
    ospa_cutoff: float = 1.0
    ospa_order: float = 1.0
    smoothing_window: int = 50


@dataclass
class RunConfig:
    sensor: SensorModel
    world: WorldSpec = field(default_factory=WorldSpec)
    calibration: CalibrationSpec = field(default_factory=CalibrationSpec)
    filter: FilterConfig = field(default_factory=FilterConfig)
    evaluate: EvaluateSpec = field(default_factory=EvaluateSpec)
    seed: int = 0
    base_dir: str = "."

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        s = self.sensor
        w = self.world
        c = self.calibration
        return {
            "seed": self.seed,
            "sensor": {
                "p_fn": s.detection.p_fn,
                "d_t_m": s.detection.d_t,
                "theta_sep_rad": s.detection.theta_sep,
                "sigma_rad": s.measurement.sigma,
                "theta_c_rad": s.clutter.theta_c,
                "p_u": s.clutter.p_u,
                "mu": s.clutter.mu,
                "b_min_rad": s.fov.b_min,
                "b_max_rad": s.fov.b_max,
                "r_max_m": s.fov.r_max,
            },
            "world": {
                "map": w.map_path,
                "targets_m": [[t.x, t.y] for t in w.targets],
                "robots_m_rad": [p.as_list() for p in w.robots],
                "n_scans": w.n_scans,
                "length_scales_m": list(w.length_scales),
                "horizon": w.horizon,
                "actions_per_scale": w.actions_per_scale,
                "max_turn_rad": w.max_turn,
            },
            "calibration": {
                "sigma_grid_rad": _grid_list(c.sigma_grid),
                "p_fn_grid": _grid_list(c.p_fn_grid),
                "d_t_grid_m": _grid_list(c.d_t_grid),
                "theta_c_grid_rad": _grid_list(c.theta_c_grid),
                "p_u_grid": _grid_list(c.p_u_grid),
                "mu_grid": _grid_list(c.mu_grid),
                "range_bin_m": c.range_bin,
                "clutter_bin_rad": c.clutter_bin,
                "sigma_method": c.sigma_method,
                "knee_curve": c.knee_curve,
                "weighted_detection_fit": c.weighted_detection_fit,
            },
            "filter": {
                "survival_prob": self.filter.survival_prob,
                "birth_rate": self.filter.birth_rate,
                "birth_particles": self.filter.birth_particles,
                "particles_per_unit_mass": self.filter.particles_per_unit_mass,
                "jitter_m": self.filter.jitter,
                "min_particles": self.filter.min_particles,
            },
            "evaluate": {
                "ospa_cutoff_m": self.evaluate.ospa_cutoff,
                "ospa_order": self.evaluate.ospa_order,
                "smoothing_window": self.evaluate.smoothing_window,
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _grid_list(g: GridSpec) -> list[float]:
    return [g.min, g.max, g.step]


def _section(d: dict, name: str) -> dict:
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    return sec


def config_from_dict(d: dict, base_dir: str = ".", check_files: bool = True) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    sensor = _section(d, "sensor")
    try:
        fov = FieldOfView(
            _quantity(sensor, "b_min", "angle", "sensor", -0.75 * math.pi),
            _quantity(sensor, "b_max", "angle", "sensor", 0.75 * math.pi),
            _quantity(sensor, "r_max", "length", "sensor", 5.0),
        )
    except ValueError as exc:
        raise ConfigError(f"sensor field of view (b_min/b_max/r_max): {exc}") from None
    try:
        det = DetectionParams(
            _number(sensor, "p_fn", "sensor"),
            _quantity(sensor, "d_t", "length", "sensor"),
            _quantity(sensor, "theta_sep", "angle", "sensor", DEFAULT_THETA_SEP),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"sensor detection (p_fn/d_t/theta_sep): {exc}") from None
    try:
        meas = MeasurementParams(_quantity(sensor, "sigma", "angle", "sensor"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"sensor.sigma: {exc}") from None
    try:
        clut = ClutterParams(
            _quantity(sensor, "theta_c", "angle", "sensor"),
            _number(sensor, "p_u", "sensor"),
            _number(sensor, "mu", "sensor"),
        )
        model = SensorModel(det, meas, clut, fov)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"sensor clutter (theta_c/p_u/mu): {exc}") from None

    w = _section(d, "world")
    try:
        targets = [TargetState(float(x), float(y)) for x, y in w.get("targets_m", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"world.targets_m: expected [[x, y], ...] ({exc})") from None
    try:
        robots = [Pose2D(float(x), float(y), float(h)) for x, y, h in w.get("robots_m_rad", [])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"world.robots_m_rad: expected [[x, y, heading], ...] ({exc})") from None
    map_path = w.get("map")
    if map_path is not None and check_files:
        p = Path(map_path) if Path(map_path).is_absolute() else Path(base_dir) / map_path
        if not p.is_file():
            raise ConfigError(f"world.map: file not found: {p}")
    scales = w.get("length_scales_m", [1.0, 4.0, 20.0])
    try:
        scales = [float(s) for s in scales]
    except (TypeError, ValueError):
        raise ConfigError("world.length_scales_m: expected a list of numbers") from None
    world = WorldSpec(
        map_path=map_path,
        targets=targets,
        robots=robots,
        n_scans=_number(w, "n_scans", "world", 0, int),
        length_scales=scales,
        horizon=_number(w, "horizon", "world", 3, int),
        actions_per_scale=_number(w, "actions_per_scale", "world", 10, int),
        max_turn=_quantity(w, "max_turn", "angle", "world", math.pi / 4),
    )
    if world.n_scans < 0:
        raise ConfigError("world.n_scans must be non-negative")
    if world.horizon < 1:
        raise ConfigError("world.horizon must be at least 1")

    c = _section(d, "calibration")
    cal = CalibrationSpec(
        sigma_grid=_quantity(c, "sigma_grid", "angle", "calibration", SIGMA_GRID, grid=True),
        p_fn_grid=_grid(c, "p_fn_grid", "calibration", P_FN_GRID),
        d_t_grid=_quantity(c, "d_t_grid", "length", "calibration", D_T_GRID, grid=True),
        theta_c_grid=_quantity(c, "theta_c_grid", "angle", "calibration", THETA_C_GRID, grid=True),
        p_u_grid=_grid(c, "p_u_grid", "calibration", P_U_GRID),
        mu_grid=_grid(c, "mu_grid", "calibration", MU_GRID),
        range_bin=_quantity(c, "range_bin", "length", "calibration", 0.2),
        clutter_bin=_quantity(c, "clutter_bin", "angle", "calibration", math.pi / 20),
        sigma_method=str(c.get("sigma_method", "consistency")),
        knee_curve=str(c.get("knee_curve", "sse")),
        weighted_detection_fit=bool(c.get("weighted_detection_fit", False)),
    )
    if cal.sigma_method not in ("consistency", "knee"):
        raise ConfigError("calibration.sigma_method must be 'consistency' or 'knee'")
    if cal.knee_curve not in ("sse", "inliers"):
        raise ConfigError("calibration.knee_curve must be 'sse' or 'inliers'")

    f = _section(d, "filter")
    flt = FilterConfig(
        survival_prob=_number(f, "survival_prob", "filter", 1.0),
        birth_rate=_number(f, "birth_rate", "filter", 0.1),
        birth_particles=_number(f, "birth_particles", "filter", 200, int),
        particles_per_unit_mass=_number(f, "particles_per_unit_mass", "filter", 1000.0),
        jitter=_quantity(f, "jitter", "length", "filter", 0.003),
        min_particles=_number(f, "min_particles", "filter", 20, int),
    )
    if not 0.0 <= flt.survival_prob <= 1.0:
        raise ConfigError("filter.survival_prob must lie in [0, 1]")
    if flt.birth_rate < 0:
        raise ConfigError("filter.birth_rate must be non-negative")

    e = _section(d, "evaluate")
    ev = EvaluateSpec(
        ospa_cutoff=_quantity(e, "ospa_cutoff", "length", "evaluate", 1.0),
        ospa_order=_number(e, "ospa_order", "evaluate", 1.0),
        smoothing_window=_number(e, "smoothing_window", "evaluate", 50, int),
    )
    if ev.ospa_cutoff <= 0 or ev.ospa_order < 1:
        raise ConfigError("evaluate: need ospa_cutoff > 0 and ospa_order >= 1")
    return RunConfig(model, world, cal, flt, ev, _number(d, "seed", "config", 0, int), base_dir)


def load_config(path: str | Path, check_files: bool = True) -> RunConfig:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(d, str(path.parent), check_files)


def loads_config(text: str, base_dir: str = ".", check_files: bool = True) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(d, base_dir, check_files)
