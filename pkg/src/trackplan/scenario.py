"""Scenario files: schema, loading, overrides, and validation.

A scenario is a single YAML document with a versioned ``schema`` field.  In
``2d`` mode the loader coerces the planar conventions (infinite z semi-axes,
entities pinned to the plane height, zero sampling elevation, zero vertical
terminal spread) so downstream code never special-cases the mode again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .geometry import Ellipsoid, OccupancyMap
from .planner import CostWeights, PlannerLimits, PlannerParams, SamplingShell
from .predictor import PredictorParams

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Scenario file missing, malformed, or violating an invariant."""


@dataclass(frozen=True)
class EntitySpec:
    start: tuple[float, float, float]
    radius: tuple[float, float, float]
    speed_max: float = 0.0
    motion: str = "static"
    waypoints: tuple[tuple[float, float, float], ...] = ()
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def shape(self) -> Ellipsoid:
        return Ellipsoid(self.radius)


@dataclass(frozen=True)
class ObstacleGroup:
    count: int
    radius: tuple[float, float, float]
    speed_max: float
    motion: str = "waypoint"


@dataclass(frozen=True)
class MapSpec:
    resolution: float = 0.1
    boxes: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] = ()
    file: str | None = None
    points_file: str | None = None


@dataclass(frozen=True)
class Scenario:
    schema: int
    mode: str
    seed: int
    bounds_lo: tuple[float, float, float]
    bounds_hi: tuple[float, float, float]
    plane_height: float
    map: MapSpec
    horizon: float
    replan_period: float
    step_dt: float
    duration: float
    drone_start: tuple[float, float, float]
    targets: tuple[EntitySpec, ...]
    obstacles: ObstacleGroup
    planner: dict = field(default_factory=dict)
    predictor: dict = field(default_factory=dict)
    base_dir: str = "."

    @property
    def is_planar(self) -> bool:
        return self.mode == "2d"

    def planner_params(self) -> PlannerParams:
        p = self.planner
        limits = PlannerLimits(
            d_min=p["d_min"],
            d_max=p["d_max"],
            v_max=p["v_max"],
            a_max=p["a_max"],
            yaw_rate_max=p["yaw_rate_max"],
            theta_f=p["theta_f"],
            r_c=p["r_c"],
            obstacle_margin=p.get("obstacle_margin", 0.0),
            visibility_margin=p.get("visibility_margin", 0.0),
        )
        shell_cfg = p["shell"]
        shell = SamplingShell(
            radius=tuple(shell_cfg["radius"]),
            elevation=tuple(shell_cfg["elevation"]),
            azimuth=tuple(shell_cfg["azimuth"]),
        )
        weights = CostWeights(p.get("w_a", 0.0), p.get("w_j", 0.0), p.get("d_des"))
        return PlannerParams(
            limits=limits,
            shell=shell,
            weights=weights,
            samples=p.get("samples", 1000),
            corridor_extent=p.get("corridor_extent", 3.0),
            planar=self.is_planar,
        )

    def predictor_params(self) -> PredictorParams:
        p = self.predictor
        return PredictorParams(
            samples=p.get("samples", 1000),
            kappa=p.get("kappa", 0.3),
            kappa_z=0.0 if self.is_planar else p.get("kappa_z", 0.1),
            corridor_extent=p.get("corridor_extent", 2.0),
            planar=self.is_planar,
        )

    def occupancy_map(self) -> OccupancyMap:
        m = self.map
        if m.file is not None:
            return OccupancyMap.load(Path(self.base_dir) / m.file)
        if m.points_file is not None:
            pts = np.loadtxt(Path(self.base_dir) / m.points_file, ndmin=2)
            return OccupancyMap.from_points(
                pts, m.resolution, self.bounds_lo, self.bounds_hi
            )
        if m.boxes:
            return OccupancyMap.from_boxes(
                m.boxes, m.resolution, self.bounds_lo, self.bounds_hi
            )
        return OccupancyMap.empty(self.bounds_lo, self.bounds_hi, m.resolution)

    def target_shapes(self) -> list[Ellipsoid]:
        return [t.shape for t in self.targets]


def _as_vec3(value, name: str) -> tuple[float, float, float]:
    try:
        vec = tuple(float(v) for v in value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: expected three numbers, got {value!r}") from err
    if len(vec) != 3:
        raise ConfigError(f"{name}: expected three numbers, got {value!r}")
    return vec


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.path=value`` overrides to the raw document (in place).

    Values parse as YAML scalars; list elements address by integer index.
    Overrides run after file parse and before validation.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.strip().split(".")
        node = data
        for key in keys[:-1]:
            node = node[int(key)] if isinstance(node, list) else node.setdefault(key, {})
        leaf = keys[-1]
        value = yaml.safe_load(raw)
        if isinstance(node, list):
            node[int(leaf)] = value
        else:
            node[leaf] = value
    return data


_PLANNER_DEFAULTS = {
    "samples": 1000,
    "obstacle_margin": 0.0,
    "visibility_margin": 0.0,
    "w_a": 0.05,
    "w_j": 0.01,
    "d_des": None,
    "corridor_extent": 3.0,
}

_TARGET_MOTIONS = {"static", "waypoint", "waypoint_avoid", "scripted", "formation"}
_OBSTACLE_MOTIONS = {"static", "waypoint"}


def scenario_from_dict(data: dict, base_dir: str = ".") -> Scenario:
    try:
        schema = int(data["schema"])
        mode = str(data["mode"]).lower()
        seed = int(data.get("seed", 0))
        bounds_lo = _as_vec3(data["bounds"]["min"], "bounds.min")
        bounds_hi = _as_vec3(data["bounds"]["max"], "bounds.max")
        plane_height = float(
            data.get("plane_height", 0.5 * (bounds_lo[2] + bounds_hi[2]))
        )
        map_raw = data.get("map", {}) or {}
        map_spec = MapSpec(
            resolution=float(map_raw.get("resolution", 0.1)),
            boxes=tuple(
                (_as_vec3(b["min"], "map.boxes.min"), _as_vec3(b["max"], "map.boxes.max"))
                for b in map_raw.get("boxes", []) or []
            ),
            file=map_raw.get("file"),
            points_file=map_raw.get("points"),
        )
        horizon = float(data["horizon"])
        replan = float(data["replan_period"])
        step_dt = float(data.get("step_dt", 0.01))
        duration = float(data["duration"])
        drone_start = _as_vec3(data["drone"]["start"], "drone.start")
        targets = []
        for i, t in enumerate(data["targets"]):
            targets.append(
                EntitySpec(
                    start=_as_vec3(t["start"], f"targets.{i}.start"),
                    radius=_as_vec3(t["radius"], f"targets.{i}.radius"),
                    speed_max=float(t.get("speed_max", 0.0)),
                    motion=str(t.get("motion", "static")),
                    waypoints=tuple(
                        _as_vec3(w, f"targets.{i}.waypoints") for w in t.get("waypoints", []) or []
                    ),
                    offset=_as_vec3(t.get("offset", (0.0, 0.0, 0.0)), f"targets.{i}.offset"),
                )
            )
        obs_raw = data.get("obstacles", {}) or {}
        obstacles = ObstacleGroup(
            count=int(obs_raw.get("count", 0)),
            radius=_as_vec3(obs_raw.get("radius", (0.07, 0.07, 0.07)), "obstacles.radius"),
            speed_max=float(obs_raw.get("speed_max", 1.0)),
            motion=str(obs_raw.get("motion", "waypoint")),
        )
        planner = dict(_PLANNER_DEFAULTS)
        planner.update(data["planner"])
        planner["r_c"] = float(data["drone"]["radius"])
        predictor = dict(data.get("predictor", {}) or {})
    except ConfigError:
        raise
    except KeyError as err:
        raise ConfigError(f"missing scenario field: {err.args[0]}") from err
    except (TypeError, ValueError) as err:
        raise ConfigError(f"malformed scenario value: {err}") from err
    scn = Scenario(
        schema=schema,
        mode=mode,
        seed=seed,
        bounds_lo=bounds_lo,
        bounds_hi=bounds_hi,
        plane_height=plane_height,
        map=map_spec,
        horizon=horizon,
        replan_period=replan,
        step_dt=step_dt,
        duration=duration,
        drone_start=drone_start,
        targets=tuple(targets),
        obstacles=obstacles,
        planner=planner,
        predictor=predictor,
        base_dir=base_dir,
    )
    if scn.mode == "2d":
        scn = _coerce_planar(scn)
    return scn


def _coerce_planar(scn: Scenario) -> Scenario:
    h = scn.plane_height

    def flat(spec: EntitySpec) -> EntitySpec:
        return replace(
            spec,
            start=(spec.start[0], spec.start[1], h),
            radius=(spec.radius[0], spec.radius[1], math.inf),
            waypoints=tuple((w[0], w[1], h) for w in spec.waypoints),
            offset=(spec.offset[0], spec.offset[1], 0.0),
        )

    planner = dict(scn.planner)
    shell = dict(planner.get("shell", {}))
    shell["elevation"] = (0.0, 0.0)
    planner["shell"] = shell
    return replace(
        scn,
        drone_start=(scn.drone_start[0], scn.drone_start[1], h),
        targets=tuple(flat(t) for t in scn.targets),
        obstacles=replace(
            scn.obstacles,
            radius=(scn.obstacles.radius[0], scn.obstacles.radius[1], math.inf),
        ),
        planner=planner,
    )


def load_scenario(path, overrides: list[str] | None = None) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"scenario file not found: {path}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"scenario file does not parse: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("scenario file must contain a mapping")
    if overrides:
        apply_overrides(data, overrides)
    return scenario_from_dict(data, base_dir=str(path.parent))


@dataclass(frozen=True)
class RuleResult:
    rule: str
    ok: bool
    message: str


def validate_scenario(scn: Scenario) -> list[RuleResult]:
    """Check every cross-field invariant; one result per named rule."""
    results: list[RuleResult] = []

    def rule(name: str, ok: bool, message: str) -> None:
        results.append(RuleResult(name, bool(ok), message))

    rule("schema-version", scn.schema == SCHEMA_VERSION, f"schema={scn.schema}")
    rule("mode-known", scn.mode in ("2d", "3d"), f"mode={scn.mode}")
    rule("seed-nonnegative", scn.seed >= 0, f"seed={scn.seed}")
    lo, hi = np.array(scn.bounds_lo), np.array(scn.bounds_hi)
    rule("bounds-nonempty", bool(np.all(hi > lo)), f"bounds={scn.bounds_lo}..{scn.bounds_hi}")
    rule("horizon-positive", scn.horizon > 0, f"horizon={scn.horizon}")
    rule(
        "replan-within-horizon",
        0 < scn.replan_period <= scn.horizon,
        f"replan_period={scn.replan_period}, horizon={scn.horizon}",
    )
    rule(
        "step-within-replan",
        0 < scn.step_dt <= scn.replan_period,
        f"step_dt={scn.step_dt}",
    )
    rule("duration-positive", scn.duration > 0, f"duration={scn.duration}")

    try:
        params = scn.planner_params()
        rule("planner-limits", True, "limits constructible")
    except (ValueError, KeyError) as err:
        rule("planner-limits", False, str(err))
        params = None
    try:
        scn.predictor_params()
        rule("predictor-params", True, "ok")
    except (ValueError, KeyError) as err:
        rule("predictor-params", False, str(err))

    for i, t in enumerate(scn.targets):
        try:
            shape = t.shape
            rule(f"target-{i}-shape", True, f"radius={t.radius}")
        except ValueError as err:
            rule(f"target-{i}-shape", False, str(err))
            continue
        if params is not None:
            try:
                params.limits.check_target_clearance(shape)
                rule(
                    f"target-{i}-distance-floor",
                    True,
                    f"d_min={params.limits.d_min} clears target+drone radii",
                )
            except ValueError as err:
                rule(f"target-{i}-distance-floor", False, str(err))
        inb = bool(np.all(np.array(t.start) >= lo) and np.all(np.array(t.start) <= hi))
        rule(f"target-{i}-start-in-bounds", inb, f"start={t.start}")
        rule(
            f"target-{i}-motion-known",
            t.motion in _TARGET_MOTIONS,
            f"motion={t.motion}",
        )
        rule(f"target-{i}-speed", t.speed_max >= 0, f"speed_max={t.speed_max}")
        if params is not None:
            d0 = float(np.linalg.norm(np.array(scn.drone_start) - np.array(t.start)))
            rule(
                f"target-{i}-start-distance-in-band",
                params.limits.d_min <= d0 <= params.limits.d_max,
                f"start distance {d0:.3f} vs band "
                f"[{params.limits.d_min}, {params.limits.d_max}]",
            )

    try:
        Ellipsoid(scn.obstacles.radius)
        rule("obstacle-shape", True, f"radius={scn.obstacles.radius}")
    except ValueError as err:
        rule("obstacle-shape", False, str(err))
    rule("obstacle-count", scn.obstacles.count >= 0, f"count={scn.obstacles.count}")
    rule(
        "obstacle-motion-known",
        scn.obstacles.motion in _OBSTACLE_MOTIONS,
        f"motion={scn.obstacles.motion}",
    )
    rule("obstacle-speed", scn.obstacles.speed_max >= 0, f"speed_max={scn.obstacles.speed_max}")

    drone_in = bool(
        np.all(np.array(scn.drone_start) >= lo) and np.all(np.array(scn.drone_start) <= hi)
    )
    rule("drone-start-in-bounds", drone_in, f"start={scn.drone_start}")
    if params is not None:
        rule(
            "shell-within-distance-band",
            params.limits.d_min <= params.shell.radius[0]
            and params.shell.radius[1] <= params.limits.d_max,
            f"shell radius {params.shell.radius} vs band "
            f"[{params.limits.d_min}, {params.limits.d_max}]",
        )
    return results
