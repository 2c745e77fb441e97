"""Deterministic world stepping, episode orchestration, and benchmarks.

The simulator provides ground-truth positions and velocities of every moving
object, flies the drone exactly along the active plan (no controller error),
and replans on a fixed period.  Episodes are reproducible bit for bit from
the scenario seed; wall-clock timing is recorded but excluded from the
determinism digest.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bernstein import Curve3
from .geometry import (
    Ellipsoid,
    OccupancyMap,
    point_ellipsoid_distance,
    point_ellipsoid_distance_many,
)
from .planner import ChasePlan, DroneState, check_fov_pair
from .planner import plan as plan_cycle
from .predictor import NoPredictionError, TargetState, predict, terminal_variance
from .scenario import EntitySpec, Scenario

VISIBILITY_CAP = 1e3
"""Reported clearance when there is nothing to be occluded by."""

_FREEZE_TAIL = 1.0
"""Moving objects come to a stop this long before the episode ends."""


# ---------------------------------------------------------------------------
# motion models


class _Mover:
    """Piecewise constant-velocity wanderer with optional obstacle avoidance.

    ``waypoint`` movers head to successive uniform random waypoints inside an
    inset box; ``waypoint_avoid`` movers additionally steer away from nearby
    obstacles (rate-limited so the track stays smooth); ``scripted`` movers
    follow a fixed waypoint list and stop; ``formation`` movers track a
    leader at a fixed offset.
    """

    def __init__(
        self,
        spec: EntitySpec,
        rng: np.random.Generator,
        bounds_lo: np.ndarray,
        bounds_hi: np.ndarray,
        planar: bool,
        leader: "_Mover | None" = None,
    ):
        self.pos = np.array(spec.start, dtype=float)
        self.vel = np.zeros(3)
        self.radius = spec.radius
        self.speed_max = spec.speed_max
        self.motion = spec.motion
        self.rng = rng
        self.planar = planar
        self.leader = leader
        self.offset = np.array(spec.offset, dtype=float)
        inset = min(0.1 + max(r for r in spec.radius[:2]), 0.3)
        self.wp_lo = bounds_lo + inset
        self.wp_hi = bounds_hi - inset
        if planar:
            self.wp_lo[2] = self.wp_hi[2] = spec.start[2]
        self.script = [np.array(w, dtype=float) for w in spec.waypoints]
        self.script_idx = 0
        self.waypoint = self.pos.copy()
        self.leg_speed = 0.0
        if self.motion in ("waypoint", "waypoint_avoid"):
            self._new_leg()
        elif self.motion == "scripted" and self.script:
            self.waypoint = self.script[0]
            self.leg_speed = self.speed_max

    def _new_leg(self) -> None:
        self.waypoint = self.rng.uniform(self.wp_lo, self.wp_hi)
        self.leg_speed = self.speed_max * self.rng.uniform(0.5, 1.0)

    def step(self, dt: float, frozen: bool, avoid: list[tuple[np.ndarray, float]]) -> None:
        if frozen or self.motion == "static":
            self.vel = np.zeros(3)
            return
        if self.motion == "formation":
            self.pos = self.leader.pos + self.offset
            self.vel = self.leader.vel.copy()
            return
        to_wp = self.waypoint - self.pos
        dist = float(np.linalg.norm(to_wp))
        if dist < 0.05:
            if self.motion == "scripted":
                self.script_idx += 1
                if self.script_idx >= len(self.script):
                    self.vel = np.zeros(3)
                    return
                self.waypoint = self.script[self.script_idx]
            else:
                self._new_leg()
            to_wp = self.waypoint - self.pos
            dist = float(np.linalg.norm(to_wp))
        desired = self.leg_speed * to_wp / max(dist, 1e-9)
        if self.motion == "waypoint_avoid" and avoid:
            desired = desired + self._repulsion(avoid)
            speed = float(np.linalg.norm(desired))
            if speed > self.speed_max:
                desired *= self.speed_max / speed
            # limited turn authority keeps the track smooth for prediction
            dv = desired - self.vel
            dv_max = 3.0 * dt
            dv_norm = float(np.linalg.norm(dv))
            if dv_norm > dv_max:
                dv *= dv_max / dv_norm
            self.vel = self.vel + dv
        else:
            self.vel = desired
        self.pos = self.pos + self.vel * dt
        # reflect off the inset box
        for ax in range(2 if self.planar else 3):
            if self.pos[ax] < self.wp_lo[ax]:
                self.pos[ax] = self.wp_lo[ax]
                self.vel[ax] = abs(self.vel[ax])
            elif self.pos[ax] > self.wp_hi[ax]:
                self.pos[ax] = self.wp_hi[ax]
                self.vel[ax] = -abs(self.vel[ax])
        if self.planar:
            self.pos[2] = self.wp_lo[2]
            self.vel[2] = 0.0

    def _repulsion(self, others: list[tuple[np.ndarray, float]]) -> np.ndarray:
        push = np.zeros(3)
        sense = 0.75
        own = max(self.radius[0], self.radius[1])
        for opos, oradius in others:
            away = self.pos - opos
            if self.planar:
                away[2] = 0.0
            gap = float(np.linalg.norm(away)) - own - oradius
            if gap < sense:
                scale = 2.0 * self.speed_max * (sense - max(gap, 0.02)) / sense
                push += scale * away / max(np.linalg.norm(away), 1e-9)
        return push


@dataclass
class Snapshot:
    targets: list[TargetState]
    target_positions: np.ndarray
    obstacle_curves: list[tuple[Curve3, Ellipsoid]]
    obstacle_states: list[tuple[np.ndarray, Ellipsoid]]


class World:
    """All moving objects of one scenario, stepped deterministically."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        lo = np.array(scenario.bounds_lo)
        hi = np.array(scenario.bounds_hi)
        planar = scenario.is_planar
        self.time = 0.0
        self.freeze_at = max(scenario.duration - _FREEZE_TAIL, 0.0)
        self.obstacles: list[_Mover] = []
        grp = scenario.obstacles
        keep_clear = [np.array(scenario.drone_start)] + [
            np.array(t.start) for t in scenario.targets
        ]
        for i in range(grp.count):
            rng = np.random.default_rng([scenario.seed, 1, i])
            # spawn with a standoff so nothing starts inside the tracker
            for _ in range(100):
                start = rng.uniform(lo + 0.3, hi - 0.3)
                if planar:
                    start[2] = scenario.plane_height
                if all(np.linalg.norm(start - p) >= 0.6 for p in keep_clear):
                    break
            spec = EntitySpec(
                start=tuple(start),
                radius=grp.radius,
                speed_max=grp.speed_max,
                motion=grp.motion,
            )
            self.obstacles.append(_Mover(spec, rng, lo, hi, planar))
        self.targets: list[_Mover] = []
        leader: _Mover | None = None
        for i, spec in enumerate(scenario.targets):
            rng = np.random.default_rng([scenario.seed, 2, i])
            mover = _Mover(
                spec,
                rng,
                lo,
                hi,
                planar,
                leader=leader if spec.motion == "formation" else None,
            )
            if leader is None:
                leader = mover
            self.targets.append(mover)

    def step(self, dt: float, drone_pos=None, drone_radius: float = 0.0) -> None:
        frozen = self.time + dt >= self.freeze_at
        for mover in self.obstacles:
            mover.step(dt, frozen, [])
        avoid = [
            (m.pos, max(m.radius[0], m.radius[1])) for m in self.obstacles
        ]
        if drone_pos is not None:
            # targets walk around the tracker like any other body in the
            # arena; the benchmark is about the chase, not about ramming
            avoid.append((np.asarray(drone_pos, dtype=float), drone_radius))
        for mover in self.targets:
            mover.step(dt, frozen, avoid)
        self.time += dt

    def snapshot(self, horizon: float, variance: np.ndarray) -> Snapshot:
        targets = [
            TargetState(m.pos.copy(), m.vel.copy(), variance) for m in self.targets
        ]
        curves = []
        states = []
        for m in self.obstacles:
            pts = np.stack([m.pos, m.pos + m.vel * horizon])
            shape = Ellipsoid(m.radius)
            curves.append((Curve3.from_control_points(pts, horizon), shape))
            states.append((m.pos.copy(), shape))
        return Snapshot(
            targets=targets,
            target_positions=np.array([m.pos for m in self.targets]),
            obstacle_curves=curves,
            obstacle_states=states,
        )


# ---------------------------------------------------------------------------
# evaluation metrics


def safety_metric(
    drone_pos,
    r_c: float,
    obstacles: list[tuple[np.ndarray, Ellipsoid]],
    targets: list[tuple[np.ndarray, Ellipsoid]],
    occ: OccupancyMap,
) -> float:
    """Clearance between the drone sphere and everything solid (negative
    once penetrating)."""
    p = np.asarray(drone_pos, dtype=float)
    best = VISIBILITY_CAP
    for center, shape in list(obstacles) + list(targets):
        best = min(best, point_ellipsoid_distance(p, center, shape) - r_c)
    cell = occ.distance_to_occupied(p)
    if math.isfinite(cell):
        best = min(best, cell - r_c)
    return float(best)


def visibility_metric(
    drone_pos,
    target_positions,
    obstacles: list[tuple[np.ndarray, Ellipsoid]],
    occ: OccupancyMap,
    samples: int = 101,
) -> float:
    """Minimum clearance between any drone-target sight line and the
    obstacle set, over a fixed epsilon grid along each segment."""
    p = np.asarray(drone_pos, dtype=float)
    targets = np.atleast_2d(np.asarray(target_positions, dtype=float))
    eps = np.linspace(0.0, 1.0, samples)[:, None]
    best = VISIBILITY_CAP
    have_static = bool(occ.cells)
    if not obstacles and not have_static:
        return VISIBILITY_CAP
    for tpos in targets:
        pts = (1.0 - eps) * p[None, :] + eps * tpos[None, :]
        for center, shape in obstacles:
            d = point_ellipsoid_distance_many(pts, center, shape)
            best = min(best, float(np.min(d)))
        if have_static:
            best = min(best, float(np.min(occ.distance_to_occupied_many(pts))))
    return float(best)


# ---------------------------------------------------------------------------
# episode records


@dataclass
class StepRecord:
    t: float
    drone_pos: tuple
    drone_vel: tuple
    targets: tuple
    obstacles: tuple
    plan_id: int
    chi: float
    phi: float
    cycle_time: float

    def payload(self, with_timing: bool = True) -> dict:
        out = {
            "record": "step",
            "t": self.t,
            "drone_pos": list(self.drone_pos),
            "drone_vel": list(self.drone_vel),
            "targets": [list(p) for p in self.targets],
            "obstacles": [list(p) for p in self.obstacles],
            "plan_id": self.plan_id,
            "chi": self.chi,
            "phi": self.phi,
        }
        if with_timing:
            out["cycle_time"] = self.cycle_time
        return out


@dataclass
class CycleRecord:
    index: int
    t: float
    plan_id: int
    degraded: bool
    reused: bool
    compute_time: float
    accepted: tuple
    diagnostics: dict

    def payload(self, with_timing: bool = True) -> dict:
        out = {
            "record": "cycle",
            "index": self.index,
            "t": self.t,
            "plan_id": self.plan_id,
            "degraded": self.degraded,
            "reused": self.reused,
            "accepted": list(self.accepted),
            "diagnostics": self.diagnostics,
        }
        if with_timing:
            out["compute_time"] = self.compute_time
        return out


@dataclass
class EpisodeLog:
    outcome: str
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    cycles: list[CycleRecord] = field(default_factory=list)

    @property
    def min_chi(self) -> float:
        return min(s.chi for s in self.steps)

    @property
    def min_phi(self) -> float:
        return min(s.phi for s in self.steps)

    def metric_summary(self) -> dict:
        chi = np.array([s.chi for s in self.steps])
        phi = np.array([s.phi for s in self.steps])
        return {
            "chi": [float(chi.min()), float(chi.mean()), float(chi.max())],
            "phi": [float(phi.min()), float(phi.mean()), float(phi.max())],
        }

    def compute_times(self) -> np.ndarray:
        return np.array([c.compute_time for c in self.cycles])

    def digest(self) -> str:
        """Content hash excluding wall-clock timing (which is never
        reproducible); this is the determinism contract."""
        blob = json.dumps(
            {
                "outcome": self.outcome,
                "seed": self.seed,
                "cycles": [c.payload(with_timing=False) for c in self.cycles],
                "steps": [s.payload(with_timing=False) for s in self.steps],
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            meta = {
                "record": "meta",
                "outcome": self.outcome,
                "seed": self.seed,
                "n_steps": len(self.steps),
                "n_cycles": len(self.cycles),
            }
            fh.write(json.dumps(meta) + "\n")
            for c in self.cycles:
                fh.write(json.dumps(c.payload()) + "\n")
            for s in self.steps:
                fh.write(json.dumps(s.payload()) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "EpisodeLog":
        steps: list[StepRecord] = []
        cycles: list[CycleRecord] = []
        outcome = "unknown"
        seed = -1
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("record")
            if kind == "meta":
                outcome = rec["outcome"]
                seed = rec["seed"]
            elif kind == "cycle":
                cycles.append(
                    CycleRecord(
                        index=rec["index"],
                        t=rec["t"],
                        plan_id=rec["plan_id"],
                        degraded=rec["degraded"],
                        reused=rec["reused"],
                        compute_time=rec.get("compute_time", 0.0),
                        accepted=tuple(rec["accepted"]),
                        diagnostics=rec["diagnostics"],
                    )
                )
            elif kind == "step":
                steps.append(
                    StepRecord(
                        t=rec["t"],
                        drone_pos=tuple(rec["drone_pos"]),
                        drone_vel=tuple(rec["drone_vel"]),
                        targets=tuple(tuple(p) for p in rec["targets"]),
                        obstacles=tuple(tuple(p) for p in rec["obstacles"]),
                        plan_id=rec["plan_id"],
                        chi=rec["chi"],
                        phi=rec["phi"],
                        cycle_time=rec.get("cycle_time", 0.0),
                    )
                )
        return cls(outcome=outcome, seed=seed, steps=steps, cycles=cycles)


# ---------------------------------------------------------------------------
# episode driver


def _active_curves(active: ChasePlan) -> tuple[Curve3, Curve3, Curve3]:
    vel = active.curve.derivative()
    return active.curve, vel, vel.derivative()


def run_episode(
    scenario: Scenario,
    *,
    workers: int = 1,
    verify: bool = False,
) -> EpisodeLog:
    """Run one closed-loop episode: predict, plan, fly, step, measure.

    The drone hands exact position/velocity/acceleration from the active
    plan to the next cycle, so the flown trajectory is continuous to
    machine precision across replans.
    """
    occ = scenario.occupancy_map()
    world = World(scenario)
    pparams = scenario.planner_params()
    dparams = scenario.predictor_params()
    shapes = scenario.target_shapes()
    variance = terminal_variance(dparams, scenario.horizon)
    drone = DroneState.at_rest(scenario.drone_start)
    dt = scenario.step_dt
    stride = max(1, round(scenario.replan_period / dt))
    n_steps = round(scenario.duration / dt)
    active: ChasePlan | None = None
    curves = None
    plan_age = 0.0
    plan_id = -1
    cycle_idx = -1
    last_cycle_time = 0.0
    log = EpisodeLog(outcome="running", seed=scenario.seed)
    for k in range(n_steps):
        if k % stride == 0:
            cycle_idx += 1
            started = time.perf_counter()
            snap = world.snapshot(scenario.horizon, variance)
            predictions = []
            failure = None
            for ti, tstate in enumerate(snap.targets):
                try:
                    predictions.append(
                        predict(
                            tstate,
                            occ,
                            snap.obstacle_curves,
                            shapes[ti],
                            scenario.horizon,
                            dparams,
                            np.random.default_rng([scenario.seed, cycle_idx, 101 + ti]),
                        )
                    )
                except NoPredictionError as err:
                    failure = err
                    break
            if failure is not None:
                active = plan_cycle(
                    drone,
                    [],
                    occ,
                    snap.obstacle_curves,
                    shapes,
                    pparams,
                    None,
                    horizon=scenario.horizon,
                )
                active.diagnostics["reason"] = "no_prediction"
            else:
                active = plan_cycle(
                    drone,
                    predictions,
                    occ,
                    snap.obstacle_curves,
                    shapes,
                    pparams,
                    np.random.default_rng([scenario.seed, cycle_idx, 202]),
                    previous=active,
                    shift=scenario.replan_period,
                    workers=workers,
                )
                if verify and not active.degraded:
                    verify_plan_semantics(
                        active, predictions, snap.obstacle_curves, pparams.limits
                    )
            last_cycle_time = time.perf_counter() - started
            plan_id += 1
            curves = _active_curves(active)
            plan_age = 0.0
            log.cycles.append(
                CycleRecord(
                    index=cycle_idx,
                    t=world.time,
                    plan_id=plan_id,
                    degraded=active.degraded,
                    reused=active.reused,
                    compute_time=last_cycle_time,
                    accepted=tuple(
                        p.sample_count_accepted for p in (predictions or [])
                    ),
                    diagnostics=dict(active.diagnostics),
                )
            )
        plan_age += dt
        t_eval = min(plan_age, active.horizon)
        pos_c, vel_c, acc_c = curves
        pos = pos_c.evaluate(t_eval)
        vel = vel_c.evaluate(t_eval)
        acc = acc_c.evaluate(t_eval)
        drone = DroneState(pos, vel, acc)
        world.step(dt, drone_pos=pos, drone_radius=pparams.limits.r_c)
        obstacle_states = [(m.pos.copy(), Ellipsoid(m.radius)) for m in world.obstacles]
        target_states = [(m.pos.copy(), Ellipsoid(m.radius)) for m in world.targets]
        chi = safety_metric(pos, pparams.limits.r_c, obstacle_states, target_states, occ)
        phi = visibility_metric(
            pos, np.array([m.pos for m in world.targets]), obstacle_states, occ
        )
        log.steps.append(
            StepRecord(
                t=world.time,
                drone_pos=tuple(pos),
                drone_vel=tuple(vel),
                targets=tuple(tuple(m.pos) for m in world.targets),
                obstacles=tuple(tuple(m.pos) for m in world.obstacles),
                plan_id=plan_id,
                chi=chi,
                phi=phi,
                cycle_time=last_cycle_time,
            )
        )
    if log.min_chi <= 0.0:
        log.outcome = "collision"
    elif log.min_phi <= 0.0:
        log.outcome = "occlusion"
    elif log.cycles and log.cycles[-1].degraded:
        log.outcome = "planner-degraded"
    else:
        log.outcome = "success"
    return log


# ---------------------------------------------------------------------------
# dense-grid semantic verification of a certified plan


def verify_plan_semantics(
    chase: ChasePlan,
    predictions,
    obstacles,
    limits,
    *,
    time_samples: int = 201,
    eps_samples: int = 51,
    tol: float = 1e-6,
) -> None:
    """Re-check every certified constraint on a dense grid; raises on any
    violation.  This is the end-to-end soundness oracle for flown plans."""
    curve = chase.curve
    ts = np.linspace(0.0, curve.horizon, time_samples)
    c = curve.evaluate_many(ts)
    vel = curve.derivative().evaluate_many(ts)
    acc = curve.derivative().derivative().evaluate_many(ts)
    qs = [p.curve.evaluate_many(ts) for p in predictions]
    for q in qs:
        dist = np.linalg.norm(c - q, axis=1)
        if dist.min() < limits.d_min - tol or dist.max() > limits.d_max + tol:
            raise RuntimeError(
                f"distance band violated: [{dist.min()}, {dist.max()}]"
            )
    for oc, shape in obstacles:
        opos = oc.evaluate_many(ts)
        w = np.array(
            [
                0.0 if math.isinf(r + limits.r_c) else (r + limits.r_c) ** -2
                for r in shape.semi_axes
            ]
        )
        clearance = np.sum((c - opos) ** 2 * w, axis=1)
        if clearance.min() < 1.0 - tol:
            raise RuntimeError(f"collision clearance violated: {clearance.min()}")
        wq = np.array([0.0 if math.isinf(r) else r**-2 for r in shape.semi_axes])
        eps = np.linspace(0.0, 1.0, eps_samples)[None, :, None]
        for q in qs:
            los = (1.0 - eps) * c[:, None, :] + eps * q[:, None, :]
            sq = np.sum((los - opos[:, None, :]) ** 2 * wq, axis=2)
            if sq.min() < 1.0 - tol:
                raise RuntimeError(f"line-of-sight clearance violated: {sq.min()}")
    speed = np.linalg.norm(vel, axis=1)
    if speed.max() > limits.v_max + tol:
        raise RuntimeError(f"speed limit violated: {speed.max()}")
    accel = np.linalg.norm(acc, axis=1)
    if accel.max() > limits.a_max + tol:
        raise RuntimeError(f"acceleration limit violated: {accel.max()}")
    gaze = np.mean(qs, axis=0)
    gaze_v = np.mean(
        [p.curve.derivative().evaluate_many(ts) for p in predictions], axis=0
    )
    rel = gaze - c
    rel_v = gaze_v - vel
    den = rel[:, 0] ** 2 + rel[:, 1] ** 2
    num = rel[:, 0] * rel_v[:, 1] - rel[:, 1] * rel_v[:, 0]
    safe = den > 1e-12
    rate = np.abs(num[safe] / den[safe])
    if rate.size and rate.max() > limits.yaw_rate_max + tol:
        raise RuntimeError(f"yaw rate violated: {rate.max()}")
    for i in range(len(qs)):
        for j in range(i + 1, len(qs)):
            if not check_fov_pair(
                curve, predictions[i].curve, predictions[j].curve, limits.theta_f
            ):
                continue  # pair was not certified, nothing to verify
            vi = qs[i] - c
            vj = qs[j] - c
            ni = np.linalg.norm(vi, axis=1)
            nj = np.linalg.norm(vj, axis=1)
            ok = (ni > 1e-9) & (nj > 1e-9)
            cosang = np.sum(vi[ok] * vj[ok], axis=1) / (ni[ok] * nj[ok])
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            if ang.size and ang.max() > limits.theta_f + 1e-4:
                raise RuntimeError(f"view angle violated: {ang.max()}")


# ---------------------------------------------------------------------------
# benchmark sweeps


@dataclass
class BenchRow:
    obstacle_count: int
    episodes: int
    success_rate: float
    mean_cycle_ms: float
    max_cycle_ms: float
    chi: tuple[float, float, float]
    phi: tuple[float, float, float]
    outcomes: dict

    def payload(self) -> dict:
        return {
            "obstacle_count": self.obstacle_count,
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_cycle_ms": self.mean_cycle_ms,
            "max_cycle_ms": self.max_cycle_ms,
            "chi_min_mean_max": list(self.chi),
            "phi_min_mean_max": list(self.phi),
            "outcomes": self.outcomes,
        }


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def payload(self) -> dict:
        return {"rows": [r.payload() for r in self.rows]}

    def format_table(self) -> str:
        header = (
            f"{'obstacles':>9}  {'episodes':>8}  {'success':>7}  "
            f"{'cycle ms (mean/max)':>20}  {'chi min/mean/max':>22}  "
            f"{'phi min/mean/max':>22}"
        )
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.obstacle_count:>9}  {r.episodes:>8}  {r.success_rate:>7.3f}  "
                f"{r.mean_cycle_ms:>9.2f}/{r.max_cycle_ms:<9.2f}  "
                f"{r.chi[0]:>6.3f}/{r.chi[1]:>6.3f}/{r.chi[2]:>6.3f}  "
                f"{r.phi[0]:>6.3f}/{r.phi[1]:>6.3f}/{r.phi[2]:>6.3f}"
            )
        return "\n".join(lines)


def episode_seed(base_seed: int, obstacle_count: int, episode: int) -> int:
    """Stable per-episode seed derivation for sweeps."""
    ss = np.random.SeedSequence([base_seed, obstacle_count, episode])
    return int(ss.generate_state(1)[0])


def bench_sweep(
    base: Scenario,
    obstacle_counts: list[int],
    episodes_per_count: int,
    *,
    workers: int = 1,
    on_episode=None,
) -> BenchReport:
    """Seeded success-rate and timing sweep over obstacle counts."""
    from dataclasses import replace

    if episodes_per_count < 1:
        raise ValueError("need at least one episode per count")
    rows = []
    for count in obstacle_counts:
        chis, phis, times = [], [], []
        outcomes: dict[str, int] = {}
        successes = 0
        for e in range(episodes_per_count):
            scn = replace(
                base,
                seed=episode_seed(base.seed, count, e),
                obstacles=replace(base.obstacles, count=count),
            )
            log = run_episode(scn, workers=workers)
            outcomes[log.outcome] = outcomes.get(log.outcome, 0) + 1
            successes += log.outcome == "success"
            summary = log.metric_summary()
            chis.append(summary["chi"])
            phis.append(summary["phi"])
            times.append(log.compute_times())
            if on_episode is not None:
                on_episode(count, e, log)
        chis = np.array(chis)
        phis = np.array(phis)
        all_times = np.concatenate(times)
        rows.append(
            BenchRow(
                obstacle_count=count,
                episodes=episodes_per_count,
                success_rate=successes / episodes_per_count,
                mean_cycle_ms=float(all_times.mean() * 1e3),
                max_cycle_ms=float(all_times.max() * 1e3),
                chi=(
                    float(chis[:, 0].min()),
                    float(chis[:, 1].mean()),
                    float(chis[:, 2].max()),
                ),
                phi=(
                    float(phis[:, 0].min()),
                    float(phis[:, 1].mean()),
                    float(phis[:, 2].max()),
                ),
                outcomes=outcomes,
            )
        )
    return BenchReport(rows)
