"""Target motion forecasting by sampled minimum-acceleration primitives.

The predictor samples terminal points from a Gaussian reachable set, builds
the closed-form minimum-acceleration cubic through each, discards primitives
that cannot be certified collision-free against the static corridor and the
moving obstacles, and returns the medoid of the survivors as the forecast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bernstein import (
    EPS_CERT,
    Curve3,
    batch_elevate,
    batch_weighted_sqnorm,
    product_matrix,
)
from .geometry import (
    Ellipsoid,
    OccupancyMap,
    Polytope,
    generate_corridor,
    pair_weights,
    support,
)


class NoPredictionError(RuntimeError):
    """No certifiable primitive exists for the current snapshot."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TargetState:
    """Snapshot of one target: position, velocity, terminal spread."""

    position: np.ndarray
    velocity: np.ndarray
    terminal_variance: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=float).reshape(3)
        vel = np.asarray(self.velocity, dtype=float).reshape(3)
        var = np.asarray(self.terminal_variance, dtype=float).reshape(3)
        if np.any(var < 0.0):
            raise ValueError("terminal variance must be nonnegative")
        for a in (pos, vel, var):
            a.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "terminal_variance", var)


@dataclass(frozen=True)
class TargetPrediction:
    """Selected forecast curve plus the corridor it was certified against."""

    curve: Curve3
    corridor: Polytope
    sample_count_accepted: int
    sample_count_total: int = 0
    selected_index: int = -1


@dataclass(frozen=True)
class PredictorParams:
    samples: int = 1000
    kappa: float = 0.3
    kappa_z: float = 0.1
    corridor_extent: float = 2.0
    planar: bool = False


def terminal_variance(params: PredictorParams, horizon: float) -> np.ndarray:
    """Dispersion of the terminal point, linear in the horizon."""
    s = params.kappa * horizon
    sz = params.kappa_z * horizon
    return np.array([s * s, s * s, sz * sz])


def sample_target_terminals(
    state: TargetState,
    horizon: float,
    count: int,
    seed,
    z_bounds: tuple[float, float] | None = None,
) -> np.ndarray:
    """Draw terminal points from N(x0 + v0 T, diag(variance)).

    Deterministic for a given seed; the z component is clamped to the map's
    vertical extent when provided.
    """
    if count < 1:
        raise ValueError("need at least one sample")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mean = state.position + state.velocity * horizon
    std = np.sqrt(state.terminal_variance)
    samples = mean + rng.standard_normal((count, 3)) * std
    if z_bounds is not None:
        samples[:, 2] = np.clip(samples[:, 2], z_bounds[0], z_bounds[1])
    return samples


def ncvm_control_points(state: TargetState, terminals: np.ndarray, horizon: float) -> np.ndarray:
    """Cubic control points of the minimum-acceleration interpolant.

    [x0, x0 + (T/3) v0, x0/2 + xf/2 + (T/6) v0, xf] per terminal xf; the
    free terminal velocity makes the second acceleration derivative vanish
    at T, which is what minimizes the integrated squared acceleration.
    """
    x0, v0 = state.position, state.velocity
    xf = np.atleast_2d(np.asarray(terminals, dtype=float))
    n = xf.shape[0]
    pts = np.empty((n, 4, 3))
    pts[:, 0] = x0
    pts[:, 1] = x0 + horizon / 3.0 * v0
    pts[:, 2] = 0.5 * x0 + 0.5 * xf + horizon / 6.0 * v0
    pts[:, 3] = xf
    return pts


def build_ncvm(state: TargetState, terminal, horizon: float) -> Curve3:
    """Single minimum-acceleration cubic from the current state to ``terminal``."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    pts = ncvm_control_points(state, np.asarray(terminal, float)[None, :], horizon)[0]
    return Curve3.from_control_points(pts, horizon)


def _obstacle_points(curve: Curve3, degree: int) -> np.ndarray:
    pts = curve.control_points()[None, :, :]
    return batch_elevate(pts, degree)[0]


def feasible_mask(
    points: np.ndarray,
    horizon: float,
    corridor: Polytope,
    target_shape: Ellipsoid,
    obstacles: list[tuple[Curve3, Ellipsoid]],
) -> np.ndarray:
    """Vectorized certification of a stack of cubic primitives.

    A primitive survives iff its control points inflated by the target shape
    stay inside the corridor and, per obstacle, the scaled squared distance
    polynomial provably stays >= 1.
    """
    n = points.shape[0]
    sup = np.array([support(target_shape, a) for a in corridor.normals])
    lhs = points @ corridor.normals.T + sup
    mask = np.all(lhs <= corridor.offsets + EPS_CERT, axis=(1, 2))
    degree = points.shape[1] - 1
    for curve, shape in obstacles:
        if curve.horizon != horizon:
            raise ValueError("obstacle horizon mismatch")
        if not np.any(mask):
            break
        opts = _obstacle_points(curve, max(degree, curve.degree))
        if opts.shape[0] != degree + 1:
            raise ValueError("obstacle degree exceeds primitive degree")
        w = pair_weights(target_shape, shape)
        delta = points - opts[None, :, :]
        sq = batch_weighted_sqnorm(delta, w)
        mask &= np.min(sq, axis=1) >= 1.0 - EPS_CERT
    return mask


def filter_target_primitives(
    curves: list[Curve3],
    corridor: Polytope,
    target_shape: Ellipsoid,
    obstacles: list[tuple[Curve3, Ellipsoid]],
) -> list[Curve3]:
    """Subset of ``curves`` whose collision-freedom is certified."""
    if not curves:
        return []
    horizon = curves[0].horizon
    points = np.stack([c.control_points() for c in curves])
    mask = feasible_mask(points, horizon, corridor, target_shape, obstacles)
    return [c for c, ok in zip(curves, mask) if ok]


def _pairwise_cost(points: np.ndarray, horizon: float) -> np.ndarray:
    """cost_i = sum_j integral ||x_i - x_j||^2 dt via coefficient expansion.

    Expanding the square gives N A_i - 2 integral x_i . S + sum_j A_j with
    S = sum_j x_j, so the medoid is found in O(N) exact Bernstein products.
    """
    n, deg1, _ = points.shape
    deg = deg1 - 1
    w = product_matrix(deg, deg)
    scale = horizon / (2 * deg + 1)

    def integral_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        prod = (a[:, :, None, :] * b[:, None, :, :]).sum(axis=3)
        return prod.reshape(a.shape[0], -1) @ w @ np.ones(2 * deg + 1) * scale

    self_int = integral_dot(points, points)
    total = points.sum(axis=0, keepdims=True)
    cross = integral_dot(points, np.broadcast_to(total, points.shape))
    return n * self_int - 2.0 * cross + self_int.sum()


def select_center(accepted: list[Curve3]) -> int:
    """Index of the medoid primitive (ties broken by lowest index)."""
    if not accepted:
        raise NoPredictionError("no accepted primitives to select from")
    points = np.stack([c.control_points() for c in accepted])
    cost = _pairwise_cost(points, accepted[0].horizon)
    return int(np.argmin(cost))


def predict(
    state: TargetState,
    occ: OccupancyMap,
    obstacles: list[tuple[Curve3, Ellipsoid]],
    target_shape: Ellipsoid,
    horizon: float,
    params: PredictorParams,
    seed,
) -> TargetPrediction:
    """Full prediction pass: corridor, sampling, certification, selection."""
    mean = state.position + state.velocity * horizon
    mean_clipped = np.clip(mean, occ.bounds_lo, occ.bounds_hi)
    corridor = generate_corridor(
        state.position,
        mean_clipped,
        occ,
        max_extent=params.corridor_extent,
        planar=params.planar,
    )
    if corridor is None:
        raise NoPredictionError(
            "target corridor generation failed",
            {"sampled": 0, "accepted": 0, "corridor": False},
        )
    terminals = sample_target_terminals(
        state,
        horizon,
        params.samples,
        seed,
        z_bounds=(float(occ.bounds_lo[2]), float(occ.bounds_hi[2])),
    )
    points = ncvm_control_points(state, terminals, horizon)
    mask = feasible_mask(points, horizon, corridor, target_shape, obstacles)
    accepted = int(np.count_nonzero(mask))
    if accepted == 0:
        raise NoPredictionError(
            "all sampled target primitives were rejected",
            {"sampled": params.samples, "accepted": 0, "corridor": True},
        )
    kept = points[mask]
    local = int(np.argmin(_pairwise_cost(kept, horizon)))
    selected = int(np.flatnonzero(mask)[local])
    curve = Curve3.from_control_points(points[selected], horizon)
    return TargetPrediction(
        curve=curve,
        corridor=corridor,
        sample_count_accepted=accepted,
        sample_count_total=params.samples,
        selected_index=selected,
    )
