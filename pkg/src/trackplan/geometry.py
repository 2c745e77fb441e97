"""Ellipsoids, box corridors, occupancy grids, and containment certificates.

Corridors are axis-aligned boxes grown greedily from a seed segment inside
the free space of an occupancy grid.  An infinite z semi-axis turns an
ellipsoid into a vertical cylinder for planar (2-D) scenarios; support and
distance computations then drop the z term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bernstein import EPS_CERT, Certificate, Curve3, _certificate

log = logging.getLogger(__name__)

_DISTANCE_FALLBACKS = [0]
"""Count of ellipsoid-distance samples that needed the sampling fallback."""


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid given by semi-axes; center supplied at use."""

    semi_axes: tuple[float, float, float]

    def __post_init__(self) -> None:
        axes = tuple(float(a) for a in self.semi_axes)
        if len(axes) != 3 or any(a <= 0.0 for a in axes):
            raise ValueError(f"semi-axes must be three positive values: {axes}")
        if any(math.isinf(a) for a in axes[:2]):
            raise ValueError("only the z semi-axis may be infinite")
        object.__setattr__(self, "semi_axes", axes)

    @classmethod
    def sphere(cls, radius: float) -> "Ellipsoid":
        return cls((radius, radius, radius))

    @property
    def is_planar(self) -> bool:
        return math.isinf(self.semi_axes[2])

    @property
    def axes_array(self) -> np.ndarray:
        return np.array(self.semi_axes)

    def max_finite_axis(self) -> float:
        return max(a for a in self.semi_axes if math.isfinite(a))


def support(e: Ellipsoid, direction) -> float:
    """Support function max_{x in E(0, e)} direction . x for a unit direction.

    An infinite z axis makes the support infinite unless direction_z == 0.
    """
    d = np.asarray(direction, dtype=float)
    total = 0.0
    for r, di in zip(e.semi_axes, d):
        if math.isinf(r):
            if di != 0.0:
                return math.inf
            continue
        total += (r * di) ** 2
    return math.sqrt(total)


def pair_weights(a: Ellipsoid, b: Ellipsoid) -> np.ndarray:
    """Per-axis (r_a + r_b)^-2 weights; infinite axes contribute weight 0."""
    out = np.zeros(3)
    for i, (ra, rb) in enumerate(zip(a.semi_axes, b.semi_axes)):
        s = ra + rb
        out[i] = 0.0 if math.isinf(s) else s**-2
    return out


def shape_weights(e: Ellipsoid, margin: float = 0.0) -> np.ndarray:
    """Per-axis (r + margin)^-2 weights of one ellipsoid; infinite axes give 0."""
    return np.array(
        [0.0 if math.isinf(r) else (r + margin) ** -2 for r in e.semi_axes]
    )


def equal_finite_radius(e: Ellipsoid) -> float | None:
    """The common radius when all finite semi-axes agree (sphere, or a
    vertical cylinder with circular cross-section); None otherwise."""
    finite = [r for r in e.semi_axes if math.isfinite(r)]
    if all(r == finite[0] for r in finite):
        return finite[0]
    return None


@dataclass(frozen=True)
class Polytope:
    """Intersection of halfspaces a . x <= b with a strictly interior witness."""

    normals: np.ndarray
    offsets: np.ndarray
    interior_point: np.ndarray
    aabb: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self) -> None:
        normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        witness = np.asarray(self.interior_point, dtype=float).reshape(3)
        if normals.shape[0] != offsets.shape[0] or normals.shape[0] == 0:
            raise ValueError("need matching, non-empty normals/offsets")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("normals must be unit length")
        if np.any(normals @ witness >= offsets):
            raise ValueError("witness point is not strictly interior")
        for arr in (normals, offsets, witness):
            arr.flags.writeable = False
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "interior_point", witness)

    @classmethod
    def from_box(cls, lo, hi, planar: bool = False) -> "Polytope":
        """Axis-aligned box; planar boxes omit the z faces entirely."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        axes = (0, 1) if planar else (0, 1, 2)
        if any(hi[ax] <= lo[ax] for ax in axes):
            raise ValueError("box is empty")
        normals, offsets = [], []
        for ax in axes:
            n = np.zeros(3)
            n[ax] = 1.0
            normals.append(n.copy())
            offsets.append(hi[ax])
            n[ax] = -1.0
            normals.append(n.copy())
            offsets.append(-lo[ax])
        return cls(
            np.array(normals),
            np.array(offsets),
            0.5 * (lo + hi),
            aabb=(lo.copy(), hi.copy()),
        )

    def contains_points(self, points, tol: float = EPS_CERT) -> bool:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return bool(np.all(points @ self.normals.T <= self.offsets + tol))


def curve_in_polytope(
    curve: Curve3, inflate: Ellipsoid | None, poly: Polytope
) -> Certificate:
    """Certify that the curve, inflated by ``inflate``, stays inside ``poly``.

    By the convex-hull property it suffices that every control point plus the
    inflating support stays behind every face.
    """
    points = curve.control_points()
    if inflate is None:
        sup = np.zeros(poly.normals.shape[0])
    else:
        sup = np.array([support(inflate, n) for n in poly.normals])
    lhs = points @ poly.normals.T + sup
    return _certificate(bool(np.all(lhs <= poly.offsets + EPS_CERT)))


@dataclass(frozen=True)
class CorridorSequence:
    """Time split 0 = T_0 < ... < T_M plus one polytope per segment."""

    tau: np.ndarray
    polytopes: tuple[Polytope, ...]
    junctions: tuple[np.ndarray, ...] = ()

    def __post_init__(self) -> None:
        tau = np.asarray(self.tau, dtype=float)
        if tau.ndim != 1 or tau.size < 2:
            raise ValueError("tau needs at least [0, T]")
        if tau[0] != 0.0 or np.any(np.diff(tau) <= 0.0):
            raise ValueError("tau must start at 0 and strictly increase")
        if len(self.polytopes) != tau.size - 1:
            raise ValueError("need one polytope per segment")
        for j, point in enumerate(self.junctions):
            if not self.polytopes[j].contains_points(point, tol=1e-9) or (
                j + 1 < len(self.polytopes)
                and not self.polytopes[j + 1].contains_points(point, tol=1e-9)
            ):
                raise ValueError("consecutive corridors must share the junction")
        tau.flags.writeable = False
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "polytopes", tuple(self.polytopes))

    @property
    def segment_count(self) -> int:
        return len(self.polytopes)


# ---------------------------------------------------------------------------
# occupancy maps


@dataclass(frozen=True)
class OccupancyMap:
    """Voxel set on a regular grid, immutable after construction."""

    resolution: float
    origin: np.ndarray
    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    cells: frozenset[tuple[int, int, int]]
    _cell_array: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if not (self.resolution > 0.0):
            raise ValueError("resolution must be positive")
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        lo = np.asarray(self.bounds_lo, dtype=float).reshape(3)
        hi = np.asarray(self.bounds_hi, dtype=float).reshape(3)
        if np.any(hi <= lo):
            raise ValueError("bounds are empty")
        cells = frozenset(tuple(int(v) for v in c) for c in self.cells)
        arr = (
            np.array(sorted(cells), dtype=int)
            if cells
            else np.empty((0, 3), dtype=int)
        )
        cell_lo = origin + arr * self.resolution
        if arr.size and (
            np.any(cell_lo + self.resolution <= lo) or np.any(cell_lo >= hi)
        ):
            raise ValueError("occupied cells must lie within bounds")
        for a in (origin, lo, hi, arr):
            a.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "bounds_lo", lo)
        object.__setattr__(self, "bounds_hi", hi)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_cell_array", arr)

    # -- constructors

    @classmethod
    def empty(cls, bounds_lo, bounds_hi, resolution: float) -> "OccupancyMap":
        return cls(resolution, np.asarray(bounds_lo, float), bounds_lo, bounds_hi, frozenset())

    @classmethod
    def from_points(cls, points, resolution: float, bounds_lo, bounds_hi) -> "OccupancyMap":
        """Voxelize a point cloud; points outside bounds are dropped."""
        origin = np.asarray(bounds_lo, dtype=float)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        keep = np.all((pts >= origin) & (pts < np.asarray(bounds_hi, float)), axis=1)
        idx = np.floor((pts[keep] - origin) / resolution).astype(int)
        return cls(resolution, origin, bounds_lo, bounds_hi, frozenset(map(tuple, idx)))

    @classmethod
    def from_boxes(cls, boxes, resolution: float, bounds_lo, bounds_hi) -> "OccupancyMap":
        """Mark every cell whose volume intersects one of the (lo, hi) boxes."""
        origin = np.asarray(bounds_lo, dtype=float)
        hi_b = np.asarray(bounds_hi, dtype=float)
        cells: set[tuple[int, int, int]] = set()
        for blo, bhi in boxes:
            blo = np.maximum(np.asarray(blo, float), origin)
            bhi = np.minimum(np.asarray(bhi, float), hi_b)
            if np.any(bhi <= blo):
                continue
            i0 = np.floor((blo - origin) / resolution).astype(int)
            i1 = np.ceil((bhi - origin) / resolution - 1e-12).astype(int)
            for ix in range(i0[0], i1[0]):
                for iy in range(i0[1], i1[1]):
                    for iz in range(i0[2], i1[2]):
                        cells.add((ix, iy, iz))
        return cls(resolution, origin, bounds_lo, bounds_hi, frozenset(cells))

    # -- text format: header lines then one "cell i j k" line per voxel

    @classmethod
    def load(cls, path) -> "OccupancyMap":
        resolution = None
        origin = lo = hi = None
        cells: set[tuple[int, int, int]] = set()
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, *vals = line.split()
            if key == "resolution":
                resolution = float(vals[0])
            elif key == "origin":
                origin = np.array([float(v) for v in vals])
            elif key == "bounds":
                lo = np.array([float(v) for v in vals[:3]])
                hi = np.array([float(v) for v in vals[3:6]])
            elif key == "cell":
                cells.add(tuple(int(v) for v in vals))
            else:
                raise ValueError(f"unknown map directive {key!r}")
        if resolution is None or origin is None or lo is None:
            raise ValueError("map file missing resolution/origin/bounds header")
        return cls(resolution, origin, lo, hi, frozenset(cells))

    def save(self, path) -> None:
        lines = [
            f"resolution {self.resolution!r}",
            "origin " + " ".join(repr(v) for v in self.origin),
            "bounds "
            + " ".join(repr(v) for v in self.bounds_lo)
            + " "
            + " ".join(repr(v) for v in self.bounds_hi),
        ]
        lines += [f"cell {i} {j} {k}" for i, j, k in sorted(self.cells)]
        Path(path).write_text("\n".join(lines) + "\n")

    # -- queries

    def in_bounds(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.bounds_lo) and np.all(p <= self.bounds_hi))

    def cell_index(self, point) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(point, float) - self.origin) / self.resolution)
        return tuple(int(v) for v in idx)

    def occupied_at(self, point) -> bool:
        return self.cell_index(point) in self.cells

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.origin + self._cell_array * self.resolution
        return lo, lo + self.resolution

    def box_intersects_occupied(self, lo, hi, margin: float = 0.0) -> bool:
        """Strict-overlap test against all occupied voxels (inflated by margin).

        Zero-measure face contact does not count as an intersection; clearance
        at the drone scale is enforced by support inflation at check time.
        """
        if not self.cells:
            return False
        clo, chi = self.cell_bounds()
        overlap = np.all(
            (np.asarray(hi, float) > clo - margin)
            & (np.asarray(lo, float) < chi + margin),
            axis=1,
        )
        return bool(np.any(overlap))

    def distance_to_occupied(self, point) -> float:
        """Signed distance from a point to the union of occupied voxels."""
        if not self.cells:
            return math.inf
        return float(self.distance_to_occupied_many(np.asarray(point, float)[None])[0])

    def distance_to_occupied_many(self, points) -> np.ndarray:
        """Signed voxel distance for a stack of points (negative inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.cells:
            return np.full(pts.shape[0], math.inf)
        clo, chi = self.cell_bounds()
        p = pts[:, None, :]
        gap = np.maximum(np.maximum(clo[None] - p, p - chi[None]), 0.0)
        outside = np.linalg.norm(gap, axis=2)
        inside = np.all((p >= clo[None]) & (p <= chi[None]), axis=2)
        depth = np.minimum(p - clo[None], chi[None] - p).min(axis=2)
        per_cell = np.where(inside, -depth, outside)
        return per_cell.min(axis=1)


def generate_corridor(
    p0,
    pf,
    occ: OccupancyMap,
    *,
    margin: float = 0.0,
    max_extent: float = 3.0,
    planar: bool = False,
) -> Polytope | None:
    """Grow an obstacle-free axis-aligned box around the segment [p0, pf].

    Faces advance one grid step at a time in the fixed order +x, -x, +y, -y,
    +z, -z and lock individually on the first blockage (occupancy, map bounds
    or the ``max_extent`` growth budget), so the result is deterministic.
    Returns None when the tight bounding box of the seed segment already
    intersects occupancy; raises ValueError for endpoints outside the map.
    """
    p0 = np.asarray(p0, dtype=float)
    pf = np.asarray(pf, dtype=float)
    if not (occ.in_bounds(p0) and occ.in_bounds(pf)):
        raise ValueError("corridor endpoints outside map bounds")
    lo = np.minimum(p0, pf).copy()
    hi = np.maximum(p0, pf).copy()
    if occ.box_intersects_occupied(lo, hi, margin):
        return None
    seed_lo, seed_hi = lo.copy(), hi.copy()
    faces = [(0, +1), (0, -1), (1, +1), (1, -1)]
    if not planar:
        faces += [(2, +1), (2, -1)]
    locked = [False] * len(faces)
    step = occ.resolution
    while not all(locked):
        for f, (axis, sign) in enumerate(faces):
            if locked[f]:
                continue
            if sign > 0:
                room = min(
                    seed_hi[axis] + max_extent - hi[axis],
                    occ.bounds_hi[axis] - hi[axis],
                )
            else:
                room = min(
                    lo[axis] - (seed_lo[axis] - max_extent),
                    lo[axis] - occ.bounds_lo[axis],
                )
            advance = min(step, room)
            if advance <= 1e-12:
                locked[f] = True
                continue
            trial_lo, trial_hi = lo.copy(), hi.copy()
            if sign > 0:
                trial_hi[axis] += advance
            else:
                trial_lo[axis] -= advance
            if occ.box_intersects_occupied(trial_lo, trial_hi, margin):
                locked[f] = True
                continue
            lo, hi = trial_lo, trial_hi
            if advance < step:
                locked[f] = True
    return Polytope.from_box(lo, hi, planar=planar)


# ---------------------------------------------------------------------------
# point-to-set distances


def point_box_distance(point, box_lo, box_hi) -> float:
    """Signed distance to an axis-aligned box (negative inside)."""
    p = np.asarray(point, dtype=float)
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    gap = np.maximum(np.maximum(lo - p, p - hi), 0.0)
    d = float(np.linalg.norm(gap))
    if d > 0.0:
        return d
    return -float(np.min(np.minimum(p - lo, hi - p)))


def _kkt_distance(q: np.ndarray, r: np.ndarray) -> float:
    """Distance from q (axis frame) to the surface of diag(r); all r finite.

    Solves the stationarity equation f(t) = sum (r_i q_i / (t + r_i^2))^2 = 1
    with a bisection-safeguarded Newton iteration, then compares against the
    degenerate candidates that appear when some q_i vanish.
    """
    inside = float(np.sum((q / r) ** 2)) <= 1.0
    active = q != 0.0
    if not np.any(active):
        return -float(np.min(r))
    rq2 = (r[active] * q[active]) ** 2
    r2 = r[active] ** 2

    def f(t: float) -> float:
        return float(np.sum(rq2 / (t + r2) ** 2)) - 1.0

    def fp(t: float) -> float:
        return float(-2.0 * np.sum(rq2 / (t + r2) ** 3))

    if inside:
        t_lo = -float(np.min(r2))
        t_hi = 0.0
        t_lo += max(1e-300, abs(t_lo)) * 1e-15
        while f(t_lo) < 0.0:  # nudge until the bracket sign holds
            t_lo = 0.5 * (t_lo + -float(np.min(r2)))
            if not math.isfinite(t_lo):
                break
    else:
        t_lo = 0.0
        t_hi = math.sqrt(float(np.sum(rq2)))
    t = 0.5 * (t_lo + t_hi)
    converged = False
    for _ in range(100):
        ft = f(t)
        if abs(ft) < 1e-14:
            converged = True
            break
        if ft > 0.0:
            t_lo = t
        else:
            t_hi = t
        d = fp(t)
        t_new = t - ft / d if d != 0.0 else 0.5 * (t_lo + t_hi)
        if not (t_lo < t_new < t_hi):
            t_new = 0.5 * (t_lo + t_hi)
        if abs(t_new - t) < 1e-15 * (1.0 + abs(t)):
            t = t_new
            converged = True
            break
        t = t_new
    if not converged and abs(f(t)) > 1e-9:
        _DISTANCE_FALLBACKS[0] += 1
        log.warning("ellipsoid distance Newton did not converge; sampling fallback")
        return _sampled_distance(q, r, inside)
    x = np.zeros_like(q)
    x[active] = r2 * q[active] / (t + r2)
    best = float(np.linalg.norm(x - q))
    if inside:
        # interior points with zero components can project onto an axis plane
        for j in np.flatnonzero(~active):
            tj = -r[j] ** 2
            denom = r[active] ** 2 + tj
            if np.any(denom == 0.0):
                continue
            xi = r2 * q[active] / denom
            rest = 1.0 - float(np.sum((xi / r[active]) ** 2))
            if rest < 0.0:
                continue
            cand = np.zeros_like(q)
            cand[active] = xi
            cand[j] = r[j] * math.sqrt(rest)
            best = min(best, float(np.linalg.norm(cand - q)))
    return -best if inside else best


def _sampled_distance(q: np.ndarray, r: np.ndarray, inside: bool) -> float:
    if q.size == 2:
        ang = np.linspace(0.0, 2.0 * math.pi, 4096, endpoint=False)
        pts = np.stack([r[0] * np.cos(ang), r[1] * np.sin(ang)], axis=1)
    else:
        n = 20000
        k = np.arange(n)
        phi = math.pi * (3.0 - math.sqrt(5.0)) * k
        cz = 1.0 - 2.0 * (k + 0.5) / n
        sz = np.sqrt(1.0 - cz**2)
        pts = np.stack([r[0] * sz * np.cos(phi), r[1] * sz * np.sin(phi), r[2] * cz], axis=1)
    d = float(np.min(np.linalg.norm(pts - q, axis=1)))
    return -d if inside else d


def point_ellipsoid_distance(point, center, e: Ellipsoid) -> float:
    """Euclidean distance from a point to the ellipsoid surface.

    Negative inside.  Planar ellipsoids (infinite z) reduce to the 2-D
    problem in the xy plane.  Equal-axis shapes short-circuit to the sphere
    formula.
    """
    q3 = np.asarray(point, dtype=float) - np.asarray(center, dtype=float)
    axes = np.array(e.semi_axes)
    if e.is_planar:
        q = q3[:2]
        r = axes[:2]
    else:
        q = q3
        r = axes
    if np.all(r == r[0]):
        return float(np.linalg.norm(q)) - float(r[0])
    return _kkt_distance(q, r)


def point_ellipsoid_distance_many(points, center, e: Ellipsoid) -> np.ndarray:
    """Vectorized distance for many points; fast path for spheres."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.asarray(center, dtype=float)
    axes = np.array(e.semi_axes)
    if e.is_planar:
        d = pts[:, :2] - c[:2]
        r = axes[:2]
    else:
        d = pts - c
        r = axes
    if np.all(r == r[0]):
        return np.linalg.norm(d, axis=1) - r[0]
    return np.array([_kkt_distance(row, r) for row in d])
