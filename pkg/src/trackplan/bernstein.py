"""Bernstein-form polynomial algebra and conservative sign certificates.

A scalar segment stores Bernstein coefficients on a fixed window [0, T]; a
3-D curve is three segments sharing degree and window.  Every feasibility
test downstream reduces to coefficient arithmetic plus two facts: a segment
whose coefficients are all nonnegative is nonnegative everywhere, and a
curve never leaves the convex hull of its control points.  The converse is
false, so a failed coefficient test proves nothing (``UNKNOWN``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

EPS_CERT = 1e-12
"""Absolute slack applied to coefficient sign tests."""


class Certificate(enum.Enum):
    """Outcome of a conservative coefficient-level test.

    ``PROVED`` guarantees the continuous-time property.  ``UNKNOWN`` carries
    no information: the property may or may not hold.
    """

    PROVED = "proved"
    UNKNOWN = "unknown"

    def __bool__(self) -> bool:
        return self is Certificate.PROVED


def _certificate(ok: bool) -> Certificate:
    return Certificate.PROVED if ok else Certificate.UNKNOWN


# ---------------------------------------------------------------------------
# cached operator tables


@lru_cache(maxsize=None)
def binomial_row(n: int) -> np.ndarray:
    """C(n, 0..n) as floats, computed from exact integers."""
    return np.array([math.comb(n, k) for k in range(n + 1)], dtype=float)


@lru_cache(maxsize=None)
def product_matrix(n: int, m: int) -> np.ndarray:
    """Flattened ((n+1)(m+1), n+m+1) map from coefficient outer products to
    product coefficients: ``c = outer(a, b).ravel() @ product_matrix(n, m)``.

    Entry (i, j) -> k = i + j carries C(n,i) C(m,j) / C(n+m,k), which is <= 1,
    so the contraction is numerically tame even at degree 20+.
    """
    bn, bm, bnm = binomial_row(n), binomial_row(m), binomial_row(n + m)
    w = np.zeros((n + 1, m + 1, n + m + 1))
    for i in range(n + 1):
        for j in range(m + 1):
            w[i, j, i + j] = bn[i] * bm[j] / bnm[i + j]
    return w.reshape((n + 1) * (m + 1), n + m + 1)


@lru_cache(maxsize=None)
def elevation_matrix(n: int, target: int) -> np.ndarray:
    """(target+1, n+1) linear map lifting degree n to degree ``target``.

    Built by repeating the single-step rule b'_i = (i/(n+1)) a_{i-1}
    + (1 - i/(n+1)) a_i, which preserves the polynomial exactly.
    """
    if target < n:
        raise ValueError(f"target degree {target} below current degree {n}")
    e = np.eye(n + 1)
    for d in range(n, target):
        step = np.zeros((d + 2, d + 1))
        for i in range(d + 2):
            w = i / (d + 1)
            if i > 0:
                step[i, i - 1] += w
            if i <= d:
                step[i, i] += 1.0 - w
        e = step @ e
    return e


@lru_cache(maxsize=None)
def difference_matrix(n: int) -> np.ndarray:
    """(n, n+1) forward-difference map; scale by n/T for the derivative."""
    d = np.zeros((n, n + 1))
    for i in range(n):
        d[i, i] = -1.0
        d[i, i + 1] = 1.0
    return d


def split_matrices(n: int, u: float) -> tuple[np.ndarray, np.ndarray]:
    """de Casteljau split operators at ratio ``u`` in (0, 1).

    Returns (L, R) with left coefficients ``L @ c`` on [0, uT] and right
    coefficients ``R @ c`` on [uT, T].
    """
    left = np.zeros((n + 1, n + 1))
    right = np.zeros((n + 1, n + 1))
    tri = np.eye(n + 1)
    left[0] = tri[0]
    right[n] = tri[-1]
    for k in range(1, n + 1):
        tri = (1.0 - u) * tri[:-1] + u * tri[1:]
        left[k] = tri[0]
        right[n - k] = tri[-1]
    return left, right


# ---------------------------------------------------------------------------
# scalar segments


@dataclass(frozen=True)
class PolySegment:
    """Scalar polynomial in Bernstein form on the window [0, horizon]."""

    coeffs: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if coeffs.ndim != 1 or coeffs.size < 1:
            raise ValueError("coeffs must be a non-empty 1-D array")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        horizon = float(self.horizon)
        if not (math.isfinite(horizon) and horizon > 0.0):
            raise ValueError(f"horizon must be positive and finite, got {horizon}")
        coeffs = coeffs.copy()
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "horizon", horizon)

    @property
    def degree(self) -> int:
        return self.coeffs.size - 1

    def _ratios(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise ValueError(f"time outside [0, {self.horizon}]")
        return t / self.horizon

    def evaluate(self, t: float) -> float:
        """Value at time t via de Casteljau (numerically stable)."""
        u = float(self._ratios(t))
        beta = np.array(self.coeffs)
        for _ in range(self.degree):
            beta = (1.0 - u) * beta[:-1] + u * beta[1:]
        return float(beta[0])

    def evaluate_many(self, t) -> np.ndarray:
        """Vectorized de Casteljau over an array of times."""
        u = np.atleast_1d(self._ratios(t))
        beta = np.repeat(self.coeffs[:, None], u.size, axis=1)
        for _ in range(self.degree):
            beta = (1.0 - u) * beta[:-1] + u * beta[1:]
        return beta[0]

    def derivative(self) -> "PolySegment":
        """Derivative segment of degree n-1 (degree 0 maps to the zero segment)."""
        n = self.degree
        if n == 0:
            return PolySegment(np.zeros(1), self.horizon)
        return PolySegment(n / self.horizon * np.diff(self.coeffs), self.horizon)

    def elevate(self, target_degree: int) -> "PolySegment":
        """Same polynomial re-expressed at a higher degree."""
        if target_degree < self.degree:
            raise ValueError(
                f"target degree {target_degree} below degree {self.degree}"
            )
        if target_degree == self.degree:
            return self
        return PolySegment(
            elevation_matrix(self.degree, target_degree) @ self.coeffs, self.horizon
        )

    def multiply(self, other: "PolySegment") -> "PolySegment":
        """Exact product; degree adds."""
        if self.horizon != other.horizon:
            raise ValueError("horizon mismatch in product")
        outer = np.outer(self.coeffs, other.coeffs).ravel()
        return PolySegment(
            outer @ product_matrix(self.degree, other.degree), self.horizon
        )

    def split_at(self, s: float) -> tuple["PolySegment", "PolySegment"]:
        """de Casteljau subdivision at interior time s in (0, T)."""
        if not (0.0 < s < self.horizon):
            raise ValueError(f"split time {s} outside (0, {self.horizon})")
        u = s / self.horizon
        beta = np.array(self.coeffs)
        left = [beta[0]]
        right = [beta[-1]]
        for _ in range(self.degree):
            beta = (1.0 - u) * beta[:-1] + u * beta[1:]
            left.append(beta[0])
            right.append(beta[-1])
        return (
            PolySegment(np.array(left), s),
            PolySegment(np.array(right[::-1]), self.horizon - s),
        )

    def definite_integral(self) -> float:
        """Integral over [0, T]: (T/(n+1)) sum of coefficients."""
        return self.horizon / (self.degree + 1) * float(np.sum(self.coeffs))

    def prove_nonnegative(self) -> Certificate:
        """PROVED iff min coefficient >= -EPS_CERT.

        Since the basis is a partition of unity, PROVED implies
        p(t) >= -EPS_CERT on the whole window.  UNKNOWN is not a proof of
        negativity.
        """
        return _certificate(float(np.min(self.coeffs)) >= -EPS_CERT)

    # arithmetic used to assemble check polynomials; degree-matched on purpose
    def __add__(self, other):
        if isinstance(other, PolySegment):
            self._check_compatible(other)
            return PolySegment(self.coeffs + other.coeffs, self.horizon)
        return PolySegment(self.coeffs + float(other), self.horizon)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, PolySegment):
            self._check_compatible(other)
            return PolySegment(self.coeffs - other.coeffs, self.horizon)
        return PolySegment(self.coeffs - float(other), self.horizon)

    def __rsub__(self, other):
        return PolySegment(float(other) - self.coeffs, self.horizon)

    def __mul__(self, scalar):
        if isinstance(scalar, PolySegment):
            return self.multiply(scalar)
        return PolySegment(self.coeffs * float(scalar), self.horizon)

    __rmul__ = __mul__

    def __neg__(self):
        return PolySegment(-self.coeffs, self.horizon)

    def _check_compatible(self, other: "PolySegment") -> None:
        if self.degree != other.degree:
            raise ValueError(
                f"degree mismatch {self.degree} != {other.degree}; elevate first"
            )
        if self.horizon != other.horizon:
            raise ValueError("horizon mismatch")


# ---------------------------------------------------------------------------
# 3-D curves


@dataclass(frozen=True)
class Curve3:
    """Three scalar segments (x, y, z) sharing degree and window."""

    x: PolySegment
    y: PolySegment
    z: PolySegment

    def __post_init__(self) -> None:
        if not (self.x.degree == self.y.degree == self.z.degree):
            raise ValueError("components must share degree")
        if not (self.x.horizon == self.y.horizon == self.z.horizon):
            raise ValueError("components must share horizon")

    @classmethod
    def from_control_points(cls, points, horizon: float) -> "Curve3":
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("control points must have shape (n+1, 3)")
        return cls(
            PolySegment(points[:, 0], horizon),
            PolySegment(points[:, 1], horizon),
            PolySegment(points[:, 2], horizon),
        )

    @property
    def degree(self) -> int:
        return self.x.degree

    @property
    def horizon(self) -> float:
        return self.x.horizon

    @property
    def components(self) -> tuple[PolySegment, PolySegment, PolySegment]:
        return (self.x, self.y, self.z)

    def control_points(self) -> np.ndarray:
        return np.stack([self.x.coeffs, self.y.coeffs, self.z.coeffs], axis=1)

    def evaluate(self, t: float) -> np.ndarray:
        return np.array([c.evaluate(t) for c in self.components])

    def evaluate_many(self, t) -> np.ndarray:
        return np.stack([c.evaluate_many(t) for c in self.components], axis=1)

    def derivative(self) -> "Curve3":
        return Curve3(*(c.derivative() for c in self.components))

    def elevate(self, target_degree: int) -> "Curve3":
        return Curve3(*(c.elevate(target_degree) for c in self.components))

    def split_at(self, s: float) -> tuple["Curve3", "Curve3"]:
        parts = [c.split_at(s) for c in self.components]
        return Curve3(*(p[0] for p in parts)), Curve3(*(p[1] for p in parts))

    def __sub__(self, other: "Curve3") -> "Curve3":
        return Curve3(*(a - b for a, b in zip(self.components, other.components)))

    def __add__(self, other: "Curve3") -> "Curve3":
        return Curve3(*(a + b for a, b in zip(self.components, other.components)))


def weighted_sqnorm(curve: Curve3, weights) -> PolySegment:
    """w_x x(t)^2 + w_y y(t)^2 + w_z z(t)^2 as a degree-2n segment.

    Infinite semi-axes are encoded upstream as zero weights, which drops the
    corresponding axis from the norm.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (3,):
        raise ValueError("weights must be length 3")
    if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    acc = None
    for w, comp in zip(weights, curve.components):
        term = comp.multiply(comp) * w
        acc = term if acc is None else acc + term
    return acc


def weighted_dot(a: Curve3, b: Curve3, weights) -> PolySegment:
    """sum_i w_i a_i(t) b_i(t); degrees of a and b may differ."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (3,):
        raise ValueError("weights must be length 3")
    acc = None
    for w, ca, cb in zip(weights, a.components, b.components):
        term = ca.multiply(cb) * w
        acc = term if acc is None else acc + term
    return acc


def cross_z(a: Curve3, b: Curve3) -> PolySegment:
    """z-component of a(t) x b(t), i.e. a_x b_y - a_y b_x."""
    return a.x.multiply(b.y) - a.y.multiply(b.x)


def rational_range_check(
    num: PolySegment, den: PolySegment, lo: float, hi: float
) -> Certificate:
    """Certify lo <= num(t)/den(t) <= hi on the shared window.

    PROVED requires den provably positive plus sign proofs of hi*den - num
    and num - lo*den; all three are coefficient tests, so the result is
    conservative in the same sense as :meth:`PolySegment.prove_nonnegative`.
    """
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if num.degree != den.degree:
        raise ValueError("numerator/denominator degree mismatch; elevate first")
    if num.horizon != den.horizon:
        raise ValueError("horizon mismatch")
    ok = (
        den.prove_nonnegative()
        and (hi * den - num).prove_nonnegative()
        and (num - lo * den).prove_nonnegative()
    )
    return _certificate(bool(ok))


# ---------------------------------------------------------------------------
# batched kernels over stacks of control points
#
# Shapes follow the convention (N primitives, degree+1 coefficients, axes).
# These reproduce the scalar operations bit-for-bit per row, which keeps
# results independent of how a batch is tiled across workers.


def batch_elevate(points: np.ndarray, target_degree: int) -> np.ndarray:
    """(N, n+1, k) -> (N, target+1, k) exact degree elevation."""
    n = points.shape[1] - 1
    if target_degree == n:
        return points
    return np.matmul(elevation_matrix(n, target_degree), points)


def batch_derivative(points: np.ndarray, horizon: float) -> np.ndarray:
    """(N, n+1, k) control points of the derivative, scaled by n/T."""
    n = points.shape[1] - 1
    return n / horizon * (points[:, 1:] - points[:, :-1])


def batch_split(points: np.ndarray, ratio: float) -> tuple[np.ndarray, np.ndarray]:
    """de Casteljau split of a stack of curves at a fixed ratio."""
    n = points.shape[1] - 1
    left, right = split_matrices(n, ratio)
    return np.matmul(left, points), np.matmul(right, points)


def batch_weighted_sqnorm(delta: np.ndarray, weights) -> np.ndarray:
    """Coefficients of sum_a w_a delta_a(t)^2 for a (N, n+1, k) stack."""
    n = delta.shape[1] - 1
    weights = np.asarray(weights, dtype=float)
    prod = delta[:, :, None, :] * delta[:, None, :, :]
    flat = (prod @ weights).reshape(delta.shape[0], (n + 1) * (n + 1))
    return flat @ product_matrix(n, n)


def batch_weighted_dot(left: np.ndarray, right: np.ndarray, weights) -> np.ndarray:
    """Coefficients of sum_a w_a left_a(t) right_a(t).

    ``left`` is (N, n+1, k); ``right`` is (m+1, k) shared across the batch or
    (N, m+1, k) per primitive.
    """
    n = left.shape[1] - 1
    m = right.shape[-2] - 1
    weights = np.asarray(weights, dtype=float)
    if right.ndim == 2:
        prod = left[:, :, None, :] * right[None, None, :, :]
    else:
        prod = left[:, :, None, :] * right[:, None, :, :]
    return (prod @ weights).reshape(left.shape[0], -1) @ product_matrix(n, m)


def batch_cross_z(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coefficients of the z-component of a(t) x b(t) for (N, ., 3) stacks."""
    n = a.shape[1] - 1
    m = b.shape[1] - 1
    prod = (
        a[:, :, None, 0] * b[:, None, :, 1] - a[:, :, None, 1] * b[:, None, :, 0]
    )
    return prod.reshape(a.shape[0], -1) @ product_matrix(n, m)
