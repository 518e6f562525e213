"""Foundational types: points, ground metrics, and discrete distributions.

Everything downstream (transport solvers, LFD programs, detectors) works with
finitely supported distributions. Values are immutable after construction and
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# Weight vectors must sum to 1 within this tolerance to be accepted as-is.
WEIGHT_SUM_ATOL = 1e-12
# Sums off by more than WEIGHT_SUM_ATOL but within this bound are silently
# renormalized; anything worse is rejected.
WEIGHT_RENORM_ATOL = 1e-9


class InvalidInputError(ValueError):
    """Raised when user-supplied data violates a documented precondition."""


class DimensionMismatchError(InvalidInputError):
    """Raised when points of different dimensions are mixed."""


class InfeasibleError(RuntimeError):
    """Raised when an optimization problem has no feasible solution."""


class NumericalError(RuntimeError):
    """Raised when a solver fails to converge or returns an unusable answer."""


class DetectorStateError(RuntimeError):
    """Raised on misuse of a sequential detector (e.g. update after stop)."""


@dataclass(frozen=True)
class Point:
    """A point in the sample space, a finite real vector of dimension >= 1."""

    coords: tuple[float, ...]

    def __init__(self, *coords: float):
        if len(coords) == 1 and isinstance(coords[0], (tuple, list, np.ndarray)):
            coords = tuple(float(c) for c in coords[0])
        else:
            coords = tuple(float(c) for c in coords)
        if not coords:
            raise InvalidInputError("a point needs at least one coordinate")
        if not all(np.isfinite(c) for c in coords):
            raise InvalidInputError(f"point coordinates must be finite, got {coords}")
        object.__setattr__(self, "coords", coords)

    @property
    def dimension(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)


def as_point_matrix(points, expected_dim: int | None = None) -> np.ndarray:
    """Convert point-likes (Point, scalar, sequence, or array) to a (k, d) matrix.

    Scalars are treated as one-dimensional points. Raises on empty input,
    non-finite values, or ragged/mismatched dimensions.
    """
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.size == 0:
            raise InvalidInputError("expected a nonempty 1-D or 2-D array of points")
    else:
        rows = []
        for p in points:
            if isinstance(p, Point):
                rows.append(p.as_array())
            elif np.isscalar(p):
                rows.append(np.asarray([p], dtype=float))
            else:
                rows.append(np.asarray(p, dtype=float).ravel())
        if not rows:
            raise InvalidInputError("expected a nonempty list of points")
        dims = {r.size for r in rows}
        if len(dims) != 1:
            raise DimensionMismatchError(f"points have mixed dimensions {sorted(dims)}")
        arr = np.vstack(rows)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    if expected_dim is not None and arr.shape[1] != expected_dim:
        raise DimensionMismatchError(
            f"expected dimension {expected_dim}, got {arr.shape[1]}"
        )
    return arr


class GroundMetric(Enum):
    """Ground cost c(x, y) on the sample space; a true metric for each order."""

    L1 = "l1"
    L2 = "l2"
    LINF = "linf"

    def cost(self, x, y) -> float:
        """Metric value between two points; zero iff the points coincide."""
        xa = _as_single_point(x)
        ya = _as_single_point(y)
        if xa.size != ya.size:
            raise DimensionMismatchError(
                f"points have dimensions {xa.size} and {ya.size}"
            )
        d = xa - ya
        if self is GroundMetric.L1:
            return float(np.abs(d).sum())
        if self is GroundMetric.L2:
            return float(np.sqrt((d * d).sum()))
        return float(np.abs(d).max())

    def pairwise(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Cost matrix with entry (l, m) = c(A[l], B[m])."""
        A = as_point_matrix(A)
        B = as_point_matrix(B)
        if A.shape[1] != B.shape[1]:
            raise DimensionMismatchError(
                f"point sets have dimensions {A.shape[1]} and {B.shape[1]}"
            )
        diff = A[:, None, :] - B[None, :, :]
        if self is GroundMetric.L1:
            return np.abs(diff).sum(axis=2)
        if self is GroundMetric.L2:
            return np.sqrt((diff * diff).sum(axis=2))
        return np.abs(diff).max(axis=2)


def _as_single_point(x) -> np.ndarray:
    if isinstance(x, Point):
        return x.as_array()
    if np.isscalar(x):
        return np.asarray([x], dtype=float)
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidInputError("empty point")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr


def ground_cost(metric: GroundMetric, x, y) -> float:
    """Ground metric value between two points of equal dimension."""
    return metric.cost(x, y)


def cost_matrix(metric: GroundMetric, A, B) -> np.ndarray:
    """Pairwise ground costs between two point sets sharing a dimension."""
    return metric.pairwise(A, B)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported probability distribution.

    support: (k, d) matrix of pairwise-distinct points.
    weights: length-k probability vector (nonnegative, sums to 1).
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = as_point_matrix(self.support)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if weights.size != support.shape[0]:
            raise InvalidInputError(
                f"{support.shape[0]} support points but {weights.size} weights"
            )
        if not np.all(np.isfinite(weights)):
            raise InvalidInputError("weights must be finite")
        if np.any(weights < -WEIGHT_SUM_ATOL):
            raise InvalidInputError(f"negative weight {weights.min()}")
        weights = np.maximum(weights, 0.0)
        total = weights.sum()
        if abs(total - 1.0) > WEIGHT_RENORM_ATOL:
            raise InvalidInputError(f"weights sum to {total!r}, not 1")
        if abs(total - 1.0) > WEIGHT_SUM_ATOL:
            weights = weights / total
        if _has_duplicate_rows(support):
            raise InvalidInputError("support points must be pairwise distinct")
        support = support.copy()
        weights = weights.copy()
        support.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @property
    def dimension(self) -> int:
        return self.support.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def points(self) -> list[Point]:
        return [Point(tuple(row)) for row in self.support]

    def expectation(self, f: np.ndarray) -> float:
        """Expectation of a function given by its values on the support."""
        f = np.asarray(f, dtype=float).ravel()
        if f.size != self.size:
            raise InvalidInputError(f"expected {self.size} values, got {f.size}")
        return float(self.weights @ f)


def _has_duplicate_rows(arr: np.ndarray) -> bool:
    return np.unique(arr, axis=0).shape[0] != arr.shape[0]


def merge_duplicate_points(arr: np.ndarray, weights: np.ndarray):
    """Merge exactly-equal rows, summing weights; first-occurrence order kept."""
    seen: dict[bytes, int] = {}
    out_rows = []
    out_w = []
    for row, w in zip(arr, weights):
        key = row.tobytes()
        if key in seen:
            out_w[seen[key]] += w
        else:
            seen[key] = len(out_rows)
            out_rows.append(row)
            out_w.append(w)
    return np.vstack(out_rows), np.asarray(out_w, dtype=float)


def empirical_from_samples(samples) -> DiscreteDistribution:
    """Empirical distribution of a sample: weight (multiplicity)/n per point.

    Duplicate sample points are merged into a single support atom.
    """
    arr = as_point_matrix(samples)
    n = arr.shape[0]
    support, counts = merge_duplicate_points(arr, np.ones(n))
    return DiscreteDistribution(support=support, weights=counts / n)


@dataclass(frozen=True)
class AmbiguitySpec:
    """A ball of distributions around a nominal under a ground metric."""

    nominal: DiscreteDistribution
    radius: float
    metric: GroundMetric

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InvalidInputError(f"radius must be >= 0, got {self.radius}")
