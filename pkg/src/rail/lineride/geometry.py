"""
This module implements the curve and orientation mathematics shared by the
guideline, trajectory optimisation and environment modules:

- cubic Hermite segments and chains, evaluated and differentiated
  analytically,
- dense sampling of a chain with the empirical (chord-sum) cumulative
  arc-length, and
- unit quaternions in scalar-first order with the geodesic angle metric.

Positions are `numpy` arrays of shape `(3,)` in metres. The lateral axis is
`y`, pointing to the left of the robot, so that a positive pitch lowers the
nose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import ArrayLike, NDArray

__all__ = [
    "DenseSampling",
    "HermiteSegment",
    "UnitQuaternion",
    "as_vec3",
    "hermite_chain",
    "hermite_eval",
    "hermite_tangent",
    "quat_angle",
    "quat_conjugate",
    "quat_from_pitch",
    "quat_multiply",
    "quat_to_pitch",
    "sample_dense",
    "wrap_angle",
]

UNIT_NORM_TOLERANCE = 1e-6
"""Maximum norm deviation accepted for a unit quaternion."""


def as_vec3(value: ArrayLike) -> NDArray:
    """Convert input to a finite float64 vector of shape `(3,)`."""
    vec = np.asarray(value, dtype=np.float64)
    if vec.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector components must be finite")
    return vec


@dataclass(frozen=True)
class HermiteSegment:
    """
    Cubic Hermite segment between two end points with prescribed tangents.

    Parameters
    ----------
    x0, x1 : array-like
        Start and end point.
    m0, m1 : array-like
        Tangents (derivatives with respect to the curve parameter) at the
        start and end point.
    """

    x0: NDArray
    x1: NDArray
    m0: NDArray
    m1: NDArray

    def __post_init__(self) -> None:
        for name in ("x0", "x1", "m0", "m1"):
            object.__setattr__(self, name, as_vec3(getattr(self, name)))

    @property
    def coefficients(self) -> NDArray:
        """Stacked `(x0, m0, x1, m1)` as array of shape `(4, 3)`."""
        return np.stack([self.x0, self.m0, self.x1, self.m1])


def _check_parameter(u: ArrayLike) -> NDArray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0.0) or np.any(u > 1.0) or not np.all(np.isfinite(u)):
        raise ValueError("curve parameter must be in [0, 1]")
    return u


def _basis(u: NDArray) -> NDArray:
    u2 = u * u
    u3 = u2 * u
    return np.stack(
        [2.0 * u3 - 3.0 * u2 + 1.0, u3 - 2.0 * u2 + u, -2.0 * u3 + 3.0 * u2, u3 - u2],
        axis=-1,
    )


def _basis_derivative(u: NDArray) -> NDArray:
    u2 = u * u
    return np.stack(
        [6.0 * u2 - 6.0 * u, 3.0 * u2 - 4.0 * u + 1.0, -6.0 * u2 + 6.0 * u, 3.0 * u2 - 2.0 * u],
        axis=-1,
    )


def hermite_eval(seg: HermiteSegment, u: ArrayLike) -> NDArray:
    """
    Evaluate a Hermite segment at curve parameter(s) `u`.

    Parameters
    ----------
    seg : HermiteSegment
        The segment to evaluate.
    u : float or array-like
        Curve parameter(s) in `[0, 1]`.

    Returns
    -------
    NDArray
        Point(s) on the curve, shape `(3,)` for scalar input, otherwise
        `u.shape + (3,)`.

    Raises
    ------
    ValueError
        If any parameter lies outside `[0, 1]`.
    """
    u = _check_parameter(u)
    return _basis(u) @ seg.coefficients


def hermite_tangent(seg: HermiteSegment, u: ArrayLike) -> NDArray:
    """Analytic derivative `dp/du` of a Hermite segment, see `hermite_eval`."""
    u = _check_parameter(u)
    return _basis_derivative(u) @ seg.coefficients


def hermite_chain(
    points: Sequence[ArrayLike], tangents: Sequence[ArrayLike]
) -> list[HermiteSegment]:
    """
    Join control points with prescribed tangents into a C0 chain of segments.

    Segment `i` runs from `points[i]` to `points[i+1]` with tangents
    `tangents[i]` and `tangents[i+1]`, hence the chain is C1 wherever the
    tangents are shared.
    """
    if len(points) < 2:
        raise ValueError("a chain requires at least two control points")
    if len(points) != len(tangents):
        raise ValueError("number of tangents must match the number of points")
    return [
        HermiteSegment(points[i], points[i + 1], tangents[i], tangents[i + 1])
        for i in range(len(points) - 1)
    ]


@dataclass(frozen=True)
class DenseSampling:
    """
    Densely sampled curve with its empirical cumulative arc-length.

    Parameters
    ----------
    points : NDArray
        Sample points, shape `(n, 3)`.
    cum_lengths : NDArray
        Cumulative chord length up to each point, shape `(n,)`, starting at 0.
    """

    points: NDArray
    cum_lengths: NDArray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        cum = np.asarray(self.cum_lengths, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("points must have shape (n, 3)")
        if len(points) != len(cum):
            raise ValueError("points and cumulative lengths differ in length")
        if len(cum) == 0 or cum[0] != 0.0 or np.any(np.diff(cum) < 0.0):
            raise ValueError("cumulative lengths must start at 0 and be non-decreasing")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "cum_lengths", cum)

    def __len__(self) -> int:
        return len(self.cum_lengths)

    @property
    def total_length(self) -> float:
        return float(self.cum_lengths[-1])


def sample_dense(seg_chain: Sequence[HermiteSegment], n: int = 1000) -> DenseSampling:
    """
    Sample a chain of Hermite segments at uniform parameter spacing.

    The global parameter `s` runs over `[0, K]` for `K` segments, segment
    `i` covering `[i, i+1]`, so the points are evenly spread in parameter
    (not in arc-length). The cumulative lengths are the sum of chord lengths
    between consecutive samples.

    Parameters
    ----------
    seg_chain : list of HermiteSegment
        The chain to sample, must not be empty.
    n : int, optional
        Number of samples, at least 2.

    Returns
    -------
    DenseSampling
        The sample points and their cumulative arc-length.
    """
    if len(seg_chain) == 0:
        raise ValueError("cannot sample an empty chain")
    if n < 2:
        raise ValueError("at least two samples are required")

    num_seg = len(seg_chain)
    s = np.linspace(0.0, float(num_seg), n)
    index = np.minimum(np.floor(s).astype(int), num_seg - 1)
    u = np.clip(s - index, 0.0, 1.0)

    coeffs = np.stack([seg.coefficients for seg in seg_chain])  # (K, 4, 3)
    points = np.einsum("nk,nkd->nd", _basis(u), coeffs[index])

    chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum_lengths = np.concatenate([[0.0], np.cumsum(chords)])
    return DenseSampling(points, cum_lengths)


class UnitQuaternion(NamedTuple):
    """Rotation as unit quaternion in scalar-first order `(w, x, y, z)`."""

    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def normalized(cls, values: ArrayLike) -> UnitQuaternion:
        """Create a quaternion from four (not necessarily normalised) values."""
        q = np.asarray(values, dtype=np.float64)
        norm = np.linalg.norm(q)
        if q.shape != (4,) or not np.isfinite(norm) or norm == 0.0:
            raise ValueError("cannot normalise quaternion")
        if abs(norm - 1.0) < 1e-12:  # keep unit input bit-identical
            return cls(*q.tolist())
        return cls(*(q / norm).tolist())


def _as_unit(q: ArrayLike) -> NDArray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"expected a quaternion of shape (4,), got {q.shape}")
    if abs(np.linalg.norm(q) - 1.0) > UNIT_NORM_TOLERANCE:
        raise ValueError("quaternion is not normalised")
    return q


def quat_angle(qa: ArrayLike, qb: ArrayLike) -> float:
    """
    Geodesic angle between two rotations, `2 arccos(|qa . qb|)`.

    The absolute value of the dot product makes the metric invariant to the
    sign of either quaternion. The result lies in `[0, pi]`.

    Raises
    ------
    ValueError
        If any input deviates from unit norm by more than 1e-6.
    """
    dot = float(np.dot(_as_unit(qa), _as_unit(qb)))
    return 2.0 * float(np.arccos(np.clip(abs(dot), -1.0, 1.0)))


def quat_from_pitch(theta: float) -> UnitQuaternion:
    """Rotation by `theta` (radian) about the lateral (`y`) axis."""
    half = 0.5 * float(theta)
    return UnitQuaternion(float(np.cos(half)), 0.0, float(np.sin(half)), 0.0)


def quat_to_pitch(q: ArrayLike) -> float:
    """Pitch angle in `[-pi, pi)` of a rotation about the lateral axis."""
    w, _, y, _ = _as_unit(q)
    return wrap_angle(2.0 * float(np.arctan2(y, w)))


def wrap_angle(angle: float) -> float:
    """Wrap an angle (radian) into `[-pi, pi)`."""
    return float(np.remainder(angle + np.pi, 2.0 * np.pi) - np.pi)


def quat_multiply(qa: ArrayLike, qb: ArrayLike) -> UnitQuaternion:
    """Hamilton product `qa * qb`."""
    w1, x1, y1, z1 = np.asarray(qa, dtype=np.float64)
    w2, x2, y2, z2 = np.asarray(qb, dtype=np.float64)
    return UnitQuaternion.normalized(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: ArrayLike) -> UnitQuaternion:
    """Inverse rotation of a unit quaternion."""
    w, x, y, z = _as_unit(q)
    return UnitQuaternion(float(w), float(-x), float(-y), float(-z))
