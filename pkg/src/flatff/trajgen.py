"""Reference trajectory generation with analytic derivatives up to snap.

Provides rest-to-rest degree-7 polynomial segments, uniform-rate circle and
figure-8 primitives, per-derivative maxima, and CSV export of sampled
trajectories.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

#: Number of position derivatives carried by a TrajectoryPoint (vel..snap).
N_DERIVS = 4

_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class TrajectoryPoint:
    """Flat output (position) and its first four time derivatives at time t.

    All vectors are 3-element world-frame arrays in SI units.
    """

    t: float
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    jerk: np.ndarray
    snap: np.ndarray

    def derivative(self, order: int) -> np.ndarray:
        """Return the order-th derivative of position (0 = position)."""
        return (self.pos, self.vel, self.acc, self.jerk, self.snap)[order]


@dataclass(frozen=True)
class PolySegment:
    """Single polynomial segment of degree <= 7, one row of coefficients per axis.

    Args:
        coeffs: (3, 8) array of per-axis coefficients in ascending degree.
        duration: segment duration in seconds, > 0.
    """

    coeffs: np.ndarray
    duration: float
    _deriv_coeffs: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (3, 8):
            raise ValueError(f"coeffs must have shape (3, 8), got {coeffs.shape}")
        if not self.duration > 0.0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        object.__setattr__(self, "coeffs", coeffs)
        # Precompute coefficient rows for derivatives 0..4 (ascending degree),
        # kept as nested float tuples for fast scalar Horner evaluation.
        ders = [coeffs]
        for _ in range(N_DERIVS):
            prev = ders[-1]
            order = np.arange(1, prev.shape[1])
            ders.append(prev[:, 1:] * order)
        object.__setattr__(
            self,
            "_deriv_coeffs",
            tuple(tuple(tuple(float(v) for v in axis) for axis in d) for d in ders),
        )


def fit_rest_to_rest_poly(
    start_pos: Sequence[float], end_pos: Sequence[float], duration: float
) -> PolySegment:
    """Fit a degree-7 polynomial that moves between two rest states.

    Position matches the endpoints; velocity, acceleration and jerk are zero
    at both ends. Each axis is solved independently from the 8x8
    boundary-condition system.

    Args:
        start_pos: 3-vector start position [m].
        end_pos: 3-vector end position [m].
        duration: segment time [s], > 0.

    Raises:
        ValueError: if duration is not positive.
    """
    if not duration > 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    start = np.asarray(start_pos, dtype=float).reshape(3)
    end = np.asarray(end_pos, dtype=float).reshape(3)

    A = np.zeros((8, 8))
    for k in range(4):  # derivative order at t = 0
        A[k, k] = _falling_factorial(k, k)
    for k in range(4):  # derivative order at t = duration
        for i in range(k, 8):
            A[4 + k, i] = _falling_factorial(i, k) * duration ** (i - k)
    rhs = np.zeros((8, 3))
    rhs[0] = start
    rhs[4] = end
    coeffs = np.linalg.solve(A, rhs).T
    return PolySegment(coeffs=coeffs, duration=duration)


def _falling_factorial(i: int, k: int) -> float:
    """i * (i-1) * ... * (i-k+1); the t^i coefficient factor of the k-th derivative."""
    out = 1.0
    for j in range(k):
        out *= i - j
    return out


def eval_poly(seg: PolySegment, t: float) -> TrajectoryPoint:
    """Evaluate a polynomial segment and its derivatives analytically at time t.

    Raises:
        ValueError: if t lies outside [0, duration] beyond a 1e-9 s tolerance.
    """
    if t < -_BOUNDARY_EPS or t > seg.duration + _BOUNDARY_EPS:
        raise ValueError(f"t={t} outside segment [0, {seg.duration}]")
    t = min(max(float(t), 0.0), seg.duration)
    vals = []
    for order_coeffs in seg._deriv_coeffs:
        row = []
        for axis_coeffs in order_coeffs:
            acc = 0.0
            for cj in reversed(axis_coeffs):
                acc = acc * t + cj
            row.append(acc)
        vals.append(np.array(row))
    return TrajectoryPoint(t=t, pos=vals[0], vel=vals[1], acc=vals[2], jerk=vals[3], snap=vals[4])


def analytic_primitive(
    kind: str,
    radius: float,
    angular_rate: float,
    center: Sequence[float],
    t: float,
) -> TrajectoryPoint:
    """Evaluate a closed-form periodic primitive with exact derivatives.

    ``circle``: center + r*(cos wt, sin wt, 0).
    ``figure8``: Lissajous x = r sin wt, y = r sin wt cos wt = (r/2) sin 2wt.

    Raises:
        ValueError: on non-positive radius or unknown kind.
    """
    if not radius > 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    c = np.asarray(center, dtype=float).reshape(3)
    w = angular_rate
    if kind == "circle":
        # k-th derivative of (cos, sin) advances the phase by k*pi/2.
        ders = []
        for k in range(5):
            ph = w * t + k * np.pi / 2.0
            ders.append(radius * w**k * np.array([np.cos(ph), np.sin(ph), 0.0]))
        ders[0] = ders[0] + c
    elif kind == "figure8":
        ders = []
        for k in range(5):
            x = radius * w**k * np.sin(w * t + k * np.pi / 2.0)
            y = 0.5 * radius * (2.0 * w) ** k * np.sin(2.0 * w * t + k * np.pi / 2.0)
            ders.append(np.array([x, y, 0.0]))
        ders[0] = ders[0] + c
    else:
        raise ValueError(f"unknown primitive kind {kind!r}")
    return TrajectoryPoint(t=t, pos=ders[0], vel=ders[1], acc=ders[2], jerk=ders[3], snap=ders[4])


def sample_poly(seg: PolySegment, dt: float) -> list[TrajectoryPoint]:
    """Sample a segment uniformly at step dt, inclusive of both endpoints."""
    n = int(round(seg.duration / dt))
    return [eval_poly(seg, min(k * dt, seg.duration)) for k in range(n + 1)]


def sample_primitive(
    kind: str, radius: float, angular_rate: float, center: Sequence[float], t_end: float, dt: float
) -> list[TrajectoryPoint]:
    """Sample an analytic primitive on [0, t_end] at step dt."""
    n = int(round(t_end / dt))
    return [analytic_primitive(kind, radius, angular_rate, center, k * dt) for k in range(n + 1)]


def max_abs_derivatives(points: Sequence[TrajectoryPoint]) -> np.ndarray:
    """Max infinity-norm of position..snap over a sampled trajectory.

    Returns:
        5-element array: max |pos|, |vel|, |acc|, |jerk|, |snap|.

    Raises:
        ValueError: if fewer than two samples are given.
    """
    if len(points) < 2:
        raise ValueError("need at least 2 trajectory samples")
    out = np.zeros(5)
    for p in points:
        for k in range(5):
            m = np.max(np.abs(p.derivative(k)))
            if m > out[k]:
                out[k] = m
    return out


TRAJ_CSV_COLUMNS = (
    "t",
    "px", "py", "pz",
    "vx", "vy", "vz",
    "ax", "ay", "az",
    "jx", "jy", "jz",
    "sx", "sy", "sz",
)


def write_trajectory_csv(points: Iterable[TrajectoryPoint], path) -> None:
    """Write sampled trajectory rows as CSV with 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJ_CSV_COLUMNS)
        for p in points:
            row = [p.t]
            for k in range(5):
                row.extend(p.derivative(k))
            writer.writerow([f"{v:.17g}" for v in row])
