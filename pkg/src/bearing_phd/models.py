"""Parametric detection, bearing-noise and clutter models for a bearing-only sensor.

Everything here is pure: evaluation functions take parameters explicitly and the
sampling functions draw from a caller-owned ``numpy.random.Generator``.
Internal units are meters and radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf
from scipy.stats import poisson

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


def wrap_angle(a):
    """Wrap an angle (scalar or array) to the half-open interval (-pi, pi]."""
    if np.ndim(a) == 0:
        return math.pi - (math.pi - float(a)) % TWO_PI
    return math.pi - np.mod(math.pi - np.asarray(a, dtype=float), TWO_PI)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.heading]


@dataclass(frozen=True)
class TargetState:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"target coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class FieldOfView:
    b_min: float
    b_max: float
    r_max: float

    def __post_init__(self):
        if not (-math.pi <= self.b_min < self.b_max <= math.pi):
            raise ValueError(f"need -pi <= b_min < b_max <= pi, got [{self.b_min}, {self.b_max}]")
        if not self.r_max > 0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")

    @property
    def width(self) -> float:
        return self.b_max - self.b_min

    def contains_bearing(self, b):
        return (b >= self.b_min) & (b <= self.b_max)


@dataclass(frozen=True)
class DetectionParams:
    p_fn: float
    d_t: float
    theta_sep: float

    def __post_init__(self):
        if not 0.0 <= self.p_fn <= 1.0:
            raise ValueError(f"p_fn must lie in [0, 1], got {self.p_fn}")
        if not self.d_t > 0:
            raise ValueError(f"d_t must be positive, got {self.d_t}")
        if not self.theta_sep > 0:
            raise ValueError(f"theta_sep must be positive, got {self.theta_sep}")

    @property
    def saturation_range(self) -> float:
        """Range below which the beam-coverage term of the detection model is 1."""
        return self.d_t / self.theta_sep


@dataclass(frozen=True)
class MeasurementParams:
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class ClutterParams:
    theta_c: float
    p_u: float
    mu: float

    def __post_init__(self):
        if not 0.0 < self.theta_c <= HALF_PI:
            raise ValueError(f"theta_c must lie in (0, pi/2], got {self.theta_c}")
        if not 0.0 <= self.p_u <= 1.0:
            raise ValueError(f"p_u must lie in [0, 1], got {self.p_u}")
        if not self.mu >= 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")

    def peak_intervals(self) -> list[tuple[float, float]]:
        h = 0.5 * self.theta_c
        return [(-HALF_PI - h, -HALF_PI + h), (HALF_PI - h, HALF_PI + h)]


def check_clutter_fov(clut: ClutterParams, fov: FieldOfView) -> None:
    """Reject clutter peaks that stick out of the field of view."""
    for lo, hi in clut.peak_intervals():
        # a few ulps of slack so pi/2 + pi/4 == 3pi/4 style boundaries pass
        eps = 1e-12
        if lo < fov.b_min - eps or hi > fov.b_max + eps:
            raise ValueError(
                f"clutter peak [{lo:.6f}, {hi:.6f}] lies outside the field of view "
                f"[{fov.b_min:.6f}, {fov.b_max:.6f}]"
            )


@dataclass(frozen=True)
class SensorModel:
    """All parameters needed to evaluate or simulate the sensor."""

    detection: DetectionParams
    measurement: MeasurementParams
    clutter: ClutterParams
    fov: FieldOfView = field(default_factory=lambda: FieldOfView(-0.75 * math.pi, 0.75 * math.pi, 5.0))

    def __post_init__(self):
        check_clutter_fov(self.clutter, self.fov)


@dataclass
class MeasurementSet:
    """Bearings from one scan together with the pose that produced them."""

    pose: Pose2D
    bearings: list[float]
    scan_id: int | str = 0

    def __len__(self):
        return len(self.bearings)


# ---------------------------------------------------------------------------
# evaluation


def relative_range_bearing_xy(xs, ys, pose: Pose2D):
    """Vectorized range and bearing of points ``(xs, ys)`` in the sensor frame."""
    dx = np.asarray(xs, dtype=float) - pose.x
    dy = np.asarray(ys, dtype=float) - pose.y
    r = np.hypot(dx, dy)
    b = wrap_angle(np.arctan2(dy, dx) - pose.heading)
    # coincident points get bearing 0 by convention
    b = np.where(r > 0, b, 0.0)
    return r, b


def relative_range_bearing(target: TargetState, pose: Pose2D) -> tuple[float, float]:
    dx = target.x - pose.x
    dy = target.y - pose.y
    r = math.hypot(dx, dy)
    if r == 0.0:
        return 0.0, 0.0
    return r, wrap_angle(math.atan2(dy, dx) - pose.heading)


def detection_probability_rb(r, b, det: DetectionParams, fov: FieldOfView):
    """Detection probability as a function of sensor-frame range and bearing."""
    r = np.asarray(r, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore"):
        coverage = np.where(r > 0, det.d_t / (np.where(r > 0, r, 1.0) * det.theta_sep), 1.0)
    pd = (1.0 - det.p_fn) * np.minimum(1.0, coverage)
    inside = fov.contains_bearing(b) & (r >= 0) & (r <= fov.r_max)
    return np.where(inside, pd, 0.0)


def detection_probability_xy(xs, ys, pose: Pose2D, det: DetectionParams, fov: FieldOfView):
    r, b = relative_range_bearing_xy(xs, ys, pose)
    return detection_probability_rb(r, b, det, fov)


def detection_probability(target: TargetState, pose: Pose2D, det: DetectionParams, fov: FieldOfView) -> float:
    """Probability that a sensor at ``pose`` detects ``target``.

    Zero outside the bearing window or beyond ``fov.r_max``; otherwise
    ``(1 - p_fn) * min(1, d_t / (r * theta_sep))``, saturating at ``r = 0``.
    """
    r, b = relative_range_bearing(target, pose)
    return float(detection_probability_rb(r, b, det, fov))


def bearing_error_density(err, sigma: float):
    """Zero-mean Gaussian density of a bearing error, wrapped and renormalized on the circle."""
    e = wrap_angle(err)
    norm = erf(math.pi / (sigma * math.sqrt(2.0)))
    return np.exp(-0.5 * (e / sigma) ** 2) / (sigma * math.sqrt(TWO_PI) * norm)


def measurement_density(z: float, target: TargetState, pose: Pose2D, meas: MeasurementParams) -> float:
    _, b = relative_range_bearing(target, pose)
    return float(bearing_error_density(z - b, meas.sigma))


def clutter_density(z, clut: ClutterParams, fov: FieldOfView):
    """Clutter intensity over bearing: uniform floor plus two peaks at +-pi/2.

    Accepts scalars or arrays; returns the same shape.
    """
    z = np.asarray(z, dtype=float)
    in_fov = fov.contains_bearing(z)
    uniform = clut.p_u * clut.mu / fov.width
    peak = (1.0 - clut.p_u) * clut.mu / (2.0 * clut.theta_c)
    in_peak = np.abs(np.abs(z) - HALF_PI) <= 0.5 * clut.theta_c
    out = np.where(in_fov, uniform + np.where(in_peak, peak, 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def clutter_cardinality_pmf(m: int, clut: ClutterParams) -> float:
    if m < 0 or int(m) != m:
        raise ValueError(f"clutter count must be a non-negative integer, got {m}")
    return float(poisson.pmf(int(m), clut.mu))


# ---------------------------------------------------------------------------
# sampling


def sample_clutter(clut: ClutterParams, fov: FieldOfView, rng: np.random.Generator) -> list[float]:
    """Draw one scan's clutter bearings: Poisson count, each from the normalized clutter shape."""
    n = int(rng.poisson(clut.mu)) if clut.mu > 0 else 0
    if n == 0:
        return []
    from_uniform = rng.random(n) < clut.p_u
    u = rng.random(n)
    side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    uniform = fov.b_min + u * fov.width
    peak = side * (HALF_PI + (u - 0.5) * clut.theta_c)
    return np.where(from_uniform, uniform, peak).tolist()


def simulate_measurement_set(
    targets: Sequence[TargetState],
    pose: Pose2D,
    model: SensorModel,
    rng: np.random.Generator,
    visible: Sequence[bool] | None = None,
    scan_id: int | str = 0,
) -> MeasurementSet:
    """Forward-simulate one scan.

    Each target is detected independently with its detection probability (and
    only if ``visible`` allows it), producing at most one noisy bearing. Noisy
    bearings that land outside the bearing window are not reported. Clutter is
    appended and the whole set is shuffled.
    """
    bearings: list[float] = []
    if targets:
        xs = np.array([t.x for t in targets])
        ys = np.array([t.y for t in targets])
        r, b = relative_range_bearing_xy(xs, ys, pose)
        pd = detection_probability_rb(r, b, model.detection, model.fov)
        if visible is not None:
            pd = np.where(np.asarray(visible, dtype=bool), pd, 0.0)
        hit = rng.random(len(targets)) < pd
        noise = rng.normal(0.0, model.measurement.sigma, len(targets))
        z = wrap_angle(b + noise)
        keep = hit & model.fov.contains_bearing(z)
        bearings.extend(z[keep].tolist())
    bearings.extend(sample_clutter(model.clutter, model.fov, rng))
    if len(bearings) > 1:
        bearings = [bearings[i] for i in rng.permutation(len(bearings))]
    return MeasurementSet(pose=pose, bearings=bearings, scan_id=scan_id)
