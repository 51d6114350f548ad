"""Turn intensity-annotated laser scans into bearing measurement sets.

Returns above the intensity threshold are grouped into spatial clusters, and
each cluster contributes one bearing. A small ray-casting renderer produces
synthetic raw scans with reflective targets and grazing-incidence clutter
surfaces for exercising the pipeline.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .models import MeasurementSet, Pose2D, TargetState, wrap_angle

INTENSITY_THRESHOLD = 11000.0
TARGET_DIAMETER = 1.625 * 0.0254
# target return intensity A / (1 + r) puts a 5 m return just above the threshold
TARGET_INTENSITY_GAIN = 11000.0 * 6.0 * 1.01
BACKGROUND_INTENSITY = 3000.0


@dataclass
class RawScan:
    scan_id: int | str
    pose: Pose2D
    angles: np.ndarray
    ranges: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.ranges = np.asarray(self.ranges, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        if not (self.angles.shape == self.ranges.shape == self.intensities.shape) or self.angles.ndim != 1:
            raise ValueError("angles, ranges and intensities must be 1-D arrays of equal length")
        if np.any(np.diff(self.angles) <= 0):
            raise ValueError("beam angles must be strictly increasing")
        if np.any(self.ranges < 0):
            raise ValueError("beam ranges must be non-negative")
        if np.any(self.intensities < 0):
            raise ValueError("beam intensities must be non-negative")

    def __len__(self):
        return self.angles.size

    @property
    def points(self) -> np.ndarray:
        """Beam endpoints in the sensor frame, shape ``(n, 2)``."""
        return np.column_stack([self.ranges * np.cos(self.angles), self.ranges * np.sin(self.angles)])

    def to_json(self) -> str:
        beams = [[float(a), float(r), float(i)] for a, r, i in zip(self.angles, self.ranges, self.intensities)]
        return json.dumps({"scan_id": self.scan_id, "pose": self.pose.as_list(), "beams": beams})

    @classmethod
    def from_json(cls, line: str) -> "RawScan":
        d = json.loads(line)
        beams = np.asarray(d["beams"], dtype=float).reshape(-1, 3)
        return cls(d["scan_id"], Pose2D(*d["pose"]), beams[:, 0], beams[:, 1], beams[:, 2])


@dataclass(frozen=True)
class ClusterParams:
    intensity_threshold: float = INTENSITY_THRESHOLD
    max_cluster_diameter: float = TARGET_DIAMETER

    def __post_init__(self):
        if not self.intensity_threshold > 0:
            raise ValueError(f"intensity threshold must be positive, got {self.intensity_threshold}")
        if not self.max_cluster_diameter > 0:
            raise ValueError(f"cluster diameter must be positive, got {self.max_cluster_diameter}")


def threshold_scan(scan: RawScan, params: ClusterParams) -> list[int]:
    """Indices of beams strictly brighter than the threshold, in angle order."""
    return np.flatnonzero(scan.intensities > params.intensity_threshold).tolist()


def cluster_points(scan: RawScan, indices: Sequence[int], params: ClusterParams) -> list[list[int]]:
    """Single pass in angle order; a point joins the open cluster only if it is
    within ``max_cluster_diameter`` of every member, otherwise it starts a new one.
    """
    pts = scan.points
    clusters: list[list[int]] = []
    current: list[int] = []
    for i in indices:
        if current:
            d = np.hypot(*(pts[current] - pts[i]).T)
            if np.all(d <= params.max_cluster_diameter):
                current.append(i)
                continue
            clusters.append(current)
        current = [i]
    if current:
        clusters.append(current)
    return clusters


def extract_bearings(scan: RawScan, params: ClusterParams) -> MeasurementSet:
    clusters = cluster_points(scan, threshold_scan(scan, params), params)
    bearings = [float(np.mean(scan.angles[c])) for c in clusters]
    return MeasurementSet(pose=scan.pose, bearings=bearings, scan_id=scan.scan_id)


# ---------------------------------------------------------------------------
# synthetic scans


@dataclass(frozen=True)
class Surface:
    """A reflective wall segment that is bright only near normal incidence.

    ``cutoff`` is the largest angle between the beam and the surface normal
    that still returns above threshold (about 0.02 deg for glass, 2.5 deg for
    bare metal).
    """

    x0: float
    y0: float
    x1: float
    y1: float
    cutoff: float = math.radians(2.5)
    peak_intensity: float = 20000.0


@dataclass(frozen=True)
class BeamSpec:
    b_min: float = -0.75 * math.pi
    b_max: float = 0.75 * math.pi
    theta_sep: float = math.radians(0.25)
    max_range: float = 30.0
    target_diameter: float = TARGET_DIAMETER
    range_noise: float = 0.0
    intensity_noise: float = 0.0

    def angles(self) -> np.ndarray:
        n = int(math.floor((self.b_max - self.b_min) / self.theta_sep + 1e-9)) + 1
        return self.b_min + self.theta_sep * np.arange(n)


def _ray_disc(dx, dy, cx, cy, radius):
    """Distance along unit rays ``(dx, dy)`` from the origin to a disc, ``inf`` on a miss."""
    proj = dx * cx + dy * cy
    perp2 = cx * cx + cy * cy - proj * proj
    inside = perp2 <= radius * radius
    t = proj - np.sqrt(np.where(inside, radius * radius - perp2, 0.0))
    return np.where(inside & (t > 0), t, np.inf)


def _ray_segment(dx, dy, ax, ay, bx, by):
    """Distance along unit rays to a segment ``a-b`` (sensor at the origin), plus the incidence angle."""
    ex, ey = bx - ax, by - ay
    den = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ax * ey - ay * ex) / den
        u = (ax * dy - ay * dx) / den
    hit = (np.abs(den) > 1e-15) & (t > 0) & (u >= 0) & (u <= 1)
    t = np.where(hit, t, np.inf)
    seg_len = math.hypot(ex, ey)
    # angle between the ray and the surface normal
    cos_inc = np.abs(dx * (-ey) + dy * ex) / seg_len
    incidence = np.arccos(np.clip(cos_inc, 0.0, 1.0))
    return t, incidence


def render_synthetic_scan(
    targets: Sequence[TargetState],
    surfaces: Sequence[Surface],
    pose: Pose2D,
    beam_spec: BeamSpec = BeamSpec(),
    rng: np.random.Generator | None = None,
    scan_id: int | str = 0,
) -> RawScan:
    """Ray-cast a laser scan with reflective targets and grazing-incidence clutter.

    Targets are discs; their returns have intensity ``A / (1 + r)`` with ``A``
    chosen so a 5 m return sits just above the default threshold. Surfaces
    return ``peak_intensity`` within their incidence cutoff and background
    intensity elsewhere. Beams that hit nothing report ``max_range``.
    """
    angles = beam_spec.angles()
    world = angles + pose.heading
    dx, dy = np.cos(world), np.sin(world)
    n = angles.size
    ranges = np.full(n, beam_spec.max_range)
    intensity = np.full(n, BACKGROUND_INTENSITY * 0.5)
    radius = 0.5 * beam_spec.target_diameter
    for t in targets:
        d = _ray_disc(dx, dy, t.x - pose.x, t.y - pose.y, radius)
        closer = d < ranges
        ranges = np.where(closer, d, ranges)
        intensity = np.where(closer, TARGET_INTENSITY_GAIN / (1.0 + d), intensity)
    for s in surfaces:
        d, inc = _ray_segment(dx, dy, s.x0 - pose.x, s.y0 - pose.y, s.x1 - pose.x, s.y1 - pose.y)
        closer = d < ranges
        bright = inc <= s.cutoff
        ranges = np.where(closer, d, ranges)
        intensity = np.where(closer, np.where(bright, s.peak_intensity, BACKGROUND_INTENSITY), intensity)
    if rng is not None:
        if beam_spec.range_noise > 0:
            ranges = np.clip(ranges + rng.normal(0.0, beam_spec.range_noise, n), 0.0, None)
        if beam_spec.intensity_noise > 0:
            intensity = np.clip(intensity + rng.normal(0.0, beam_spec.intensity_noise, n), 0.0, None)
    return RawScan(scan_id, pose, angles, ranges, intensity)


def read_raw_scans(lines: Iterable[str]) -> list[RawScan]:
    return [RawScan.from_json(line) for line in lines if line.strip()]


def write_raw_scans(scans: Iterable[RawScan]) -> str:
    return "".join(s.to_json() + "\n" for s in scans)


def true_bearings(targets: Sequence[TargetState], pose: Pose2D) -> list[float]:
    return [wrap_angle(math.atan2(t.y - pose.y, t.x - pose.x) - pose.heading) for t in targets]
