"""Fit the sensor models to labeled bearing data.

The pipeline: associate measurements with known targets (3-sigma gate, greedy
one-to-one), bin detections by range and clutter by bearing, then run
exhaustive grid searches that minimize the sum of squared errors between the
binned data and the parametric models. The bearing noise is chosen from the
frontier of detection-fit SSE against sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import poisson

from .models import (
    HALF_PI,
    FieldOfView,
    MeasurementSet,
    Pose2D,
    TargetState,
    relative_range_bearing_xy,
    wrap_angle,
)

INCH = 0.0254
GATE_SIGMAS = 3.0
# std of a unit normal truncated to [-3, 3]
GATED_STD_RATIO = math.sqrt(
    1.0 - 2.0 * GATE_SIGMAS * math.exp(-0.5 * GATE_SIGMAS**2) / math.sqrt(2.0 * math.pi) / math.erf(GATE_SIGMAS / math.sqrt(2.0))
)


class CalibrationError(ValueError):
    """Raised when a fit cannot be performed on the given data."""


class NoKneeError(CalibrationError):
    """Raised when a frontier has no curvature to select a knee from."""


@dataclass(frozen=True)
class GridSpec:
    min: float
    max: float
    step: float

    def __post_init__(self):
        if not self.min <= self.max:
            raise ValueError(f"grid min {self.min} exceeds max {self.max}")
        if not self.step > 0:
            raise ValueError(f"grid step must be positive, got {self.step}")

    def values(self) -> np.ndarray:
        n = int(math.floor((self.max - self.min) / self.step + 1e-9)) + 1
        return self.min + self.step * np.arange(n)


# Default grids from the original calibration procedure.
P_FN_GRID = GridSpec(0.0, 1.0, 0.005)
D_T_GRID = GridSpec(0.0, 2.0 * INCH, 0.01 * INCH)
THETA_C_GRID = GridSpec(0.0, HALF_PI, math.pi / 400)
P_U_GRID = GridSpec(0.0, 1.0, 0.005)
MU_GRID = GridSpec(0.0, 5.0, 0.0001)
SIGMA_GRID = GridSpec(math.radians(0.25), math.radians(5.0), math.radians(0.25))
RANGE_BIN = 0.2
CLUTTER_BIN = math.pi / 20


@dataclass(frozen=True)
class GroundTruthScene:
    targets: list[TargetState]
    poses: list[Pose2D]


@dataclass
class ScanLabels:
    detections: list[tuple[float, float]] = field(default_factory=list)
    false_negatives: list[float] = field(default_factory=list)
    clutter: list[float] = field(default_factory=list)


@dataclass
class LabeledDataset:
    detections: list[tuple[float, float]] = field(default_factory=list)
    false_negatives: list[float] = field(default_factory=list)
    clutter_bearings: list[float] = field(default_factory=list)
    clutter_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if sum(self.clutter_counts) != len(self.clutter_bearings):
            raise ValueError("clutter counts do not sum to the number of clutter bearings")

    @property
    def n_measurements(self) -> int:
        return len(self.detections) + len(self.clutter_bearings)

    def to_dict(self) -> dict:
        return {
            "detections": [list(d) for d in self.detections],
            "false_negatives": list(self.false_negatives),
            "clutter_bearings": list(self.clutter_bearings),
            "clutter_counts": list(self.clutter_counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledDataset":
        return cls(
            detections=[(float(r), float(e)) for r, e in d["detections"]],
            false_negatives=[float(r) for r in d["false_negatives"]],
            clutter_bearings=[float(b) for b in d["clutter_bearings"]],
            clutter_counts=[int(c) for c in d["clutter_counts"]],
        )


@dataclass(frozen=True)
class FrontierPoint:
    sigma: float
    detection_sse: float
    inlier_fraction: float
    residual_std: float = math.nan  # std of gated bearing errors of the labeled detections


@dataclass(frozen=True)
class DetectionFit:
    p_fn: float
    d_t: float
    sse: float
    residuals: list[tuple[float, float, float]]  # (bin center, data, model)


@dataclass(frozen=True)
class ClutterDensityFit:
    theta_c: float
    p_u: float
    sse: float
    bins: list[tuple[float, float, float, float]]  # (lo, hi, data density, model density)


@dataclass(frozen=True)
class ClutterRateFit:
    mu_mle: float
    mu_histogram_sse: float
    sse: float
    histogram: list[tuple[int, float, float]]  # (count, empirical freq, pmf at mu_histogram_sse)


# ---------------------------------------------------------------------------
# association and labeling


def _associate_arrays(z: np.ndarray, r: np.ndarray, b: np.ndarray, in_fov: np.ndarray, sigma: float) -> ScanLabels:
    gate = GATE_SIGMAS * sigma
    targets = np.flatnonzero(in_fov)
    labels = ScanLabels()
    used_z: set[int] = set()
    used_t: set[int] = set()
    if len(z) and len(targets):
        err = wrap_angle(z[:, None] - b[None, targets])
        pairs = np.argwhere(np.abs(err) <= gate)
        # global greedy matching by |error|; ties broken by target, then bearing value
        keys = np.lexsort((z[pairs[:, 0]], targets[pairs[:, 1]], np.abs(err[pairs[:, 0], pairs[:, 1]])))
        for k in keys:
            i, j = pairs[k]
            if i in used_z or j in used_t:
                continue
            used_z.add(i)
            used_t.add(j)
            labels.detections.append((float(r[targets[j]]), float(err[i, j])))
    labels.false_negatives = [float(r[targets[j]]) for j in range(len(targets)) if j not in used_t]
    labels.clutter = [float(z[i]) for i in range(len(z)) if i not in used_z]
    return labels


def _target_geometry(targets: Sequence[TargetState], pose: Pose2D, fov: FieldOfView):
    xs = np.array([t.x for t in targets], dtype=float)
    ys = np.array([t.y for t in targets], dtype=float)
    r, b = relative_range_bearing_xy(xs, ys, pose)
    in_fov = fov.contains_bearing(b) & (r <= fov.r_max)
    return r, b, in_fov


def associate(
    measurements: MeasurementSet,
    targets: Sequence[TargetState],
    sigma: float,
    fov: FieldOfView,
) -> ScanLabels:
    """Label one scan's bearings as detections or clutter and its targets as found or missed.

    A bearing may detect an in-FOV target when their wrapped difference is at
    most ``3 * sigma``. Candidate pairs are taken greedily in order of
    increasing absolute error, each target and each bearing used at most once.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r, b, in_fov = _target_geometry(targets, measurements.pose, fov)
    z = np.asarray(measurements.bearings, dtype=float)
    return _associate_arrays(z, r, b, in_fov, sigma)


class _PreparedScans:
    """Per-scan target geometry, computed once and reused across sigma values."""

    def __init__(self, scans: Sequence[MeasurementSet], scene: GroundTruthScene, fov: FieldOfView):
        if len(scans) != len(scene.poses):
            raise CalibrationError(f"{len(scans)} scans but {len(scene.poses)} ground-truth poses")
        self.items = []
        for scan, pose in zip(scans, scene.poses):
            r, b, in_fov = _target_geometry(scene.targets, pose, fov)
            self.items.append((np.asarray(scan.bearings, dtype=float), r, b, in_fov))

    def label(self, sigma: float) -> LabeledDataset:
        out = LabeledDataset()
        for z, r, b, in_fov in self.items:
            lab = _associate_arrays(z, r, b, in_fov, sigma)
            out.detections.extend(lab.detections)
            out.false_negatives.extend(lab.false_negatives)
            out.clutter_bearings.extend(lab.clutter)
            out.clutter_counts.append(len(lab.clutter))
        return out


def label_dataset(scans: Sequence[MeasurementSet], scene: GroundTruthScene, sigma: float, fov: FieldOfView) -> LabeledDataset:
    """Associate every scan against the scene and pool the labels.

    The i-th scan is evaluated at ``scene.poses[i]``; a length mismatch raises
    :class:`CalibrationError`.
    """
    return _PreparedScans(scans, scene, fov).label(sigma)


# ---------------------------------------------------------------------------
# detection model fit


def bin_detection_rates(data: LabeledDataset, bin_width: float = RANGE_BIN) -> list[tuple[float, float, int]]:
    """Empirical detection probability per range bin as ``(center, p_hat, n)``; empty bins dropped."""
    if not bin_width > 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    det_r = np.array([d[0] for d in data.detections], dtype=float)
    fn_r = np.array(data.false_negatives, dtype=float)
    if det_r.size + fn_r.size == 0:
        return []
    n_bins = int(np.floor(max(det_r.max(initial=0.0), fn_r.max(initial=0.0)) / bin_width)) + 1
    det_counts = np.bincount(np.floor(det_r / bin_width).astype(int), minlength=n_bins)
    fn_counts = np.bincount(np.floor(fn_r / bin_width).astype(int), minlength=n_bins)
    out = []
    for k in range(n_bins):
        n = int(det_counts[k] + fn_counts[k])
        if n:
            out.append(((k + 0.5) * bin_width, det_counts[k] / n, n))
    return out


def detection_model_curve(r, p_fn: float, d_t: float, theta_sep: float):
    """In-FOV detection probability against range (no window indicators)."""
    r = np.asarray(r, dtype=float)
    return (1.0 - p_fn) * np.minimum(1.0, d_t / (r * theta_sep))


def fit_detection(
    binned: Sequence[tuple[float, float, int]],
    p_fn_grid: GridSpec = P_FN_GRID,
    d_t_grid: GridSpec = D_T_GRID,
    theta_sep: float = math.radians(0.25),
    fov: FieldOfView | None = None,
    weighted: bool = False,
) -> DetectionFit:
    """Exhaustive grid search for ``(p_fn, d_t)`` minimizing SSE over range bins.

    The SSE is unweighted unless ``weighted`` is set, in which case each bin's
    squared residual is multiplied by its sample count. Grid values violating
    ``d_t > 0`` are skipped. Ties go to the smaller ``p_fn``, then the smaller
    ``d_t``. ``fov`` is accepted for interface symmetry; bins are already
    restricted to in-FOV targets.
    """
    if not binned:
        raise CalibrationError("no binned detection data to fit")
    centers = np.array([b[0] for b in binned], dtype=float)
    data = np.array([b[1] for b in binned], dtype=float)
    w = np.array([b[2] for b in binned], dtype=float) if weighted else np.ones_like(data)
    p_fn = p_fn_grid.values()
    p_fn = p_fn[(p_fn >= 0) & (p_fn <= 1)]
    d_t = d_t_grid.values()
    d_t = d_t[d_t > 0]
    if p_fn.size == 0 or d_t.size == 0:
        raise CalibrationError("detection grids contain no valid parameter values")
    coverage = np.minimum(1.0, d_t[:, None] / (centers[None, :] * theta_sep))  # (n_dt, n_bins)
    a = 1.0 - p_fn
    sse = np.sum(w * (a[:, None, None] * coverage[None, :, :] - data) ** 2, axis=2)  # (n_pfn, n_dt)
    # row-major argmin: smallest p_fn first, then smallest d_t
    i, j = np.unravel_index(int(np.argmin(sse)), sse.shape)
    model = a[i] * coverage[j]
    return DetectionFit(
        p_fn=float(p_fn[i]),
        d_t=float(d_t[j]),
        sse=float(sse[i, j]),
        residuals=[(float(c), float(y), float(m)) for c, y, m in zip(centers, data, model)],
    )


def sigma_frontier(
    scans: Sequence[MeasurementSet],
    scene: GroundTruthScene,
    sigma_grid: GridSpec = SIGMA_GRID,
    p_fn_grid: GridSpec = P_FN_GRID,
    d_t_grid: GridSpec = D_T_GRID,
    theta_sep: float = math.radians(0.25),
    fov: FieldOfView | None = None,
    bin_width: float = RANGE_BIN,
    weighted: bool = False,
) -> list[FrontierPoint]:
    """Detection-fit SSE and inlier fraction for each candidate sigma."""
    sigmas = sigma_grid.values()
    sigmas = sigmas[sigmas > 0]
    if sigmas.size < 2:
        raise CalibrationError("sigma grid needs at least two positive values")
    prepared = _PreparedScans(scans, scene, fov)
    out = []
    for s in sigmas:
        data = prepared.label(float(s))
        fit = fit_detection(bin_detection_rates(data, bin_width), p_fn_grid, d_t_grid, theta_sep, fov, weighted)
        total = data.n_measurements
        frac = len(data.detections) / total if total else 0.0
        errs = np.array([e for _, e in data.detections])
        spread = float(errs.std()) if errs.size > 1 else math.nan
        out.append(FrontierPoint(float(s), fit.sse, frac, spread))
    return out


def select_knee(frontier: Sequence[FrontierPoint], curve: str = "sse") -> float:
    """Pick sigma at the point of maximum discrete curvature of the frontier.

    Both axes are min-max normalized before the curvature of the polyline is
    measured as the turning angle at each interior vertex. ``curve`` chooses
    the ordinate: ``"sse"`` (detection-fit SSE) or ``"inliers"`` (inlier
    fraction).
    """
    if len(frontier) < 3:
        raise CalibrationError("knee selection needs at least three frontier points")
    pts = sorted(frontier, key=lambda p: p.sigma)
    x = np.array([p.sigma for p in pts], dtype=float)
    if curve == "sse":
        y = np.array([p.detection_sse for p in pts], dtype=float)
    elif curve == "inliers":
        y = np.array([p.inlier_fraction for p in pts], dtype=float)
    else:
        raise ValueError(f"unknown knee curve {curve!r}")
    xs = x.max() - x.min()
    ys = y.max() - y.min()
    if xs <= 0 or ys <= 0:
        raise NoKneeError("frontier is flat; no knee")
    x = (x - x.min()) / xs
    y = (y - y.min()) / ys
    d1 = np.stack([x[1:-1] - x[:-2], y[1:-1] - y[:-2]])
    d2 = np.stack([x[2:] - x[1:-1], y[2:] - y[1:-1]])
    turn = np.abs(np.arctan2(d1[0] * d2[1] - d1[1] * d2[0], d1[0] * d2[0] + d1[1] * d2[1]))
    if turn.max() <= 1e-9:
        raise NoKneeError("frontier is a straight line; no knee")
    return pts[int(np.argmax(turn)) + 1].sigma


def select_sigma_consistent(frontier: Sequence[FrontierPoint]) -> float:
    """Smallest sigma at which the gated residuals look like a 3-sigma-truncated normal of that sigma.

    For each frontier point the ratio ``residual_std / (GATED_STD_RATIO * sigma)``
    is above 1 while the gate is too tight and drops below 1 once it admits
    the whole error distribution. The first crossing, linearly interpolated
    between grid points, is returned.
    """
    pts = sorted(frontier, key=lambda p: p.sigma)
    if len(pts) < 2:
        raise CalibrationError("need at least two frontier points")
    sig = np.array([p.sigma for p in pts])
    ratio = np.array([p.residual_std for p in pts]) / (GATED_STD_RATIO * sig)
    for k in range(1, len(pts)):
        r0, r1 = ratio[k - 1], ratio[k]
        if np.isfinite(r0) and np.isfinite(r1) and r0 > 1.0 >= r1:
            return float(sig[k - 1] + (r0 - 1.0) * (sig[k] - sig[k - 1]) / (r0 - r1))
    raise CalibrationError("gated residual spread never matches sigma on this grid")


# ---------------------------------------------------------------------------
# clutter model fit


def clutter_bin_edges(fov: FieldOfView, bin_width: float = CLUTTER_BIN) -> np.ndarray:
    n = int(math.ceil(fov.width / bin_width - 1e-9))
    edges = fov.b_min + bin_width * np.arange(n + 1)
    edges[-1] = fov.b_max
    return edges


def _peak_overlap(edges: np.ndarray, theta_c: np.ndarray) -> np.ndarray:
    """Length of each bin covered by the two clutter peaks, shape ``(len(theta_c), n_bins)``."""
    lo, hi = edges[None, :-1], edges[None, 1:]
    h = 0.5 * theta_c[:, None]
    total = np.zeros((theta_c.size, edges.size - 1))
    for c in (-HALF_PI, HALF_PI):
        total += np.clip(np.minimum(hi, c + h) - np.maximum(lo, c - h), 0.0, None)
    return total


def clutter_shape_bin_average(edges, theta_c: float, p_u: float, fov: FieldOfView) -> np.ndarray:
    """Bin-averaged normalized clutter density (clutter intensity divided by mu)."""
    edges = np.asarray(edges, dtype=float)
    width = np.diff(edges)
    overlap = _peak_overlap(edges, np.array([theta_c]))[0]
    return p_u / fov.width + (1.0 - p_u) / (2.0 * theta_c) * overlap / width


def fit_clutter_histogram(
    edges,
    density,
    theta_c_grid: GridSpec = THETA_C_GRID,
    p_u_grid: GridSpec = P_U_GRID,
    fov: FieldOfView | None = None,
) -> ClutterDensityFit:
    """Grid search matching the normalized clutter shape to a piecewise-constant density.

    The model is averaged over each bin so on-grid parameters whose peaks align
    with bin edges are reproduced exactly. ``theta_c = 0`` is skipped. Ties go
    to the smaller ``theta_c``, then the larger ``p_u``.
    """
    if fov is None:
        raise ValueError("fov is required")
    edges = np.asarray(edges, dtype=float)
    data = np.asarray(density, dtype=float)
    width = np.diff(edges)
    theta_c = theta_c_grid.values()
    theta_c = theta_c[(theta_c > 0) & (theta_c <= HALF_PI + 1e-12)]
    p_u = p_u_grid.values()[::-1]  # descending, so argmin prefers larger p_u
    p_u = p_u[(p_u >= 0) & (p_u <= 1)]
    if theta_c.size == 0 or p_u.size == 0:
        raise CalibrationError("clutter grids contain no valid parameter values")
    peak_shape = _peak_overlap(edges, theta_c) / (2.0 * theta_c[:, None]) / width[None, :]  # (n_tc, n_bins)
    uniform = 1.0 / fov.width
    model = p_u[None, :, None] * uniform + (1.0 - p_u)[None, :, None] * peak_shape[:, None, :]
    sse = np.sum((model - data[None, None, :]) ** 2, axis=2)  # (n_tc, n_pu)
    flat = int(np.argmin(sse))
    i, j = np.unravel_index(flat, sse.shape)
    best = model[i, j]
    return ClutterDensityFit(
        theta_c=float(theta_c[i]),
        p_u=float(p_u[j]),
        sse=float(sse[i, j]),
        bins=[(float(lo), float(hi), float(d), float(m)) for lo, hi, d, m in zip(edges[:-1], edges[1:], data, best)],
    )


def fit_clutter_density(
    clutter_bearings: Sequence[float],
    bin_width: float = CLUTTER_BIN,
    theta_c_grid: GridSpec = THETA_C_GRID,
    p_u_grid: GridSpec = P_U_GRID,
    fov: FieldOfView | None = None,
) -> ClutterDensityFit:
    """Histogram clutter bearings over the FOV and fit the peak width and uniform weight."""
    if fov is None:
        raise ValueError("fov is required")
    z = np.asarray(clutter_bearings, dtype=float)
    z = z[fov.contains_bearing(z)]
    if z.size == 0:
        raise CalibrationError("no clutter measurements to fit")
    edges = clutter_bin_edges(fov, bin_width)
    counts, _ = np.histogram(z, bins=edges)
    density = counts / (z.size * np.diff(edges))
    return fit_clutter_histogram(edges, density, theta_c_grid, p_u_grid, fov)


def fit_clutter_rate(clutter_counts: Sequence[int], mu_grid: GridSpec = MU_GRID) -> ClutterRateFit:
    """Poisson clutter rate from per-scan counts.

    Returns both the sample mean and the grid value of ``mu`` whose pmf best
    matches the empirical count histogram in squared error. The histogram
    comparison includes the tail mass beyond the largest observed count.
    """
    counts = np.asarray(clutter_counts, dtype=np.int64)
    if counts.size == 0:
        raise CalibrationError("no per-scan clutter counts")
    if np.any(counts < 0):
        raise CalibrationError("clutter counts must be non-negative")
    mu_mle = int(counts.sum()) / counts.size
    m = np.arange(int(counts.max()) + 1)
    freq = np.bincount(counts, minlength=m.size) / counts.size
    mus = mu_grid.values()
    mus = mus[mus >= 0]
    pmf = poisson.pmf(m[None, :], mus[:, None])
    tail = 1.0 - pmf.sum(axis=1)
    sse = np.sum((pmf - freq[None, :]) ** 2, axis=1) + tail**2
    k = int(np.argmin(sse))
    return ClutterRateFit(
        mu_mle=mu_mle,
        mu_histogram_sse=float(mus[k]),
        sse=float(sse[k]),
        histogram=[(int(c), float(f), float(p)) for c, f, p in zip(m, freq, pmf[k])],
    )
