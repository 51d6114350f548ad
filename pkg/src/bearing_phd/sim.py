"""Synthetic worlds: occupancy maps, multi-scale random robot motion and scan generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .calibration import GroundTruthScene
from .models import MeasurementSet, Pose2D, SensorModel, TargetState, simulate_measurement_set


@dataclass
class OccupancyMap:
    """Boolean occupancy grid; ``occupied[iy, ix]`` with ``iy`` growing with world y.

    Anything outside the grid counts as occupied.
    """

    occupied: np.ndarray
    resolution: float
    origin: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))

    def __post_init__(self):
        self.occupied = np.asarray(self.occupied, dtype=bool)
        if self.occupied.ndim != 2 or self.occupied.size == 0:
            raise ValueError("occupancy grid must be a non-empty 2-D array")
        if not self.resolution > 0:
            raise ValueError(f"map resolution must be positive, got {self.resolution}")

    @property
    def shape(self):
        return self.occupied.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """World bounds ``(x_min, x_max, y_min, y_max)``."""
        ny, nx = self.occupied.shape
        return (self.origin.x, self.origin.x + nx * self.resolution, self.origin.y, self.origin.y + ny * self.resolution)

    @classmethod
    def empty(cls, width: float, height: float, resolution: float = 0.1, origin=(0.0, 0.0)):
        nx = int(round(width / resolution))
        ny = int(round(height / resolution))
        return cls(np.zeros((ny, nx), dtype=bool), resolution, Pose2D(origin[0], origin[1], 0.0))

    @classmethod
    def walled_room(cls, width: float, height: float, resolution: float = 0.1):
        """Empty rectangle with a one-cell wall around its border."""
        occ = cls.empty(width, height, resolution)
        occ.occupied[0, :] = occ.occupied[-1, :] = True
        occ.occupied[:, 0] = occ.occupied[:, -1] = True
        return occ

    def cell_of(self, x, y):
        ix = np.floor((np.asarray(x, dtype=float) - self.origin.x) / self.resolution).astype(int)
        iy = np.floor((np.asarray(y, dtype=float) - self.origin.y) / self.resolution).astype(int)
        return ix, iy

    def is_free(self, x, y):
        ix, iy = self.cell_of(x, y)
        ny, nx = self.occupied.shape
        inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        out = np.zeros(np.shape(ix), dtype=bool)
        out[inside] = ~self.occupied[iy[inside], ix[inside]]
        return out if out.ndim else bool(out)

    def segment_free(self, x0: float, y0: float, x1: float, y1: float) -> bool:
        """True when the straight segment crosses only free cells (sampled at quarter-cell steps)."""
        length = math.hypot(x1 - x0, y1 - y0)
        n = max(2, int(math.ceil(length / (0.25 * self.resolution))) + 1)
        t = np.linspace(0.0, 1.0, n)
        return bool(np.all(self.is_free(x0 + t * (x1 - x0), y0 + t * (y1 - y0))))

    def line_of_sight(self, x0, y0, xs, ys) -> np.ndarray:
        """Visibility from ``(x0, y0)`` to each point; samples in the target's own cell are ignored."""
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        if xs.size == 0:
            return np.zeros(0, dtype=bool)
        length = np.hypot(xs - x0, ys - y0)
        n = max(2, int(math.ceil(length.max() / (0.25 * self.resolution))))
        t = np.linspace(0.0, 1.0, n + 1)[1:-1]
        px = x0 + t[None, :] * (xs - x0)[:, None]
        py = y0 + t[None, :] * (ys - y0)[:, None]
        ix, iy = self.cell_of(px, py)
        tix, tiy = self.cell_of(xs, ys)
        own = (ix == tix[:, None]) & (iy == tiy[:, None])
        return np.all(self.is_free(px, py) | own, axis=1)

    def free_cells_xy(self) -> np.ndarray:
        """World coordinates of the lower-left corners of all free cells, shape ``(n, 2)``."""
        iy, ix = np.nonzero(~self.occupied)
        return np.column_stack([self.origin.x + ix * self.resolution, self.origin.y + iy * self.resolution])

    def sample_free(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples over the free space, shape ``(n, 2)``."""
        cells = self.free_cells_xy()
        if len(cells) == 0:
            raise ValueError("map has no free space")
        pick = rng.integers(0, len(cells), n)
        return cells[pick] + rng.random((n, 2)) * self.resolution

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_free(n, rng)

    @property
    def free_area(self) -> float:
        return float((~self.occupied).sum()) * self.resolution**2

    # text format: header lines "resolution R" and optional "origin X Y", then rows of '.'/'#', top row first
    def to_text(self) -> str:
        lines = [f"resolution {self.resolution!r}", f"origin {self.origin.x!r} {self.origin.y!r}"]
        for row in self.occupied[::-1]:
            lines.append("".join("#" if c else "." for c in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OccupancyMap":
        resolution = None
        origin = (0.0, 0.0)
        rows = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith(";"):
                continue
            if line.startswith("resolution"):
                resolution = float(line.split()[1])
            elif line.startswith("origin"):
                parts = line.split()
                origin = (float(parts[1]), float(parts[2]))
            else:
                if set(line) - {".", "#"}:
                    raise ValueError(f"invalid map row {line!r}")
                rows.append([c == "#" for c in line])
        if resolution is None:
            raise ValueError("map text is missing the 'resolution' header")
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("map rows must be non-empty and of equal length")
        return cls(np.array(rows[::-1], dtype=bool), resolution, Pose2D(origin[0], origin[1], 0.0))


@dataclass
class ActionPlan:
    poses: list[Pose2D]
    length_scale: float


@dataclass
class WorldConfig:
    map: OccupancyMap
    targets: list[TargetState]
    robots: list[Pose2D]
    sensor: SensorModel
    seed: int = 0
    length_scales: tuple[float, ...] = (1.0, 4.0, 20.0)
    horizon: int = 3
    actions_per_scale: int = 10
    max_turn: float = math.pi / 4

    def __post_init__(self):
        for t in self.targets:
            if not self.map.is_free(t.x, t.y):
                raise ValueError(f"target ({t.x}, {t.y}) is not in free space")
        for p in self.robots:
            if not self.map.is_free(p.x, p.y):
                raise ValueError(f"robot start ({p.x}, {p.y}) is not in free space")
        if not self.robots:
            raise ValueError("world needs at least one robot")


def generate_actions(
    pose: Pose2D,
    occ: OccupancyMap,
    length_scales: Sequence[float],
    horizon: int,
    per_scale: int,
    rng: np.random.Generator,
    max_turn: float = math.pi / 4,
    max_tries: int = 20,
) -> list[ActionPlan]:
    """Sample collision-free candidate actions at several length scales.

    Each action is ``horizon`` waypoints spaced ``scale / horizon`` apart. The
    first heading is uniform; each later step turns by at most ``max_turn``.
    Up to ``per_scale * max_tries`` attempts are made per scale and plans that
    leave free space are discarded, so tight maps may yield fewer plans.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if not occ.is_free(pose.x, pose.y):
        raise ValueError(f"pose ({pose.x}, {pose.y}) is in occupied space")
    n_try = per_scale * max_tries
    plans: list[ActionPlan] = []
    for scale in length_scales:
        step = scale / horizon
        heading0 = rng.uniform(-math.pi, math.pi, n_try)
        turns = rng.uniform(-max_turn, max_turn, (n_try, horizon - 1))
        headings = heading0[:, None] + np.concatenate([np.zeros((n_try, 1)), np.cumsum(turns, axis=1)], axis=1)
        xs = pose.x + step * np.cumsum(np.cos(headings), axis=1)
        ys = pose.y + step * np.cumsum(np.sin(headings), axis=1)
        ok = _path_free(occ, pose.x, pose.y, xs, ys, step)
        for k in np.flatnonzero(ok)[:per_scale]:
            plans.append(ActionPlan([Pose2D(float(x), float(y), float(h)) for x, y, h in zip(xs[k], ys[k], headings[k])], scale))
    return plans


def _path_free(occ: OccupancyMap, x0: float, y0: float, xs: np.ndarray, ys: np.ndarray, step: float) -> np.ndarray:
    """Collision check of a batch of polylines starting at ``(x0, y0)``; ``xs``/``ys`` have shape ``(batch, T)``."""
    ok = np.all(occ.is_free(xs, ys), axis=1)
    if not ok.any():
        return ok
    xs, ys = xs[ok], ys[ok]
    n = max(2, int(math.ceil(step / (0.25 * occ.resolution))) + 1)
    t = np.linspace(0.0, 1.0, n)
    sx = np.concatenate([np.full((xs.shape[0], 1), x0), xs], axis=1)
    sy = np.concatenate([np.full((ys.shape[0], 1), y0), ys], axis=1)
    px = sx[:, :-1, None] + t * (sx[:, 1:, None] - sx[:, :-1, None])
    py = sy[:, :-1, None] + t * (sy[:, 1:, None] - sy[:, :-1, None])
    ok[ok] = np.all(occ.is_free(px, py), axis=(1, 2))
    return ok


def simulate_run(world: WorldConfig, n_scans: int, rng: np.random.Generator):
    """Drive the robots round-robin and scan at every waypoint.

    Each robot follows a uniformly chosen candidate action to completion before
    picking the next one. A robot with no valid action turns in place to a
    random heading. Targets hidden behind occupied cells are not detected.

    Returns ``(scans, truth)`` where ``truth.poses[i]`` produced ``scans[i]``.
    """
    poses = list(world.robots)
    queues: list[list[Pose2D]] = [[] for _ in poses]
    txs = np.array([t.x for t in world.targets], dtype=float)
    tys = np.array([t.y for t in world.targets], dtype=float)
    scans: list[MeasurementSet] = []
    truth_poses: list[Pose2D] = []
    for k in range(n_scans):
        i = k % len(poses)
        if not queues[i]:
            plans = generate_actions(
                poses[i], world.map, world.length_scales, world.horizon, world.actions_per_scale, rng, world.max_turn
            )
            if plans:
                queues[i] = list(plans[int(rng.integers(len(plans)))].poses)
            else:
                queues[i] = [Pose2D(poses[i].x, poses[i].y, rng.uniform(-math.pi, math.pi))]
        poses[i] = queues[i].pop(0)
        pose = poses[i]
        visible = world.map.line_of_sight(pose.x, pose.y, txs, tys) if len(txs) else None
        scans.append(simulate_measurement_set(world.targets, pose, world.sensor, rng, visible=visible, scan_id=k))
        truth_poses.append(pose)
    return scans, GroundTruthScene(list(world.targets), truth_poses)


def ospa_distance(
    estimated: Sequence[TargetState],
    truth: Sequence[TargetState],
    cutoff: float = 1.0,
    order: float = 1.0,
) -> float:
    """Optimal subpattern assignment distance between two finite point sets."""
    if not cutoff > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if not order >= 1:
        raise ValueError(f"order must be at least 1, got {order}")
    m, n = len(estimated), len(truth)
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(cutoff)
    a = np.array([[t.x, t.y] for t in estimated], dtype=float)
    b = np.array([[t.x, t.y] for t in truth], dtype=float)
    d = np.minimum(cutoff, np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)) ** order
    rows, cols = linear_sum_assignment(d)
    cost = d[rows, cols].sum() + cutoff**order * abs(m - n)
    return float((cost / max(m, n)) ** (1.0 / order))
