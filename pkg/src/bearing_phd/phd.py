"""Sequential Monte Carlo PHD filter for static targets seen by a bearing-only sensor.

The particle weights carry the PHD: their sum is the expected number of
targets. Detection, bearing likelihood and clutter intensity come from
:mod:`bearing_phd.models`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from .models import (
    MeasurementSet,
    SensorModel,
    TargetState,
    bearing_error_density,
    clutter_density,
    detection_probability_rb,
    relative_range_bearing_xy,
)


@dataclass
class PhdParticleSet:
    states: np.ndarray  # (n, 2) positions
    weights: np.ndarray  # (n,)
    timestamp: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.states.shape[0] != self.weights.shape[0]:
            raise ValueError("states and weights differ in length")
        if np.any(~np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("particle weights must be finite and non-negative")

    @classmethod
    def empty(cls, timestamp: int = 0) -> "PhdParticleSet":
        return cls(np.zeros((0, 2)), np.zeros(0), timestamp)

    def __len__(self):
        return self.weights.size

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "states": self.states.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhdParticleSet":
        return cls(np.asarray(d["states"], dtype=float).reshape(-1, 2), np.asarray(d["weights"], dtype=float), int(d["timestamp"]))


class RectRegion:
    """Axis-aligned box birth support."""

    def __init__(self, x_min: float, x_max: float, y_min: float, y_max: float):
        if not (x_min < x_max and y_min < y_max):
            raise ValueError("empty birth region")
        self.bounds = (x_min, x_max, y_min, y_max)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        x_min, x_max, y_min, y_max = self.bounds
        return np.column_stack([rng.uniform(x_min, x_max, n), rng.uniform(y_min, y_max, n)])


@dataclass
class BirthModel:
    """Uniform birth intensity: ``birth_rate`` expected new targets per scan over ``region``.

    ``region`` is anything with ``sample(n, rng) -> (n, 2)``; an
    :class:`~bearing_phd.sim.OccupancyMap` samples its free space.
    """

    birth_rate: float
    region: object
    n_particles: int = 200

    def __post_init__(self):
        if not self.birth_rate >= 0:
            raise ValueError(f"birth rate must be non-negative, got {self.birth_rate}")
        if self.n_particles < 0:
            raise ValueError("birth particle count must be non-negative")


def predict(phd: PhdParticleSet, birth: BirthModel, survival_prob: float, rng: np.random.Generator) -> PhdParticleSet:
    """Static-target prediction: scale by survival, append uniform birth particles."""
    if not 0.0 <= survival_prob <= 1.0:
        raise ValueError(f"survival probability must lie in [0, 1], got {survival_prob}")
    states = phd.states
    weights = phd.weights * survival_prob
    if birth.birth_rate > 0 and birth.n_particles > 0:
        born = birth.region.sample(birth.n_particles, rng)
        states = np.vstack([states, born])
        weights = np.concatenate([weights, np.full(birth.n_particles, birth.birth_rate / birth.n_particles)])
    return PhdParticleSet(states.copy(), weights, phd.timestamp + 1)


def _detection_terms(phd: PhdParticleSet, scan: MeasurementSet, model: SensorModel):
    """Detection probabilities ``(n,)``, likelihoods ``(m, n)`` and clutter intensities ``(m,)``."""
    r, b = relative_range_bearing_xy(phd.states[:, 0], phd.states[:, 1], scan.pose)
    pd = detection_probability_rb(r, b, model.detection, model.fov)
    z = np.asarray(scan.bearings, dtype=float)
    g = bearing_error_density(z[:, None] - b[None, :], model.measurement.sigma) if z.size else np.zeros((0, b.size))
    c = np.atleast_1d(clutter_density(z, model.clutter, model.fov)) if z.size else np.zeros(0)
    return pd, g, c


def update(phd: PhdParticleSet, scan: MeasurementSet, model: SensorModel) -> PhdParticleSet:
    """PHD corrector.

    Each weight becomes ``(1 - pd) w`` plus, for every bearing ``z``,
    ``pd g(z) w / (c(z) + sum_j pd_j g_j(z) w_j)``. Bearings whose denominator
    is zero contribute nothing.
    """
    if len(phd) == 0:
        return PhdParticleSet.empty(phd.timestamp)
    pd, g, c = _detection_terms(phd, scan, model)
    w = phd.weights
    new = (1.0 - pd) * w
    if g.shape[0]:
        det = g * (pd * w)[None, :]  # (m, n)
        denom = c + det.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(denom[:, None] > 0, det / denom[:, None], 0.0)
        new = new + ratio.sum(axis=0)
    return PhdParticleSet(phd.states.copy(), new, phd.timestamp)


def mass_decomposition(phd: PhdParticleSet, scan: MeasurementSet, model: SensorModel) -> tuple[float, list[float]]:
    """Posterior mass split into the missed-detection part and one share per bearing."""
    pd, g, c = _detection_terms(phd, scan, model)
    w = phd.weights
    missed = float(np.sum((1.0 - pd) * w))
    shares = []
    for k in range(g.shape[0]):
        dk = float(np.sum(pd * g[k] * w))
        shares.append(dk / (c[k] + dk) if c[k] + dk > 0 else 0.0)
    return missed, shares


def estimate_cardinality(phd: PhdParticleSet) -> float:
    return phd.mass


def resample(
    phd: PhdParticleSet,
    particles_per_unit_mass: float,
    rng: np.random.Generator,
    jitter: float = 0.0,
    min_particles: int = 1,
) -> PhdParticleSet:
    """Systematic resampling to about ``mass * particles_per_unit_mass`` equal-weight particles.

    Total mass is preserved. ``jitter`` adds Gaussian roughening (meters) to
    the copies so static targets do not collapse onto duplicated states.
    """
    mass = phd.mass
    if mass <= 0 or len(phd) == 0:
        return PhdParticleSet.empty(phd.timestamp)
    n = max(min_particles, int(round(mass * particles_per_unit_mass)))
    cdf = np.cumsum(phd.weights)
    cdf /= cdf[-1]
    u = (rng.random() + np.arange(n)) / n
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(phd) - 1)
    states = phd.states[idx].copy()
    if jitter > 0:
        states += rng.normal(0.0, jitter, states.shape)
    weights = np.full(n, mass / n)
    # push the rounding residue into the last weight until the sum matches
    for _ in range(4):
        resid = mass - weights.sum()
        if resid == 0 or weights[-1] + resid < 0:
            break
        weights[-1] += resid
    return PhdParticleSet(states, weights, phd.timestamp)


def extract_targets(
    phd: PhdParticleSet,
    count: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[TargetState]:
    """Cluster particles into ``count`` groups (default: rounded mass) and return the centroids."""
    if count is None:
        count = int(round(phd.mass))
    if count < 0:
        raise ValueError(f"target count must be non-negative, got {count}")
    keep = phd.weights > 0
    x, w = phd.states[keep], phd.weights[keep]
    if count == 0 or x.shape[0] == 0:
        return []
    count = min(count, x.shape[0])
    rng = rng if rng is not None else np.random.default_rng(0)
    km = KMeans(n_clusters=count, n_init=1, random_state=int(rng.integers(2**31 - 1)))
    centers = km.fit(x, sample_weight=w).cluster_centers_
    return [TargetState(float(cx), float(cy)) for cx, cy in centers]


@dataclass
class FilterConfig:
    survival_prob: float = 1.0
    birth_rate: float = 0.1
    birth_particles: int = 200
    particles_per_unit_mass: float = 1000.0
    jitter: float = 0.003
    min_particles: int = 20


@dataclass
class PhdFilter:
    """A running filter: predict, update and resample for each incoming scan."""

    model: SensorModel
    birth: BirthModel
    config: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0
    state: PhdParticleSet = field(default_factory=PhdParticleSet.empty)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)

    def step(self, scan: MeasurementSet) -> PhdParticleSet:
        cfg = self.config
        phd = predict(self.state, self.birth, cfg.survival_prob, self.rng)
        phd = update(phd, scan, self.model)
        self.state = resample(phd, cfg.particles_per_unit_mass, self.rng, cfg.jitter, cfg.min_particles)
        return self.state

    def estimate(self, count: int | None = None) -> list[TargetState]:
        # fixed seed per timestamp so extraction never perturbs the filter stream
        return extract_targets(self.state, count, np.random.default_rng([self.seed, self.state.timestamp]))

    def checkpoint(self) -> str:
        return json.dumps(self.state.to_dict())

    def restore(self, text: str) -> None:
        self.state = PhdParticleSet.from_dict(json.loads(text))

