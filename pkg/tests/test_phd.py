import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bearing_phd.models import (
    ClutterParams,
    DetectionParams,
    FieldOfView,
    MeasurementParams,
    MeasurementSet,
    Pose2D,
    SensorModel,
    TargetState,
    simulate_measurement_set,
)
from bearing_phd.phd import (
    BirthModel,
    FilterConfig,
    PhdFilter,
    PhdParticleSet,
    RectRegion,
    estimate_cardinality,
    extract_targets,
    mass_decomposition,
    predict,
    resample,
    update,
)
from bearing_phd.sim import OccupancyMap

INCH = 0.0254
FOV = FieldOfView(-0.75 * math.pi, 0.75 * math.pi, 5.0)
MODEL = SensorModel(
    DetectionParams(0.210, 1.28 * INCH, math.radians(0.5)),
    MeasurementParams(math.radians(2.25)),
    ClutterParams(0.2 * math.pi, 0.725, 0.5319),
    FOV,
)


def _random_set(rng, n, spread=6.0):
    return PhdParticleSet(rng.uniform(-spread, spread, (n, 2)), rng.uniform(0, 0.05, n))


def test_particle_set_validation():
    with pytest.raises(ValueError):
        PhdParticleSet(np.zeros((2, 2)), [1.0])
    with pytest.raises(ValueError):
        PhdParticleSet(np.zeros((1, 2)), [-1.0])
    with pytest.raises(ValueError):
        PhdParticleSet(np.zeros((1, 2)), [np.inf])


def test_particle_set_round_trip():
    s = _random_set(np.random.default_rng(0), 10)
    s.timestamp = 4
    back = PhdParticleSet.from_dict(json.loads(json.dumps(s.to_dict())))
    assert np.array_equal(back.states, s.states) and np.array_equal(back.weights, s.weights) and back.timestamp == 4


def test_birth_model_validation():
    with pytest.raises(ValueError):
        BirthModel(-0.1, RectRegion(0, 1, 0, 1))
    with pytest.raises(ValueError):
        RectRegion(1, 0, 0, 1)


def test_predict_identity():
    s = _random_set(np.random.default_rng(1), 20)
    p = predict(s, BirthModel(0.0, RectRegion(0, 1, 0, 1)), 1.0, np.random.default_rng(0))
    assert np.array_equal(p.states, s.states) and np.array_equal(p.weights, s.weights)
    assert p.timestamp == s.timestamp + 1


def test_predict_survival_scaling():
    s = PhdParticleSet(np.zeros((10, 2)), np.ones(10))
    p = predict(s, BirthModel(0.0, RectRegion(0, 1, 0, 1)), 0.99, np.random.default_rng(0))
    assert p.mass == pytest.approx(9.9)


def test_predict_birth_mass_and_support():
    s = _random_set(np.random.default_rng(2), 20)
    occ = OccupancyMap.walled_room(4, 3, 0.1)
    p = predict(s, BirthModel(0.2, occ, 300), 1.0, np.random.default_rng(0))
    assert p.mass - s.mass == pytest.approx(0.2, abs=1e-14)
    born = p.states[len(s):]
    assert born.shape == (300, 2)
    assert np.all(occ.is_free(born[:, 0], born[:, 1]))


def test_predict_rejects_bad_survival():
    with pytest.raises(ValueError):
        predict(PhdParticleSet.empty(), BirthModel(0.0, RectRegion(0, 1, 0, 1)), 1.5, np.random.default_rng(0))


def test_update_outside_fov_unchanged():
    s = PhdParticleSet([[-1.0, 0.01], [-2.0, -0.02], [10.0, 0.0]], [0.3, 0.4, 0.5])
    z = MeasurementSet(Pose2D(0, 0, 0), [0.0, 0.4, math.pi / 2])
    u = update(s, z, MODEL)
    assert np.array_equal(u.weights, s.weights)


def test_update_empty_scan_scales_by_p_fn():
    # saturated ranges, inside the FOV: p_d = 1 - p_fn everywhere
    s = PhdParticleSet([[1.0, 0.0], [0.0, 1.5], [1.0, -1.0]], [0.2, 0.5, 1.0])
    u = update(s, MeasurementSet(Pose2D(0, 0, 0), []), MODEL)
    assert np.allclose(u.weights, 0.21 * s.weights, rtol=1e-14)


def _brute_force_update(states, weights, pose, bearings, model):
    """Corrector evaluated one term at a time from the model formulas."""
    det, fov = model.detection, model.fov
    sigma = model.measurement.sigma
    clut = model.clutter

    def pd(x, y):
        r = math.hypot(x - pose.x, y - pose.y)
        b = math.atan2(y - pose.y, x - pose.x) - pose.heading
        b = math.atan2(math.sin(b), math.cos(b))
        if r > fov.r_max or not fov.b_min <= b <= fov.b_max:
            return 0.0, b
        cov = 1.0 if r == 0 else min(1.0, det.d_t / (r * det.theta_sep))
        return (1 - det.p_fn) * cov, b

    def g(z, b):
        e = math.atan2(math.sin(z - b), math.cos(z - b))
        norm = math.erf(math.pi / (sigma * math.sqrt(2)))
        return math.exp(-0.5 * (e / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi) * norm)

    def c(z):
        if not fov.b_min <= z <= fov.b_max:
            return 0.0
        val = clut.p_u * clut.mu / (fov.b_max - fov.b_min)
        if abs(abs(z) - math.pi / 2) <= clut.theta_c / 2:
            val += (1 - clut.p_u) * clut.mu / (2 * clut.theta_c)
        return val

    terms = [pd(x, y) for x, y in states]
    out = []
    for (p, b), w in zip(terms, weights):
        new = (1 - p) * w
        for z in bearings:
            denom = c(z) + sum(pj * g(z, bj) * wj for (pj, bj), wj in zip(terms, weights))
            new += p * g(z, b) * w / denom
        out.append(new)
    return out


def test_update_three_particles_one_measurement():
    states = [[1.0, 0.05], [2.0, 0.3], [4.9, -0.4]]
    weights = [0.5, 0.25, 0.7]
    pose = Pose2D(0.1, -0.1, 0.05)
    z = [0.1]
    u = update(PhdParticleSet(states, weights), MeasurementSet(pose, z), MODEL)
    ref = _brute_force_update(states, weights, pose, z, MODEL)
    assert np.max(np.abs(u.weights - ref)) < 1e-12


def test_update_matches_brute_force_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = _random_set(rng, 8)
        pose = Pose2D(*rng.uniform(-1, 1, 2), rng.uniform(-3, 3))
        z = rng.uniform(FOV.b_min, FOV.b_max, rng.integers(0, 4)).tolist()
        u = update(s, MeasurementSet(pose, z), MODEL)
        ref = _brute_force_update(s.states.tolist(), s.weights.tolist(), pose, z, MODEL)
        assert np.max(np.abs(u.weights - ref)) < 1e-12


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), m=st.integers(0, 6))
def test_update_mass_balance(seed, n, m):
    rng = np.random.default_rng(seed)
    s = _random_set(rng, n)
    pose = Pose2D(*rng.uniform(-1, 1, 2), rng.uniform(-3, 3))
    z = MeasurementSet(pose, rng.uniform(FOV.b_min, FOV.b_max, m).tolist())
    u = update(s, z, MODEL)
    missed, shares = mass_decomposition(s, z, MODEL)
    assert abs(u.mass - (missed + sum(shares))) < 1e-9
    assert all(0 <= sh <= 1 for sh in shares)
    assert np.all(np.isfinite(u.weights)) and np.all(u.weights >= 0)


def test_update_zero_clutter_measurement_without_mass():
    model = SensorModel(MODEL.detection, MODEL.measurement, ClutterParams(0.2 * math.pi, 0.0, 0.5), FOV)
    s = PhdParticleSet([[-1.0, 0.0]], [1.0])
    # bearing 0 is outside the clutter peaks and no particle can explain it
    u = update(s, MeasurementSet(Pose2D(0, 0, 0), [0.0]), model)
    assert np.array_equal(u.weights, s.weights)


def test_estimate_cardinality():
    assert estimate_cardinality(PhdParticleSet.empty()) == 0
    assert estimate_cardinality(PhdParticleSet(np.zeros((3, 2)), [0.5, 0.5, 1.0])) == 2.0


def test_mass_grows_toward_one_with_detections():
    target = TargetState(2.0, 0.5)
    occ = OccupancyMap.walled_room(6, 4, 0.1)
    # the script detects the target every scan, so the sensor must claim p_fn = 0
    model_nc = SensorModel(DetectionParams(0.0, 1.28 * INCH, math.radians(0.5)), MODEL.measurement, ClutterParams(0.2 * math.pi, 0.725, 0.05), FOV)
    filt = PhdFilter(model_nc, BirthModel(0.05, occ, 500), FilterConfig(birth_rate=0.05, birth_particles=500), seed=1)
    poses = [Pose2D(0.5, 0.5, 0.0), Pose2D(0.5, 3.0, -0.8), Pose2D(3.5, 0.5, 2.5)]
    masses = []
    for k in range(60):
        pose = poses[k % 3]
        ms = MeasurementSet(pose, [math.atan2(target.y - pose.y, target.x - pose.x) - pose.heading])
        filt.step(ms)
        masses.append(filt.state.mass)
    assert masses[0] < masses[-1]
    assert masses[-1] == pytest.approx(1.0, abs=0.2)
    near = np.hypot(*(filt.state.states - [target.x, target.y]).T) < 0.3
    assert filt.state.weights[near].sum() == pytest.approx(1.0, abs=0.05)


def test_extract_single_point():
    s = PhdParticleSet(np.tile([1.5, -2.0], (30, 1)), np.full(30, 1 / 30))
    (t,) = extract_targets(s)
    assert (t.x, t.y) == pytest.approx((1.5, -2.0))


def test_extract_two_blobs():
    rng = np.random.default_rng(0)
    a = rng.normal([0, 0], 0.05, (200, 2))
    b = rng.normal([3, 1], 0.05, (200, 2))
    s = PhdParticleSet(np.vstack([a, b]), np.full(400, 1 / 200))
    est = sorted(extract_targets(s, rng=np.random.default_rng(1)), key=lambda t: t.x)
    assert len(est) == 2
    assert math.hypot(est[0].x, est[0].y) < 0.15
    assert math.hypot(est[1].x - 3, est[1].y - 1) < 0.15


def test_extract_small_mass_empty():
    s = PhdParticleSet(np.zeros((5, 2)), np.full(5, 0.04))
    assert extract_targets(s) == []
    assert extract_targets(_random_set(np.random.default_rng(0), 10), 0) == []
    with pytest.raises(ValueError):
        extract_targets(s, -1)


def test_extract_deterministic_given_seed():
    s = _random_set(np.random.default_rng(5), 300)
    a = extract_targets(s, 3, np.random.default_rng(9))
    b = extract_targets(s, 3, np.random.default_rng(9))
    assert a == b


def test_resample_uniform_weights():
    s = PhdParticleSet(np.random.default_rng(0).normal(size=(50, 2)), np.full(50, 0.1))
    r = resample(s, 100, np.random.default_rng(1))
    assert r.mass == s.mass
    assert len(r) == 500


def test_resample_dominant_particle():
    w = np.full(10, 1e-12)
    w[3] = 2.0
    s = PhdParticleSet(np.arange(20.0).reshape(10, 2), w)
    r = resample(s, 50, np.random.default_rng(2))
    assert np.all(r.states == s.states[3])
    assert abs(r.mass - s.mass) <= np.spacing(s.mass)


def test_resample_zero_mass():
    s = PhdParticleSet(np.zeros((3, 2)), np.zeros(3))
    assert len(resample(s, 100, np.random.default_rng(0))) == 0


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 300), ppu=st.floats(1, 500), jitter=st.floats(0, 0.1))
def test_resample_preserves_mass(seed, n, ppu, jitter):
    rng = np.random.default_rng(seed)
    s = PhdParticleSet(rng.normal(size=(n, 2)), rng.exponential(0.1, n))
    r = resample(s, ppu, rng, jitter=jitter)
    assert abs(r.mass - s.mass) <= 1e-12 * max(1.0, s.mass)
    assert np.all(r.weights >= 0)
    assert len(r) == max(1, int(round(s.mass * ppu)))


def _run_filter(seed, n=40):
    occ = OccupancyMap.walled_room(8, 6, 0.1)
    targets = [TargetState(2, 2), TargetState(6, 4)]
    rng = np.random.default_rng(seed)
    poses = [Pose2D(*rng.uniform(1, 5, 2), rng.uniform(-3, 3)) for _ in range(n)]
    scans = [simulate_measurement_set(targets, p, MODEL, rng) for p in poses]
    f = PhdFilter(MODEL, BirthModel(0.05, occ, 200), FilterConfig(birth_particles=200, particles_per_unit_mass=300), seed=4)
    log = []
    for s in scans:
        f.step(s)
        log.append((f.state.mass, [(t.x, t.y) for t in f.estimate()]))
    return f, log


def test_filter_replay_stable():
    f1, a = _run_filter(0)
    f2, b = _run_filter(0)
    assert a == b
    assert f1.checkpoint() == f2.checkpoint()


def test_filter_checkpoint_restore():
    f, _ = _run_filter(1, 10)
    text = f.checkpoint()
    g = PhdFilter(MODEL, f.birth, f.config, seed=4)
    g.restore(text)
    assert g.checkpoint() == text
    assert g.state.timestamp == 10
