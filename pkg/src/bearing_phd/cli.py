"""``bearing-phd`` command line: simulate, calibrate, filter, evaluate.

Every subcommand takes ``--config`` and ``--out``; inputs default to the files
an earlier stage wrote into the same output directory. Exit status is 0 on
success, 2 for configuration errors and 3 for data errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .calibration import (
    INCH,
    CalibrationError,
    NoKneeError,
    bin_detection_rates,
    fit_clutter_density,
    fit_clutter_rate,
    fit_detection,
    label_dataset,
    select_knee,
    select_sigma_consistent,
    sigma_frontier,
)
from .config import ConfigError, RunConfig, load_config, parse_quantity
from .io import (
    DataError,
    read_filter_log,
    read_json,
    read_scans,
    read_truth,
    write_csv,
    write_json,
    write_scans,
    write_truth,
)
from .models import ClutterParams, DetectionParams, MeasurementParams, SensorModel
from .phd import BirthModel, PhdFilter
from .sim import OccupancyMap, WorldConfig, ospa_distance, simulate_run

log = logging.getLogger("bearing_phd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _load_map(cfg: RunConfig) -> OccupancyMap:
    if cfg.world.map_path is None:
        raise ConfigError("world.map is required for this command")
    try:
        return OccupancyMap.from_text(cfg.resolve(cfg.world.map_path).read_text())
    except ValueError as exc:
        raise ConfigError(f"world.map: {exc}") from None


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    occ = _load_map(cfg)
    try:
        world = WorldConfig(
            occ,
            cfg.world.targets,
            cfg.world.robots,
            cfg.sensor,
            cfg.seed,
            tuple(cfg.world.length_scales),
            cfg.world.horizon,
            cfg.world.actions_per_scale,
            cfg.world.max_turn,
        )
    except ValueError as exc:
        raise ConfigError(f"world: {exc}") from None
    scans, truth = simulate_run(world, cfg.world.n_scans, np.random.default_rng(cfg.seed))
    out.mkdir(parents=True, exist_ok=True)
    write_scans(out / "scans.jsonl", scans)
    write_truth(out / "truth.json", truth, cfg.hash())
    (out / "map.txt").write_text(occ.to_text())
    summary = {"scans": len(scans), "measurements": sum(len(s.bearings) for s in scans)}
    print(f"{summary['scans']} measurement sets, {summary['measurements']} measurements")
    return summary


def _choose_sigma(cfg: RunConfig, frontier, override: float | None) -> tuple[float, str, float | None]:
    if override is not None:
        return override, "override", None
    try:
        knee = select_knee(frontier, cfg.calibration.knee_curve)
    except NoKneeError:
        knee = None
    if cfg.calibration.sigma_method == "knee":
        if knee is None:
            raise CalibrationError("sigma frontier has no knee; pass --sigma-override")
        return knee, "knee", knee
    try:
        return select_sigma_consistent(frontier), "consistency", knee
    except CalibrationError:
        if knee is None:
            raise
        log.warning("no residual-consistency crossing on the frontier; falling back to the knee")
        return knee, "knee", knee


def cmd_calibrate(cfg: RunConfig, scans_path: Path, truth_path: Path, out: Path, sigma_override: float | None = None) -> dict:
    scans = read_scans(scans_path)
    truth = read_truth(truth_path)
    if not scans:
        raise DataError(f"{scans_path}: dataset is empty")
    if len(truth.poses) != len(scans):
        raise DataError(f"{len(scans)} scans but {len(truth.poses)} ground-truth poses")
    cal = cfg.calibration
    fov = cfg.sensor.fov
    theta_sep = cfg.sensor.detection.theta_sep
    frontier = sigma_frontier(
        scans, truth, cal.sigma_grid, cal.p_fn_grid, cal.d_t_grid, theta_sep, fov, cal.range_bin, cal.weighted_detection_fit
    )
    sigma, method, knee = _choose_sigma(cfg, frontier, sigma_override)
    data = label_dataset(scans, truth, sigma, fov)
    det = fit_detection(bin_detection_rates(data, cal.range_bin), cal.p_fn_grid, cal.d_t_grid, theta_sep, fov, cal.weighted_detection_fit)
    params = {
        "sigma_rad": sigma,
        "sigma_deg": math.degrees(sigma),
        "p_fn": det.p_fn,
        "d_t_m": det.d_t,
        "d_t_in": det.d_t / INCH,
        "theta_sep_rad": theta_sep,
    }
    report = {
        "config_hash": cfg.hash(),
        "sigma_selection": {"method": method, "sigma_rad": sigma, "knee_sigma_rad": knee},
        "counts": {
            "scans": len(scans),
            "measurements": data.n_measurements,
            "detections": len(data.detections),
            "false_negatives": len(data.false_negatives),
            "clutter": len(data.clutter_bearings),
        },
        "detection": {"status": "ok", "sse": det.sse},
        "frontier": [
            {"sigma_rad": p.sigma, "detection_sse": p.detection_sse, "inlier_fraction": p.inlier_fraction, "residual_std_rad": p.residual_std}
            for p in frontier
        ],
        "parameters": params,
    }
    try:
        dens = fit_clutter_density(data.clutter_bearings, cal.clutter_bin, cal.theta_c_grid, cal.p_u_grid, fov)
        params.update(theta_c_rad=dens.theta_c, theta_c_pi=dens.theta_c / math.pi, p_u=dens.p_u)
        report["clutter_density"] = {"status": "ok", "sse": dens.sse}
    except CalibrationError as exc:
        dens = None
        params.update(theta_c_rad=None, theta_c_pi=None, p_u=None)
        report["clutter_density"] = {"status": "rejected", "reason": str(exc)}
    rate = fit_clutter_rate(data.clutter_counts, cal.mu_grid)
    params.update(mu_mle=rate.mu_mle, mu_histogram=rate.mu_histogram_sse)
    report["clutter_rate"] = {"status": "ok", "histogram_sse": rate.sse}

    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "calibration.json", _nan_to_none(report))
    write_csv(
        out / "frontier.csv",
        ["sigma_rad", "detection_sse", "inlier_fraction", "residual_std_rad"],
        [(p.sigma, p.detection_sse, p.inlier_fraction, p.residual_std) for p in frontier],
    )
    write_csv(out / "detection_bins.csv", ["range_m", "empirical", "model"], det.residuals)
    write_csv(
        out / "clutter_bins.csv",
        ["bearing_lo_rad", "bearing_hi_rad", "empirical_density", "model_density"],
        dens.bins if dens is not None else [],
    )
    write_csv(out / "clutter_counts.csv", ["count", "empirical_freq", "poisson_pmf"], rate.histogram)
    print(
        f"sigma {math.degrees(sigma):.3f} deg ({method}), p_fn {det.p_fn:.3f}, d_t {det.d_t / INCH:.3f} in, "
        + (f"theta_c {dens.theta_c / math.pi:.4f} pi, p_u {dens.p_u:.3f}, " if dens else "clutter density rejected, ")
        + f"mu {rate.mu_mle:.4f}"
    )
    return report


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_to_none(v) for v in obj]
    return obj


def calibrated_model(cfg: RunConfig, calibration: dict) -> SensorModel:
    """Sensor model from a calibration report; beam separation and FOV come from the config."""
    p = calibration.get("parameters", {})
    missing = [k for k in ("p_fn", "d_t_m", "sigma_rad", "theta_c_rad", "p_u", "mu_mle") if p.get(k) is None]
    if missing:
        raise DataError(f"calibration is missing parameters: {', '.join(missing)}")
    try:
        return SensorModel(
            DetectionParams(p["p_fn"], p["d_t_m"], cfg.sensor.detection.theta_sep),
            MeasurementParams(p["sigma_rad"]),
            ClutterParams(p["theta_c_rad"], p["p_u"], p["mu_mle"]),
            cfg.sensor.fov,
        )
    except ValueError as exc:
        raise DataError(f"calibrated parameters are invalid: {exc}") from None


def cmd_filter(cfg: RunConfig, scans_path: Path, params_path: Path, out: Path) -> list[dict]:
    calibration = read_json(params_path, "calibration report")
    model = calibrated_model(cfg, calibration)
    scans = read_scans(scans_path)
    occ = _load_map(cfg)
    fc = cfg.filter
    filt = PhdFilter(model, BirthModel(fc.birth_rate, occ, fc.birth_particles), fc, seed=cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    records = [{"scan_index": -1, "scan_id": None, "cardinality": filt.state.mass, "targets": []}]
    with open(out / "filter_log.jsonl", "w") as fh:
        fh.write(json.dumps(records[0]) + "\n")
        for k, scan in enumerate(scans):
            filt.step(scan)
            est = filt.estimate()
            rec = {
                "scan_index": k,
                "scan_id": scan.scan_id,
                "cardinality": filt.state.mass,
                "targets": [[t.x, t.y] for t in est],
            }
            fh.write(json.dumps(rec) + "\n")
            records.append(rec)
    final = records[-1]
    write_json(out / "targets.json", {"config_hash": cfg.hash(), "cardinality": final["cardinality"], "targets": final["targets"]})
    (out / "filter_state.json").write_text(filt.checkpoint() + "\n")
    print(f"{len(scans)} scans filtered, final cardinality {final['cardinality']:.3f}, {len(final['targets'])} targets extracted")
    return records


def smooth(series, window: int) -> np.ndarray:
    """Trailing moving average; early entries average over what is available."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        return x
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - max(1, window))
    return (c[idx] - c[lo]) / (idx - lo)


def cmd_evaluate(cfg: RunConfig, log_path: Path, truth_path: Path, out: Path) -> dict:
    records = [r for r in read_filter_log(log_path) if r["scan_index"] >= 0]
    truth = read_truth(truth_path)
    if len(records) != len(truth.poses):
        raise DataError(f"filter log has {len(records)} scans but ground truth has {len(truth.poses)}")
    ev = cfg.evaluate
    ospa = [ospa_distance(r["targets"], truth.targets, ev.ospa_cutoff, ev.ospa_order) for r in records]
    smoothed = smooth(ospa, ev.smoothing_window)
    card = np.array([float(r["cardinality"]) for r in records])
    n = len(records)
    q = n // 4
    metrics = {
        "config_hash": cfg.hash(),
        "n_scans": n,
        "n_targets": len(truth.targets),
        "ospa_cutoff_m": ev.ospa_cutoff,
        "ospa_order": ev.ospa_order,
        "ospa": ospa,
        "ospa_smoothed": smoothed.tolist(),
        "ospa_smoothed_first_quarter": float(smoothed[:q].mean()) if q else None,
        "ospa_smoothed_last_quarter": float(smoothed[n - q :].mean()) if q else None,
        "final_cardinality": float(card[-1]) if n else 0.0,
        "final_cardinality_error": (float(card[-1]) if n else 0.0) - len(truth.targets),
        "final_extracted_count": len(records[-1]["targets"]) if n else 0,
        "mean_cardinality_final_100": float(card[-100:].mean()) if n else None,
    }
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "metrics.json", metrics)
    write_csv(
        out / "ospa.csv",
        ["scan_index", "ospa", "ospa_smoothed", "cardinality"],
        [(r["scan_index"], o, s, c) for r, o, s, c in zip(records, ospa, smoothed.tolist(), card.tolist())],
    )
    if n:
        print(f"final cardinality {card[-1]:.3f} (truth {len(truth.targets)}), final OSPA {ospa[-1]:.4f}")
    else:
        print("no scans to evaluate")
    return metrics


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bearing-phd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("simulate", help="simulate robots scanning a world"))
    p = common(sub.add_parser("calibrate", help="fit sensor models to labeled scans"))
    p.add_argument("--scans", help="scans JSONL (default OUT/scans.jsonl)")
    p.add_argument("--truth", help="ground truth JSON (default OUT/truth.json)")
    p.add_argument("--sigma-override", help="use this sigma instead of selecting one, e.g. 2.25deg")
    p = common(sub.add_parser("filter", help="run the PHD filter over scans"))
    p.add_argument("--scans", help="scans JSONL (default OUT/scans.jsonl)")
    p.add_argument("--params", help="calibration report (default OUT/calibration.json)")
    p = common(sub.add_parser("evaluate", help="score a filter log against ground truth"))
    p.add_argument("--log", help="filter log JSONL (default OUT/filter_log.jsonl)")
    p.add_argument("--truth", help="ground truth JSON (default OUT/truth.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "calibrate":
            override = parse_quantity(args.sigma_override, "angle") if args.sigma_override else None
            if override is not None and not override > 0:
                raise ConfigError("--sigma-override must be positive")
            cmd_calibrate(cfg, Path(args.scans or out / "scans.jsonl"), Path(args.truth or out / "truth.json"), out, override)
        elif args.command == "filter":
            cmd_filter(cfg, Path(args.scans or out / "scans.jsonl"), Path(args.params or out / "calibration.json"), out)
        else:
            cmd_evaluate(cfg, Path(args.log or out / "filter_log.jsonl"), Path(args.truth or out / "truth.json"), out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CalibrationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
