"""File formats shared by the command-line tools.

* ``scans.jsonl``: one measurement set per line,
  ``{"scan_id": 0, "pose": [x, y, heading], "bearings": [...]}``.
* ``truth.json``: ``{"config_hash": ..., "targets": [[x, y], ...], "poses": [[x, y, h], ...]}``.
* filter log JSONL: one record per scan (plus the initial state at index -1),
  ``{"scan_index": k, "cardinality": c, "targets": [[x, y], ...]}``.

Floats are written with ``repr`` precision so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable

from .calibration import GroundTruthScene
from .models import MeasurementSet, Pose2D, TargetState


class DataError(ValueError):
    """An input file is missing, malformed or inconsistent with another input."""


def measurement_set_to_json(ms: MeasurementSet) -> str:
    return json.dumps({"scan_id": ms.scan_id, "pose": ms.pose.as_list(), "bearings": [float(b) for b in ms.bearings]})


def measurement_set_from_json(line: str) -> MeasurementSet:
    d = json.loads(line)
    return MeasurementSet(Pose2D(*d["pose"]), [float(b) for b in d["bearings"]], d.get("scan_id", 0))


def write_scans(path: str | Path, scans: Iterable[MeasurementSet]) -> None:
    Path(path).write_text("".join(measurement_set_to_json(s) + "\n" for s in scans))


def read_scans(path: str | Path) -> list[MeasurementSet]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"scan file not found: {path}")
    out = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(measurement_set_from_json(line))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{n}: bad measurement set ({exc})") from None
    return out


def write_truth(path: str | Path, truth: GroundTruthScene, config_hash: str) -> None:
    d = {
        "config_hash": config_hash,
        "targets": [[t.x, t.y] for t in truth.targets],
        "poses": [p.as_list() for p in truth.poses],
    }
    Path(path).write_text(json.dumps(d) + "\n")


def read_truth(path: str | Path) -> GroundTruthScene:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"truth file not found: {path}")
    try:
        d = json.loads(path.read_text())
        return GroundTruthScene([TargetState(*t) for t in d["targets"]], [Pose2D(*p) for p in d["poses"]])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad ground truth ({exc})") from None


def read_json(path: str | Path, what: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_filter_log(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"filter log not found: {path}")
    records = []
    for n, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rec["scan_index"] = int(rec["scan_index"])
            rec["targets"] = [TargetState(float(x), float(y)) for x, y in rec["targets"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}:{n}: bad filter log record ({exc})") from None
        records.append(rec)
    return records


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
