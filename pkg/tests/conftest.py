import math

import pytest
from hypothesis import settings

from bearing_phd.models import ClutterParams, DetectionParams, FieldOfView, MeasurementParams, SensorModel

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

INCH = 0.0254


@pytest.fixture
def fov():
    return FieldOfView(-0.75 * math.pi, 0.75 * math.pi, 5.0)


@pytest.fixture
def paper_model(fov):
    return SensorModel(
        DetectionParams(0.210, 1.28 * INCH, math.radians(0.25)),
        MeasurementParams(math.radians(2.25)),
        ClutterParams(0.200 * math.pi, 0.725, 0.5319),
        fov,
    )



# one PASS/FAIL line per acceptance criterion in the terminal summary
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or (report.when != "call" and report.passed):
        return
    entry = _CRITERIA.setdefault(m.args[0], {"text": m.args[1], "ok": True, "details": []})
    entry["ok"] = entry["ok"] and report.passed
    if report.when == "call":
        entry["details"] += [f"{k}={v}" for k, v in item.user_properties]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['text']}"
        if e["details"]:
            line += "  [" + ", ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
