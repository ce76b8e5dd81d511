import os
from pathlib import Path

import numpy as np
import pytest

from majority_kernels.data import make_blob_splits

FIXTURES = Path(__file__).parent / "fixtures"

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "status": "PASS", "notes": []})
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.failed:
            entry["status"] = "FAIL"
        elif report.skipped and entry["status"] != "FAIL":
            entry["status"] = "SKIP"
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
            entry["notes"].append(reason.removeprefix("Skipped: "))
        if report.when == "call":
            entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        notes = "; ".join(entry["notes"])
        terminalreporter.write_line(
            f"{entry['status']:<4} {number:>2}. {entry['title']}" + (f"  [{notes}]" if notes else "")
        )


@pytest.fixture
def blobs():
    return make_blob_splits(0, classes=3, dim=6, separation=6.0, train_per_class=40,
                            val_per_class=10, test_per_class=10)


@pytest.fixture
def rng():
    from majority_kernels.numeric import RngStream

    return RngStream(1234)


def desk_enabled() -> bool:
    return os.environ.get("MK_RUN_DESK") == "1"
