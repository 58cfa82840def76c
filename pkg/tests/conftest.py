import numpy as np
import pytest

from cdiffmr.masks import ScheduleSpec, build_mask_family
from cdiffmr.phantom import PhantomSpec, gen_phantom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h, w=None):
    w = h if w is None else w
    return rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))


@pytest.fixture
def phantom64():
    return gen_phantom(PhantomSpec(size=64, seed=3))


@pytest.fixture(scope="session")
def log_family64():
    return build_mask_family(ScheduleSpec("log", 100, 0.01), 64, seed=0)


@pytest.fixture(scope="session")
def lin_family64():
    return build_mask_family(ScheduleSpec("lin", 100, 0.01), 64, seed=0)


@pytest.fixture(scope="session")
def small_family():
    return build_mask_family(ScheduleSpec("lin", 10, 0.25), 16, seed=5)


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------

_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    key = name.split("[")[0]
    entry = _criteria.setdefault(key, {"ok": True, "ran": False, "detail": []})
    if report.when == "call":
        entry["ran"] = True
    if report.failed:
        entry["ok"] = False
        entry["ran"] = True
    for k, v in report.user_properties:
        if k == "detail" and report.when == "call":
            entry["detail"].append(v)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_criteria, key=lambda k: int(k.split("_")[2])):
        entry = _criteria[key]
        if not entry["ran"]:
            continue
        status = "PASS" if entry["ok"] else "FAIL"
        detail = "; ".join(entry["detail"])
        terminalreporter.write_line(f"criterion {key.split('_')[2]}: {status}  {detail}".rstrip())
