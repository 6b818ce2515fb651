import numpy as np
import pytest

from rve_lab.damage_material import PhaseMaterial


@pytest.fixture
def matrix_mat():
    return PhaseMaterial(E=1.0, nu=0.3, kappa_D=0.125, kappa_F=1.5)


@pytest.fixture
def fiber_mat():
    return PhaseMaterial(E=4.0, nu=0.2, kappa_D=1.0, kappa_F=2.0, damageable=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one summary line per acceptance criterion, built from the outcomes of the
# tests marked with @pytest.mark.criterion(n)
_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    entry = _criteria.setdefault(mark.args[0], {"ok": True, "notes": []})
    entry["ok"] &= rep.passed
    for key, value in item.user_properties:
        if key == "detail":
            entry["notes"].append(value)
    if rep.failed and not any(k == "detail" for k, _ in item.user_properties):
        entry["notes"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {'; '.join(e['notes'])}")
