import numpy as np
import pytest


def constrained_sequence(k, n_steps, dim=3, s=0.5, seed=0):
    """Vector sequence whose BDF-k velocity is orthogonal to the BDF-k extrapolation.

    The first k states are random; every later state solves the linearized
    constraint exactly (up to rounding).
    """
    from cflow.bdf import bdf_coefficients

    sch = bdf_coefficients(k)
    delta = sch.floats("delta")
    gamma = sch.floats("gamma")
    rng = np.random.default_rng(seed)
    u = [rng.standard_normal(dim) for _ in range(k)]
    for n in range(k, n_steps + 1):
        hat = sum(gamma[j] * u[n - j - 1] for j in range(k))
        w = rng.standard_normal(dim)
        vel = w - (w @ hat) / (hat @ hat) * hat
        u.append((s * vel - sum(delta[j] * u[n - j] for j in range(1, k + 1))) / delta[0])
    return np.array(u)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


_CRITERIA: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when != "call" and not report.failed:
        return
    number, title = props["criterion"]
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": True, "notes": []})
    entry["passed"] &= report.passed
    if report.when == "call":
        entry["notes"].extend(v for k, v in report.user_properties if k == "note")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["passed"] else "FAIL"
        line = f"criterion {number:2d} {status}  {entry['title']}"
        if entry["notes"]:
            line += "  [" + "; ".join(entry["notes"]) + "]"
        terminalreporter.write_line(line)
