import numpy as np
import pytest

from absorbkit.synth import GeneratorSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_cohort():
    """Ten subjects, 40 features, strong signal on rois 1-3."""
    spec = GeneratorSpec(n_subjects=10, n_features=40, informative_rois=(1, 2, 3), effect_size=2.0,
                         conditions=("J1", "J2", "counting", "memory"),
                         positive_conditions=("J1", "J2"), case_j_runs=6, case_control_runs=4,
                         seed=7)
    return generate_synthetic(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    num, title = marker
    if report.when == "call" or report.outcome != "passed":
        if hasattr(report, "wasxfail"):
            status = f"FAIL (known: {report.wasxfail})"
        else:
            status = "PASS" if report.passed else "FAIL"
        if report.when == "call" or num not in _criteria:
            _criteria[num] = (title, status)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, status = _criteria[num]
        terminalreporter.write_line(f"criterion {num:2d} {status:4s}  {title}")
