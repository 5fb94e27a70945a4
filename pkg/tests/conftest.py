import pytest

from emc.control import design_control_law
from emc.embedded_model import build_case_study_model
from emc.noise_estimator import tune_by_eigenvalues

# Filled by tests/test_acceptance.py, printed once at the end of the session.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def model():
    return build_case_study_model()


@pytest.fixture(scope="session")
def parasitic_model():
    return build_case_study_model(parasitic=True)


@pytest.fixture(scope="session")
def law(model):
    return design_control_law(model, 0.1)


@pytest.fixture(scope="session")
def dyn_est(model):
    return tune_by_eigenvalues(model, "dynamic", 0.03, 0.03)


@pytest.fixture(scope="session")
def static_est(parasitic_model):
    return tune_by_eigenvalues(parasitic_model, "static", 0.03, 0.03)
