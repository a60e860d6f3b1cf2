import numpy as np
import pytest

from harmiss.data import HarDataset, official_feature_names
from harmiss.experiments import GridConfig
from harmiss.synthetic import make_synthetic_har, write_uci_layout

# small network + few epochs so end-to-end tests stay fast
TINY = GridConfig(epochs=3, hidden_size=16, dense_units=8, pca_components=20)

_acceptance_lines = {}


def record_criterion(number, passed, detail):
    _acceptance_lines[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_lines):
        terminalreporter.write_line(_acceptance_lines[number])


@pytest.fixture(scope="session")
def names():
    return official_feature_names()


@pytest.fixture(scope="session")
def synthetic_parts():
    return make_synthetic_har(n_subjects=30, run_length=(20, 40), seed=3)


@pytest.fixture(scope="session")
def small_parts():
    return make_synthetic_har(n_subjects=30, run_length=(6, 10), seed=5)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory, small_parts):
    root = tmp_path_factory.mktemp("har")
    return write_uci_layout(root, *small_parts)


def make_dataset(X, activity=None, subject=None, names=None):
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    activity = np.ones(n, dtype=int) if activity is None else activity
    subject = np.ones(n, dtype=int) if subject is None else subject
    names = names or [f"f{j}" for j in range(d)]
    return HarDataset(X, activity, subject, names)
