import numpy as np
import pytest

from qpcr_fbi.model import ChainState, Dataset

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def _report(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def make_dataset(y, partition, z=None, **kw) -> Dataset:
    y = np.asarray(y, dtype=float)
    if z is None:
        z = np.isfinite(y).astype(np.int8)
    return Dataset(y=y, z=z, partition=partition, **kw)


def make_state(data: Dataset, theta=None, sigma2=None, gamma2=None, beta=(0.0, 0.1), y_mis=None) -> ChainState:
    theta = np.full((data.n_genes, data.n_types), 31.0) if theta is None else np.asarray(theta, dtype=float)
    sigma2 = np.full(data.n_genes, 0.5) if sigma2 is None else np.asarray(sigma2, dtype=float)
    gamma2 = np.full(data.n_genes, 900.0) if gamma2 is None else np.asarray(gamma2, dtype=float)
    y_mis = np.full(data.n_missing, data.detection_bound) if y_mis is None else np.asarray(y_mis, dtype=float)
    return ChainState(theta, sigma2, gamma2, np.asarray(beta, dtype=float), y_mis)


@pytest.fixture
def small_data():
    """2 genes, 4 samples in 2 types, two non-detects."""
    y = [[30.1, np.nan, 31.5, 32.0], [28.0, 28.4, np.nan, 33.2]]
    return make_dataset(y, partition=[0, 0, 1, 1])
