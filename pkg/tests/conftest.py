import numpy as np
import pytest

from mfbsde import (
    LevyMeasure,
    RegressionBasis,
    build_grid,
    simulate_ensemble,
)


@pytest.fixture(scope="session")
def grid100():
    return build_grid(1.0, 100)


@pytest.fixture(scope="session")
def grid50():
    return build_grid(1.0, 50)


@pytest.fixture(scope="session")
def levy1():
    return LevyMeasure.from_atoms([(1.0, 0.5)])


@pytest.fixture(scope="session")
def levy2():
    return LevyMeasure.from_atoms([(1.0, 2.0), (-0.5, 0.7)])


@pytest.fixture(scope="session")
def levy0():
    return LevyMeasure.from_atoms([])


@pytest.fixture(scope="session")
def ens_small(grid50, levy1):
    """Fast ensemble for structural tests."""
    return simulate_ensemble(grid50, levy1, 4000, seed=101)


@pytest.fixture(scope="session")
def ens_mid(grid100, levy1):
    """Mid-size ensemble for statistical tests on the desk grid."""
    return simulate_ensemble(grid100, levy1, 30000, seed=202)


@pytest.fixture(scope="session")
def basis():
    return RegressionBasis(degree=2)


def mc_se(samples: np.ndarray) -> float:
    return float(samples.std(ddof=1) / np.sqrt(samples.size))
