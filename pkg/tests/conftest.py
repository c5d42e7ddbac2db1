import numpy as np
import pytest

from newtonflow import fisher_scoring_solve, glm_simulate

REFERENCE_BETA = np.array([-0.2, 0.2, -0.2])
REFERENCE_SEED = 20260810


@pytest.fixture(scope="session")
def reference_dataset():
    """The seeded n=200 logistic dataset used across the suite."""
    return glm_simulate(200, REFERENCE_BETA, REFERENCE_SEED)


@pytest.fixture(scope="session")
def reference_mle(reference_dataset):
    return fisher_scoring_solve(reference_dataset, tol=1e-10)
