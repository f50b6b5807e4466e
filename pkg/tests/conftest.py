import numpy as np
import pytest

from cbg.tasks import ConstantLikelihood, custom_task, gaussian_toy_task

# The 1-D conjugate setting used throughout: prior N(0, 1), y = 1, noise 0.16,
# evaluated at x_t = 0, t = 0.5.  The guided marginal is N(0.43103, 0.28448),
# so the exact posterior score at 0 is 1 / 0.66.
TOY_SCORE = 1.0 / 0.66


@pytest.fixture
def toy():
    return gaussian_toy_task()


@pytest.fixture
def narrow_toy():
    return gaussian_toy_task(prior_variance=0.1)


@pytest.fixture
def flat_toy():
    """Standard-normal prior with a likelihood that ignores x."""
    base = gaussian_toy_task()
    return custom_task(base.prior, ConstantLikelihood(np.array([1.0]), log_value=-3.0), "flat")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def task1_headline():
    """CBG gradient-free on Task 1 at N=100, K=1000: 2000 samples with C2ST.

    About a minute on one core, so it is computed once and shared.
    """
    from cbg.config import ExperimentConfig
    from cbg.harness import execute

    cfg = ExperimentConfig(task=1, method="cbg_gf", num_steps=100, K=1000, samples=2000, seed=0)
    return execute(cfg)
