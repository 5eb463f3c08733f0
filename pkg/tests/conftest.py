import numpy as np
import pytest
from hypothesis import settings

from genheck.model import Dataset, Theta
from genheck.simulate import gen_dataset, make_scenario, scenario

settings.register_profile("genheck", max_examples=40, deadline=None)
settings.load_profile("genheck")


def random_problem(rng, n=40, p=3, q=3, r=2, s=2, scale=0.5):
    """Random designs (intercept first) and a moderate theta, with data drawn from the model."""
    def design(k):
        return np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])

    designs = {"X": design(p), "W": design(q), "E": design(r), "V": design(s)}
    theta = Theta(
        rng.normal(0, 1, p),
        np.r_[0.5, rng.normal(0, scale, q - 1)],
        rng.normal(0, scale, r),
        rng.normal(0, scale, s),
    )
    data = gen_dataset(theta, designs, seed=int(rng.integers(2**62)))
    return theta, data


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def s1_data():
    return scenario(make_scenario(1, 1000), seed=1)


@pytest.fixture(scope="session")
def s1_fit(s1_data):
    from genheck.estimate import fit
    return fit(s1_data)


@pytest.fixture(scope="session")
def small_data():
    return scenario(make_scenario(1, 300), seed=11)


@pytest.fixture(scope="session")
def small_fit(small_data):
    from genheck.estimate import fit
    return fit(small_data)


def single_obs(y, u, mu1, mu2, sigma, rho):
    """One-row Dataset whose predictors equal the given values at theta from ``single_theta``."""
    one = np.ones((1, 1))
    return Dataset(np.array([y]), np.array([u]), one * mu1, one * mu2, one * np.log(sigma), one * np.arctanh(rho))


def single_theta():
    return Theta([1.0], [1.0], [1.0], [1.0])
