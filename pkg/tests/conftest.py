import numpy as np
import pytest

from bayescap.model import whiten
from bayescap.simulate import simulate_p5


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_sim():
    data, truth = simulate_p5(40, 20, seed=11)
    return data, truth, whiten(data)


def random_spd(rng, p, cond=10.0):
    Q = np.linalg.qr(rng.standard_normal((p, p)))[0]
    w = np.exp(rng.uniform(0, np.log(cond), p))
    return (Q * w) @ Q.T
