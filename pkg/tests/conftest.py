import numpy as np
import pytest

from gamegap import LQNetwork, PointMass, build_game, build_weight_matrix


def random_monotone_lq(rng, n_max=6, T=1.0, n_steps=200, sigma=0.0, sigma0=0.0,
                       x0=None):
    """Random displacement-monotone LQ instance (a_f, a_g >= 0 keeps the
    complete-graph population inside the existence theory, avoiding
    blow-up flakiness)."""
    n = int(rng.integers(1, n_max + 1))
    if n == 1:
        w = build_weight_matrix("zero", 1)
    else:
        w = build_weight_matrix("complete", n)
    a_f, a_g = rng.uniform(0.0, 1.0, size=2)
    q_f, q_g = rng.uniform(0.0, 1.0, size=2)
    model = LQNetwork(a_f=a_f, a_g=a_g, q_f=q_f, q_g=q_g)
    if x0 is None:
        x0 = rng.uniform(-1.0, 1.0, size=(n, 1))
    return build_game(model, w, n=n, d=1, T=T, sigma=sigma, sigma0=sigma0,
                      initial_law=PointMass(x0), n_steps=n_steps)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
