import numpy as np
import pytest
from hypothesis import settings

from emaml import harness, nn, ppo
from emaml.store import PolicyStore

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

SEEDS = range(5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_memory(rng, n_obs, n_bits, n=12, theta=None, boundaries=(5,)):
    states = rng.normal(size=(n, n_obs))
    actions = rng.integers(0, 2, size=(n, n_bits))
    rewards = rng.normal(size=n)
    lp = ppo.log_prob(theta, states, actions) if theta is not None else rng.normal(-0.7, 0.1, size=n)
    return ppo.Memory(states, actions, rewards, lp, tuple(b for b in boundaries if 0 < b < n))


@pytest.fixture
def small_policy(rng):
    return nn.init_params(nn.NetworkSpec((4, 6, 6, 1), "sigmoid"), rng)


@pytest.fixture(scope="session")
def protocol(tmp_path_factory):
    """Nominal controller, 7 fault policies and the adaptation runs for seeds 0-4."""
    config = harness.build_config()
    out = {}
    for seed in SEEDS:
        store = PolicyStore(tmp_path_factory.mktemp(f"protocol-s{seed}"))
        nominal = harness.cmd_train_nominal(config, store, seed)
        harness.cmd_build_complement(config, store, seed)
        runs = {
            "emaml2": harness.cmd_adapt(config, store, seed, "emaml", 2),
            "emaml4": harness.cmd_adapt(config, store, seed, "emaml", 4),
            "ppo": harness.cmd_adapt(config, store, seed, "ppo"),
        }
        out[seed] = {"store": store, "nominal": nominal, "runs": runs}
    return config, out
