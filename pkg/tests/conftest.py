import numpy as np
import pytest

from paypersuade import Belief, DiscountedGame, MarkovChain, StageGame, load_game
from paypersuade.cli import fixture_path
from paypersuade.games import no_info_flow


@pytest.fixture(scope="session")
def appendix_d() -> DiscountedGame:
    return load_game(fixture_path("appendix_d.json"))


@pytest.fixture(scope="session")
def appendix_d_stage(appendix_d) -> StageGame:
    return appendix_d.stage


def belief2(p1: float) -> Belief:
    """Binary-state belief from the probability of the second state."""
    return Belief((1.0 - p1, p1))


def random_stage(rng, n_states=2, n_actions=None, k=None) -> StageGame:
    n_a = n_actions or int(rng.integers(2, 6))
    u = rng.uniform(-2, 2, (n_a, n_states))
    v = rng.uniform(-2, 2, (n_a, n_states))
    kk = float(k) if k is not None else float(rng.choice([0.3, 1.0, 3.0]))
    states = [f"s{i}" for i in range(n_states)]
    actions = [f"a{j}" for j in range(n_a)]
    return StageGame(states, actions, u, v, kk)


def interior_belief(rng, n_states=2) -> Belief:
    # keep a margin from the faces so degenerate-gain corner cases stay rare
    p = 0.85 * rng.dirichlet(np.ones(n_states)) + 0.15 / n_states
    return Belief(tuple(p / p.sum()))


def random_iid_game(rng, delta=None, k=None, n_states=2, n_actions=None,
                    normalize_outside=True) -> DiscountedGame:
    """Random i.i.d.-state game; the actor's no-information flow at the
    prior is normalized to zero so a zero promise never binds artificially."""
    stage = random_stage(rng, n_states=n_states, n_actions=n_actions, k=k)
    prior = interior_belief(rng, n_states)
    if normalize_outside:
        stage = stage.with_shifted_u(-no_info_flow(stage, prior))
    d = float(delta) if delta is not None else float(rng.uniform(0.4, 0.85))
    bound = max(10.0 * float(np.max(np.abs(stage.u))) / (1.0 - d), 1.0)
    return DiscountedGame(stage, MarkovChain.iid(prior.vec), prior, d, bound)
