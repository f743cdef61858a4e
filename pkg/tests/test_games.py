import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import paypersuade as pp
from paypersuade.games import no_info_flow

from .conftest import belief2, interior_belief, random_stage
from .oracles import enumerate_best_response, stationary_2x2


class TestExpectedPayoff:
    def test_appendix_d_receiver_at_one_third(self, appendix_d_stage):
        assert pp.expected_payoff(appendix_d_stage, belief2(1 / 3), 0, "receiver") == pytest.approx(0.0, abs=1e-12)

    def test_degenerate_belief_reads_matrix(self, appendix_d_stage):
        for a in range(3):
            for theta in range(2):
                got = pp.expected_payoff(appendix_d_stage, pp.Belief.degenerate(theta, 2), a, "receiver")
                assert got == appendix_d_stage.u[a, theta]

    def test_appendix_d_sender_constant_action(self, appendix_d_stage):
        assert pp.expected_payoff(appendix_d_stage, belief2(1 / 3), 1, "sender") == pytest.approx(2.5)

    def test_bad_action_index(self, appendix_d_stage):
        with pytest.raises(IndexError):
            pp.expected_payoff(appendix_d_stage, belief2(0.5), 9, "receiver")


class TestBestResponse:
    def test_appendix_d_prior_no_transfers(self, appendix_d_stage):
        chosen, value = pp.best_response(appendix_d_stage, belief2(1 / 6))
        assert chosen == 0
        assert value == pytest.approx(0.5)

    def test_tie_resolved_toward_designer(self, appendix_d_stage):
        chosen, value = pp.best_response(appendix_d_stage, belief2(1 / 3), {1: 1.0})
        assert chosen == 1  # three-way actor tie at 0; designer nets 1.5 on a1
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_uniform_transfer_shift_keeps_choice(self, appendix_d_stage):
        rng = np.random.default_rng(0)
        for _ in range(50):
            b = interior_belief(rng)
            base = dict(enumerate(rng.uniform(0, 2, 3)))
            shifted = {a: t + 0.7 for a, t in base.items()}
            assert pp.best_response(appendix_d_stage, b, base)[0] == \
                pp.best_response(appendix_d_stage, b, shifted)[0]

    @given(p=st.floats(0.0, 1.0), shift=st.floats(0.0, 5.0))
    @settings(max_examples=60, deadline=None)
    def test_uniform_shift_property(self, p, shift):
        u = np.array([[1.0, -2.0], [-2.0, 1.0], [0.0, 0.0]])
        v = np.array([[0.0, 0.0], [2.5, 2.5], [-0.5, -0.5]])
        stage = pp.StageGame(["t0", "t1"], ["a0", "a1", "a2"], u, v, 1.0)
        b = belief2(p)
        zero = pp.best_response(stage, b)[0]
        assert pp.best_response(stage, b, {a: shift for a in range(3)})[0] == zero

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            stage = random_stage(rng)
            b = interior_belief(rng)
            transfers = rng.uniform(0, 1.5, stage.n_actions)
            got = pp.best_response(stage, b, transfers)
            want = enumerate_best_response(stage.u, stage.v, stage.k, b.vec, transfers)
            assert got[0] == want[0]
            assert got[1] == pytest.approx(want[1], abs=1e-12)


class TestDiscountedValues:
    @pytest.mark.parametrize("delta", [0.0, 0.3, 0.9, 0.99])
    def test_no_info_appendix_d_constant(self, appendix_d, delta):
        game = pp.DiscountedGame(appendix_d.stage, appendix_d.chain, appendix_d.prior,
                                 delta, appendix_d.promise_bound)
        assert pp.no_info_value(game, game.prior) == pytest.approx(0.5, abs=1e-10)

    def test_no_info_collapses_at_delta_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            stage = random_stage(rng)
            prior = interior_belief(rng)
            game = pp.DiscountedGame(stage, pp.MarkovChain.iid(prior.vec), prior, 0.0, 100.0)
            b = interior_belief(rng)
            assert pp.no_info_value(game, b) == pytest.approx(no_info_flow(stage, b), abs=1e-12)

    def test_no_info_matching_game_uniform_stationary(self):
        u = np.eye(2)
        v = np.ones((2, 2))
        stage = pp.StageGame(["s0", "s1"], ["a0", "a1"], u, v, 1.0)
        chain = pp.MarkovChain(np.array([[0.3, 0.7], [0.7, 0.3]]))
        game = pp.DiscountedGame(stage, chain, pp.Belief((0.5, 0.5)), 0.9, 100.0)
        assert pp.no_info_value(game, pp.Belief((0.5, 0.5))) == pytest.approx(0.5, abs=1e-9)

    def test_full_info_appendix_d(self, appendix_d):
        assert pp.full_info_value(appendix_d, appendix_d.prior) == pytest.approx(1.0, abs=1e-10)

    def test_full_info_delta_zero_degenerate(self, appendix_d):
        game = pp.DiscountedGame(appendix_d.stage, appendix_d.chain, appendix_d.prior,
                                 0.0, appendix_d.promise_bound)
        got = pp.full_info_value(game, pp.Belief.degenerate(1, 2))
        assert got == pytest.approx(float(np.max(appendix_d.stage.u[:, 1])), abs=1e-12)

    def test_full_info_single_ride_dimension(self):
        ride = pp.RideGame(1, (1.0,), (0.3,), 2.0, 0.9)
        game = pp.build_ride_game(ride)
        assert pp.full_info_value(game, game.prior) == pytest.approx(1.0, abs=1e-10)

    def test_blackwell_dominance_on_random_games(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            stage = random_stage(rng, n_states=int(rng.integers(2, 4)))
            prior = interior_belief(rng, stage.n_states)
            delta = float(rng.uniform(0, 0.95))
            game = pp.DiscountedGame(stage, pp.MarkovChain.iid(prior.vec), prior, delta, 1000.0)
            b = interior_belief(rng, stage.n_states)
            assert pp.no_info_value(game, b) <= pp.full_info_value(game, b) + 1e-12


class TestBayesPlausible:
    def test_full_revelation(self):
        e = pp.Experiment(((pp.Belief.degenerate(0, 2), 5 / 6), (pp.Belief.degenerate(1, 2), 1 / 6)))
        assert pp.bayes_plausible(e, belief2(1 / 6))

    def test_null_experiment(self):
        prior = belief2(0.37)
        assert pp.bayes_plausible(pp.Experiment(((prior, 1.0),)), prior)

    def test_appendix_d_optimal_split(self):
        e = pp.Experiment(((belief2(0.0), 0.5), (belief2(1 / 3), 0.5)))
        assert pp.bayes_plausible(e, belief2(1 / 6))
        assert not pp.bayes_plausible(e, belief2(0.25))

    @given(
        st.lists(
            st.tuples(st.floats(0.0, 1.0), st.floats(0.01, 1.0)),
            min_size=1,
            max_size=6,
        ),
        st.permutations(range(6)),
    )
    @settings(max_examples=60, deadline=None)
    def test_invariant_to_permutation_and_merging(self, raw, perm):
        total = sum(w for _, w in raw)
        atoms = tuple((belief2(p), w / total) for p, w in raw)
        prior = pp.Belief(tuple(sum(w * b.vec for b, w in atoms)))
        e = pp.Experiment(atoms)
        assert pp.bayes_plausible(e, prior)
        order = sorted(range(len(atoms)), key=lambda i: perm[i])
        shuffled = tuple(atoms[i] for i in order)
        assert pp.bayes_plausible(pp.Experiment(shuffled), prior)
        doubled = tuple((b, w / 2) for b, w in atoms) + tuple((b, w / 2) for b, w in atoms)
        assert pp.bayes_plausible(pp.Experiment(doubled), prior)


class TestErgodicDistribution:
    def test_iid_chain_returns_row(self):
        mu = np.array([0.2, 0.5, 0.3])
        assert pp.ergodic_distribution(pp.MarkovChain.iid(mu)).close_to(pp.Belief(tuple(mu)), 1e-10)

    def test_two_state_chain_hand_solve(self):
        rows = [[0.9, 0.1], [0.5, 0.5]]
        got = pp.ergodic_distribution(pp.MarkovChain(np.array(rows)))
        assert np.allclose(got.vec, [5 / 6, 1 / 6], atol=1e-9)
        assert np.allclose(got.vec, stationary_2x2(rows), atol=1e-9)

    def test_doubly_stochastic_uniform(self):
        rows = np.array([[0.5, 0.2, 0.3], [0.3, 0.5, 0.2], [0.2, 0.3, 0.5]])
        got = pp.ergodic_distribution(pp.MarkovChain(rows))
        assert np.allclose(got.vec, 1 / 3, atol=1e-9)

    def test_fixed_point_residual(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            n = int(rng.integers(2, 5))
            rows = rng.dirichlet(np.ones(n) * 2, size=n)
            chain = pp.MarkovChain(rows)
            pi = pp.ergodic_distribution(chain)
            assert np.max(np.abs(pi.vec @ chain.rows - pi.vec)) < 1e-10

    def test_periodic_chain_rejected(self):
        with pytest.raises(pp.NotErgodic):
            pp.ergodic_distribution(pp.MarkovChain(np.array([[0.0, 1.0], [1.0, 0.0]])))


class TestSpecFiles:
    def test_roundtrip_fixture(self, appendix_d):
        assert appendix_d.stage.actions == ("a0", "a1", "a2")
        assert appendix_d.is_iid()
        assert appendix_d.promise_bound > np.max(np.abs(appendix_d.stage.u)) / (1 - appendix_d.discount)

    def test_auto_promise_bound_and_iid_default(self):
        game = pp.game_from_dict(
            {
                "states": ["x", "y"],
                "actions": ["l", "r"],
                "u": [[1, 0], [0, 1]],
                "v": [[0, 0], [1, 1]],
                "k": 1.0,
                "prior": [0.7, 0.3],
                "discount": 0.5,
            }
        )
        assert game.is_iid()
        assert game.promise_bound == pytest.approx(20.0)

    def test_malformed_spec_raises(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"states": ["a"]}')
        with pytest.raises(pp.GameSpecError):
            pp.load_game(bad)
        with pytest.raises(pp.GameSpecError):
            pp.load_game(tmp_path / "missing.json")

    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            pp.Belief((0.5, 0.4))
        with pytest.raises(ValueError):
            pp.StageGame(["s0", "s1"], ["a0", "a1"], np.eye(2), np.eye(2), 0.0)
        with pytest.raises(ValueError):
            pp.MarkovChain(np.array([[0.5, 0.6], [0.5, 0.5]]))
        with pytest.raises(ValueError):
            # promise bound below max|u|/(1-delta)
            pp.DiscountedGame(
                pp.StageGame(["s0", "s1"], ["a0", "a1"], np.eye(2), np.eye(2), 1.0),
                pp.MarkovChain.iid([0.5, 0.5]),
                pp.Belief((0.5, 0.5)),
                0.9,
                5.0,
            )
