import numpy as np
import pytest

import paypersuade as pp
from paypersuade.games import no_info_flow

from .conftest import belief2, interior_belief, random_stage
from .oracles import grid_cavify_value, persuasion_only_values


def p1_values(beliefs) -> set:
    return {round(b.probabilities[1], 9) for b in beliefs}


class TestActionPolytopes:
    def test_appendix_d_a0(self, appendix_d_stage):
        poly = pp.action_polytope(appendix_d_stage, 0)
        assert p1_values(poly.vertices) == {0.0, round(1 / 3, 9)}

    def test_appendix_d_a2(self, appendix_d_stage):
        poly = pp.action_polytope(appendix_d_stage, 2)
        assert p1_values(poly.vertices) == {round(1 / 3, 9), round(2 / 3, 9)}

    def test_dominant_action_owns_simplex(self):
        u = np.array([[5.0, 5.0], [0.0, 0.0], [1.0, -1.0]])
        v = np.zeros((3, 2))
        stage = pp.StageGame(["s0", "s1"], ["a0", "a1", "a2"], u, v, 1.0)
        assert p1_values(pp.action_polytope(stage, 0).vertices) == {0.0, 1.0}
        assert pp.action_polytope(stage, 1).is_empty
        assert pp.action_polytope(stage, 2).is_empty

    def test_vertices_satisfy_dominance(self):
        rng = np.random.default_rng(10)
        for _ in range(40):
            stage = random_stage(rng, n_states=int(rng.integers(2, 4)))
            for a in range(stage.n_actions):
                for vtx in pp.action_polytope(stage, a).vertices:
                    eu = stage.u @ vtx.vec
                    assert eu[a] >= eu.max() - 1e-9


class TestExtremalBeliefs:
    def test_appendix_d(self, appendix_d_stage):
        kset = pp.extremal_beliefs(appendix_d_stage)
        assert p1_values(kset.beliefs) == {0.0, round(1 / 3, 9), round(2 / 3, 9), 1.0}

    def test_binary_matching_game(self):
        stage = pp.StageGame(["s0", "s1"], ["a0", "a1"], np.eye(2), np.ones((2, 2)), 1.0)
        assert p1_values(pp.extremal_beliefs(stage).beliefs) == {0.0, 0.5, 1.0}

    def test_dominant_action_leaves_corners(self):
        u = np.array([[5.0, 5.0], [0.0, 0.0]])
        stage = pp.StageGame(["s0", "s1"], ["a0", "a1"], u, np.zeros((2, 2)), 1.0)
        assert p1_values(pp.extremal_beliefs(stage).beliefs) == {0.0, 1.0}

    def test_contains_all_degenerates(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            stage = random_stage(rng, n_states=3)
            kset = pp.extremal_beliefs(stage)
            for i in range(3):
                assert any(b.close_to(pp.Belief.degenerate(i, 3)) for b in kset.beliefs)


class TestCanonicalTransfers:
    def test_appendix_d_pays_at_one_third(self, appendix_d_stage):
        assert pp.canonical_transfer(appendix_d_stage, belief2(1 / 3)) == (1, pytest.approx(1.0))

    def test_appendix_d_free_at_two_thirds(self, appendix_d_stage):
        action, transfer = pp.canonical_transfer(appendix_d_stage, belief2(2 / 3))
        assert action == 1
        assert transfer == pytest.approx(0.0, abs=1e-12)

    def test_huge_cost_collapses_to_best_response(self):
        rng = np.random.default_rng(12)
        for _ in range(40):
            base = random_stage(rng)
            stage = pp.StageGame(base.states, base.actions, base.u, base.v, 1e9)
            b = interior_belief(rng)
            action, transfer = pp.canonical_transfer(stage, b)
            assert action == pp.best_response(stage, b)[0]
            assert transfer == pytest.approx(0.0, abs=1e-9)

    def test_transfer_makes_actor_indifferent(self, appendix_d_stage):
        rng = np.random.default_rng(13)
        for _ in range(60):
            b = interior_belief(rng)
            action, transfer = pp.canonical_transfer(appendix_d_stage, b)
            paid = pp.expected_payoff(appendix_d_stage, b, action, "receiver") + transfer
            assert paid == pytest.approx(no_info_flow(appendix_d_stage, b), abs=1e-9)


class TestTransferAugmentedValue:
    @pytest.mark.parametrize(
        "p1,expected", [(1 / 3, 1.5), (2 / 3, 2.5), (0.0, 0.0)]
    )
    def test_appendix_d_values(self, appendix_d_stage, p1, expected):
        assert pp.transfer_augmented_value(appendix_d_stage, belief2(p1)) == pytest.approx(expected)

    def test_consistent_with_canonical_transfer(self):
        rng = np.random.default_rng(14)
        for _ in range(60):
            stage = random_stage(rng)
            b = interior_belief(rng)
            action, transfer = pp.canonical_transfer(stage, b)
            direct = pp.expected_payoff(stage, b, action, "sender") - stage.k * transfer
            assert pp.transfer_augmented_value(stage, b) == pytest.approx(direct, abs=1e-9)


class TestKCavify:
    def test_appendix_d_golden(self, appendix_d_stage):
        sol = pp.k_cavify(appendix_d_stage, belief2(1 / 6))
        assert sol.value == pytest.approx(0.75, abs=1e-9)
        split = sorted((round(a.belief.probabilities[1], 9), round(a.weight, 9)) for a in sol.atoms)
        assert split == [(0.0, 0.5), (round(1 / 3, 9), 0.5)]
        paying = [a for a in sol.atoms if a.transfer > 1e-9]
        assert len(paying) == 1
        assert paying[0].action == 1
        assert paying[0].transfer == pytest.approx(1.0, abs=1e-9)
        assert pp.bayes_plausible(sol.experiment, belief2(1 / 6))

    def test_degenerate_prior_reads_vt(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            stage = random_stage(rng)
            prior = pp.Belief.degenerate(int(rng.integers(2)), 2)
            sol = pp.k_cavify(stage, prior)
            assert sol.value == pytest.approx(pp.transfer_augmented_value(stage, prior), abs=1e-9)

    def test_value_matches_atom_average(self):
        rng = np.random.default_rng(16)
        for _ in range(30):
            stage = random_stage(rng)
            sol = pp.k_cavify(stage, interior_belief(rng))
            recon = sum(a.weight * a.sender_value for a in sol.atoms)
            assert sol.value == pytest.approx(recon, abs=1e-9)

    def test_atoms_incentive_compatible(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            stage = random_stage(rng)
            sol = pp.k_cavify(stage, interior_belief(rng))
            for atom in sol.atoms:
                eu = stage.u @ atom.belief.vec
                own = eu[atom.action] + atom.transfer
                assert own >= eu.max() - 1e-9

    def test_monotone_in_transfer_cost(self):
        rng = np.random.default_rng(18)
        for _ in range(25):
            base = random_stage(rng, k=1.0)
            prior = interior_belief(rng)
            values = []
            for k in (0.1, 1.0, 10.0, 1000.0):
                stage = pp.StageGame(base.states, base.actions, base.u, base.v, k)
                values.append(pp.k_cavify(stage, prior).value)
            assert all(a >= b - 1e-9 for a, b in zip(values, values[1:]))

    def test_envelope_dominates_vt_on_extremal_set(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            stage = random_stage(rng)
            for b in pp.extremal_beliefs(stage).beliefs:
                assert pp.k_cavify(stage, b).value >= pp.transfer_augmented_value(stage, b) - 1e-9

    def test_oracle_equivalence_small_batch(self):
        rng = np.random.default_rng(20)
        for _ in range(25):
            stage = random_stage(rng)
            for _ in range(4):
                prior = interior_belief(rng)
                got = pp.k_cavify(stage, prior).value
                want = grid_cavify_value(stage.u, stage.v, stage.k, prior.vec, mesh=1e-3)
                assert got == pytest.approx(want, abs=5e-3)


class TestPersuasionOnly:
    def test_appendix_d(self, appendix_d_stage):
        assert pp.persuasion_only_value(appendix_d_stage, belief2(1 / 6)) == pytest.approx(0.625, abs=1e-9)

    def test_single_ride_split(self):
        # one ride worth c: split to {0, 1/2}, acceptance probability 2*mu0
        for mu0, c in ((0.3, 1.0), (0.1, 2.0)):
            u = np.array([[1.0, 0.0], [0.0, 1.0]])
            v = np.array([[0.0, 0.0], [c, c]])
            stage = pp.StageGame(["bad", "good"], ["reject", "accept"], u, v, 10.0)
            got = pp.persuasion_only_value(stage, belief2(mu0))
            assert got == pytest.approx(2 * mu0 * c, abs=1e-9)

    def test_flat_designer_value_needs_no_split(self):
        u = np.array([[1.0, -1.0], [-1.0, 1.0]])
        v = np.full((2, 2), 0.7)
        stage = pp.StageGame(["s0", "s1"], ["a0", "a1"], u, v, 1.0)
        assert pp.persuasion_only_value(stage, belief2(0.4)) == pytest.approx(0.7, abs=1e-9)

    def test_piecewise_affine_between_adjacent_extremal_beliefs(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            stage = random_stage(rng)
            kset = sorted(pp.extremal_beliefs(stage).beliefs, key=lambda b: b.probabilities[1])
            for a, b in zip(kset, kset[1:]):
                if b.probabilities[1] - a.probabilities[1] < 1e-6:
                    continue
                mid = pp.Belief(tuple(0.5 * (a.vec + b.vec)))
                va = pp.persuasion_only_value(stage, a)
                vb = pp.persuasion_only_value(stage, b)
                vm = pp.persuasion_only_value(stage, mid)
                assert vm == pytest.approx(0.5 * (va + vb), abs=1e-9)

    def test_matches_transfer_value_when_transfers_priced_out(self):
        rng = np.random.default_rng(22)
        for _ in range(15):
            base = random_stage(rng)
            stage = pp.StageGame(base.states, base.actions, base.u, base.v, 1e8)
            prior = interior_belief(rng)
            assert pp.k_cavify(stage, prior).value == pytest.approx(
                pp.persuasion_only_value(stage, prior), abs=1e-6
            )


class TestEnvelopeTable:
    def test_columns_and_dominance(self, appendix_d_stage):
        priors = [belief2(x) for x in np.linspace(0, 1, 21)]
        rows = pp.envelope_table(appendix_d_stage, priors)
        assert len(rows) == 21
        for row in rows:
            assert row["cav_transfer_augmented"] >= row["transfer_augmented"] - 1e-9
            assert row["cav_transfer_augmented"] >= row["cav_persuasion"] - 1e-9
            assert row["cav_persuasion"] >= row["persuasion_flow"] - 1e-9

    def test_oracle_on_persuasion_column(self, appendix_d_stage):
        stage = appendix_d_stage
        xs = np.linspace(0, 1, 11)
        rows = pp.envelope_table(stage, [belief2(x) for x in xs])
        beliefs = np.column_stack([1 - xs, xs])
        want = persuasion_only_values(stage.u, stage.v, beliefs)
        got = np.array([r["persuasion_flow"] for r in rows])
        assert np.allclose(got, want, atol=1e-12)
