"""One-shot joint persuasion-and-transfers solver.

The static problem is solved geometrically: each action's optimality region
on the belief simplex is a polytope; the union of polytope vertices is the
finite set of extremal beliefs; the designer's value with transfers equals
the concave envelope of the transfer-augmented value taken over that finite
set.  The envelope at a single prior is one small linear program.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .games import (
    RECEIVER,
    SENDER,
    Belief,
    Experiment,
    StageGame,
    best_response,
    expected_payoff,
    no_info_flow,
)

VERTEX_TOL = 1e-9
WEIGHT_TOL = 1e-10


@dataclass(frozen=True)
class ActionPolytope:
    """Vertex representation of the belief region where one action is optimal."""

    action: int
    vertices: tuple  # of Belief; empty when the action is never optimal

    @property
    def is_empty(self) -> bool:
        return not self.vertices


@dataclass(frozen=True)
class ExtremalBeliefSet:
    """Deduplicated union of all action polytopes' vertices."""

    beliefs: tuple  # of Belief

    def __len__(self):
        return len(self.beliefs)

    def as_array(self) -> np.ndarray:
        return np.array([b.vec for b in self.beliefs])


@dataclass(frozen=True)
class StaticAtom:
    belief: Belief
    weight: float
    action: int
    transfer: float
    sender_value: float
    receiver_value: float


@dataclass(frozen=True)
class StaticSolution:
    value: float
    experiment: Experiment
    atoms: tuple  # of StaticAtom

    def coupling(self, game: StageGame) -> np.ndarray:
        """Joint (state, action) distribution induced by the solution."""
        gamma = np.zeros((game.n_states, game.n_actions))
        for atom in self.atoms:
            gamma[:, atom.action] += atom.weight * atom.belief.vec
        return gamma

    def expected_transfer(self) -> float:
        return sum(a.weight * a.transfer for a in self.atoms)


def action_polytope(game: StageGame, a: int) -> ActionPolytope:
    """Vertices of the region where action ``a`` is a no-transfer best response.

    The region is the simplex cut by the halfspaces E_mu[u(a) - u(a')] >= 0.
    Vertices are enumerated as basic feasible solutions of that system,
    which is cheap at the intended problem sizes.
    """
    n = game.n_states
    diffs = np.array([game.u[a] - game.u[b] for b in range(game.n_actions) if b != a])
    # Inequality rows: mu_i >= 0 for each i, then the action-dominance rows.
    rows = np.vstack([np.eye(n), diffs]) if diffs.size else np.eye(n)
    ones = np.ones(n)

    vertices: list[Belief] = []
    for combo in itertools.combinations(range(rows.shape[0]), n - 1):
        system = np.vstack([rows[list(combo)], ones])
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        try:
            mu = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            continue
        if np.any(rows @ mu < -VERTEX_TOL) or np.any(mu < -VERTEX_TOL):
            continue
        mu = np.clip(mu, 0.0, None)
        mu = mu / mu.sum()
        cand = Belief(tuple(mu))
        if not any(cand.close_to(vtx, VERTEX_TOL) for vtx in vertices):
            vertices.append(cand)
    vertices.sort(key=lambda b: b.probabilities)
    return ActionPolytope(a, tuple(vertices))


def extremal_beliefs(game: StageGame) -> ExtremalBeliefSet:
    """All polytope vertices, plus every degenerate belief, deduplicated."""
    found: list[Belief] = [Belief.degenerate(i, game.n_states) for i in range(game.n_states)]
    for a in range(game.n_actions):
        for vtx in action_polytope(game, a).vertices:
            if not any(vtx.close_to(b, VERTEX_TOL) for b in found):
                found.append(vtx)
    found.sort(key=lambda b: b.probabilities)
    return ExtremalBeliefSet(tuple(found))


def canonical_transfer(game: StageGame, belief: Belief):
    """Designer-optimal action and the payment leaving the actor indifferent.

    The payment equals the actor's loss relative to their unpaid optimum, so
    it is zero whenever the chosen action is already actor-optimal.  Among
    designer-indifferent actions the smaller payment (then the lower index)
    is chosen, which keeps outputs deterministic.
    """
    mu = belief.vec
    outside = no_info_flow(game, belief)
    gaps = outside - game.u @ mu  # payment needed per action, >= 0 up to fp noise
    scores = game.v @ mu - game.k * gaps
    top = float(np.max(scores))
    tied = np.flatnonzero(scores >= top - VERTEX_TOL)
    # argmin keeps the lowest index among exact payment ties
    chosen = int(tied[np.argmin(gaps[tied])])
    transfer = float(max(gaps[chosen], 0.0))
    return chosen, transfer


def transfer_augmented_value(game: StageGame, belief: Belief) -> float:
    """Designer value at one belief when paired with its canonical transfer."""
    mu = belief.vec
    outside = no_info_flow(game, belief)
    return float(np.max(game.v @ mu - game.k * (outside - game.u @ mu)))


def persuasion_only_flow(game: StageGame, belief: Belief) -> float:
    """Designer flow when the actor best-responds with no transfers."""
    chosen, _ = best_response(game, belief)
    return expected_payoff(game, belief, chosen, SENDER)


def _cavify(points: np.ndarray, values: np.ndarray, prior: Belief):
    """Maximize a weighted average of values over splits of the prior.

    One LP: weights over the candidate beliefs must be a distribution whose
    mean is the prior.  Returns (value, weights).  Always feasible because
    the candidates include every degenerate belief.
    """
    n_pts, n_states = points.shape
    a_eq = np.vstack([points.T[:-1], np.ones(n_pts)])
    b_eq = np.concatenate([prior.vec[:-1], [1.0]])
    res = linprog(-values, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"envelope LP failed: {res.message}")
    weights = np.clip(res.x, 0.0, None)
    return float(-res.fun), weights


def k_cavify(game: StageGame, prior: Belief) -> StaticSolution:
    """Optimal joint information-and-transfers design at one prior.

    Splits the prior over extremal beliefs to maximize the transfer-augmented
    value; each atom is then equipped with its canonical transfer.
    """
    kset = extremal_beliefs(game)
    pts = kset.as_array()
    vals = np.array([transfer_augmented_value(game, b) for b in kset.beliefs])
    value, weights = _cavify(pts, vals, prior)

    keep = np.flatnonzero(weights > WEIGHT_TOL)
    w = weights[keep] / weights[keep].sum()
    atoms = []
    for idx, wt in zip(keep, w):
        b = kset.beliefs[idx]
        action, transfer = canonical_transfer(game, b)
        atoms.append(
            StaticAtom(
                belief=b,
                weight=float(wt),
                action=action,
                transfer=transfer,
                sender_value=expected_payoff(game, b, action, SENDER) - game.k * transfer,
                receiver_value=expected_payoff(game, b, action, RECEIVER) + transfer,
            )
        )
    experiment = Experiment(tuple((a.belief, a.weight) for a in atoms))
    return StaticSolution(value=value, experiment=experiment, atoms=tuple(atoms))


def persuasion_only_value(game: StageGame, prior: Belief) -> float:
    """Designer value from information alone (transfers disabled).

    Concavifies the no-transfer designer value over the same extremal set;
    with finitely many actions the envelope is piecewise affine, so the
    extremal set supports it.
    """
    kset = extremal_beliefs(game)
    pts = kset.as_array()
    vals = np.array([persuasion_only_flow(game, b) for b in kset.beliefs])
    value, _ = _cavify(pts, vals, prior)
    return value


def envelope_table(game: StageGame, priors) -> list[dict]:
    """Tabulate raw and concavified values on a grid of priors, for plotting."""
    rows = []
    for b in priors:
        sol = k_cavify(game, b)
        rows.append(
            {
                "belief": list(b.probabilities),
                "persuasion_flow": persuasion_only_flow(game, b),
                "transfer_augmented": transfer_augmented_value(game, b),
                "cav_persuasion": persuasion_only_value(game, b),
                "cav_transfer_augmented": sol.value,
            }
        )
    return rows
