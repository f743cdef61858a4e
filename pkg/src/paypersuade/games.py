"""Primitive game objects shared by every solver.

A stage game is a pair of payoff matrices over (action, state) for the two
sides plus a per-unit transfer cost.  The dynamic wrapper adds a Markov
transition for the state, a prior, a discount rate, and the promise bound
used by the recursive solver.  All objects are immutable after construction
and all operations here are pure functions, so they are safe to share
across parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECEIVER = "receiver"
SENDER = "sender"

# Absolute tolerance for probability vectors summing to one.
PROB_TOL = 1e-12
# Tolerance used when matching beliefs against each other or against grids.
MATCH_TOL = 1e-9
# Discounted tails are truncated once delta**t * payoff_range falls below this.
SERIES_TOL = 1e-12


class NotErgodic(Exception):
    """Raised when a chain fails the positivity (ergodicity) check."""


class GameSpecError(Exception):
    """Raised when a game specification file is malformed."""


def _matrix(x, shape, name: str) -> np.ndarray:
    m = np.asarray(x, dtype=float)
    if m.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    m.flags.writeable = False
    return m


@dataclass(frozen=True)
class Belief:
    """A probability vector over states.

    Beliefs are stored as full vectors rather than |states|-1 coordinates so
    degenerate beliefs and polytope computations are handled uniformly.
    """

    probabilities: tuple

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("belief must be a nonempty vector")
        if np.any(p < -PROB_TOL):
            raise ValueError(f"belief has negative entries: {p}")
        if abs(float(p.sum()) - 1.0) > 10 * PROB_TOL:
            raise ValueError(f"belief entries sum to {p.sum()}, not 1")
        clipped = tuple(float(x) for x in np.clip(p, 0.0, None))
        object.__setattr__(self, "probabilities", clipped)

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    @property
    def n_states(self) -> int:
        return len(self.probabilities)

    @classmethod
    def degenerate(cls, state: int, n_states: int) -> "Belief":
        p = np.zeros(n_states)
        p[state] = 1.0
        return cls(tuple(p))

    def is_degenerate(self, tol: float = MATCH_TOL) -> bool:
        return bool(np.max(self.vec) >= 1.0 - tol)

    def close_to(self, other: "Belief", tol: float = MATCH_TOL) -> bool:
        return bool(np.max(np.abs(self.vec - other.vec)) <= tol)

    def __repr__(self):
        inner = ", ".join(f"{p:.6g}" for p in self.probabilities)
        return f"Belief([{inner}])"


@dataclass(frozen=True)
class StageGame:
    """One-shot payoffs: u for the acting side, v for the designing side.

    Matrices are indexed (action, state).  ``k`` is the designer's cost of
    transferring one unit of payoff to the actor (limited liability keeps
    transfers nonnegative).
    """

    states: tuple
    actions: tuple
    u: np.ndarray
    v: np.ndarray
    k: float

    def __post_init__(self):
        states = tuple(str(s) for s in self.states)
        actions = tuple(str(a) for a in self.actions)
        if len(states) < 2 or len(actions) < 2:
            raise ValueError("need at least two states and two actions")
        shape = (len(actions), len(states))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "u", _matrix(self.u, shape, "u"))
        object.__setattr__(self, "v", _matrix(self.v, shape, "v"))
        object.__setattr__(self, "k", float(self.k))
        if not self.k > 0:
            raise ValueError("transfer cost k must be positive")

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    def with_shifted_u(self, shift: float) -> "StageGame":
        """Return a copy with a constant added to every actor payoff.

        Constant shifts leave best responses, transfers, and designer values
        unchanged; they only move the actor's outside option.
        """
        return StageGame(self.states, self.actions, self.u + shift, self.v, self.k)


@dataclass(frozen=True)
class MarkovChain:
    """Row-stochastic transition matrix; row i is the next-state law from i."""

    rows: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.rows, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("transition matrix must be square")
        if np.any(m < -PROB_TOL):
            raise ValueError("transition matrix has negative entries")
        if np.max(np.abs(m.sum(axis=1) - 1.0)) > 10 * PROB_TOL:
            raise ValueError("transition rows must sum to 1")
        m = np.clip(m, 0.0, None)
        m.flags.writeable = False
        object.__setattr__(self, "rows", m)

    @property
    def n_states(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def iid(cls, distribution) -> "MarkovChain":
        p = np.asarray(distribution, dtype=float)
        return cls(np.tile(p, (p.size, 1)))

    def is_iid(self, tol: float = MATCH_TOL) -> bool:
        return bool(np.max(np.abs(self.rows - self.rows[0])) <= tol)

    def push(self, belief: Belief) -> Belief:
        """One-step belief update: tomorrow's prior given today's posterior."""
        return Belief(tuple(belief.vec @ self.rows))


@dataclass(frozen=True)
class DiscountedGame:
    """A stage game repeated under a Markov state with common discounting."""

    stage: StageGame
    chain: MarkovChain
    prior: Belief
    discount: float
    promise_bound: float

    def __post_init__(self):
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "promise_bound", float(self.promise_bound))
        if self.chain.n_states != self.stage.n_states:
            raise ValueError("chain size does not match the stage game")
        if self.prior.n_states != self.stage.n_states:
            raise ValueError("prior size does not match the stage game")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        u_norm = float(np.max(np.abs(self.stage.u)))
        if not self.promise_bound > u_norm / (1.0 - self.discount):
            raise ValueError(
                "promise_bound must strictly exceed max|u|/(1-discount) "
                "so the boundedness constraint never binds at the optimum"
            )

    @property
    def k(self) -> float:
        return self.stage.k

    def is_iid(self) -> bool:
        return self.chain.is_iid()


@dataclass(frozen=True)
class Experiment:
    """A distribution over posterior beliefs (atoms with weights)."""

    atoms: tuple  # of (Belief, weight)

    def __post_init__(self):
        atoms = tuple((b, float(w)) for b, w in self.atoms)
        if not atoms:
            raise ValueError("experiment needs at least one atom")
        total = sum(w for _, w in atoms)
        if abs(total - 1.0) > 1e-10:
            raise ValueError(f"experiment weights sum to {total}, not 1")
        if any(w < -1e-12 for _, w in atoms):
            raise ValueError("experiment weights must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    def mean_belief(self) -> np.ndarray:
        return sum(w * b.vec for b, w in self.atoms)


@dataclass(frozen=True)
class ContractAtom:
    """One on-path realization: posterior, recommended action, pay, promise."""

    belief: Belief
    action: int
    transfer: float
    promise: float
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "action", int(self.action))
        object.__setattr__(self, "transfer", float(self.transfer))
        object.__setattr__(self, "promise", float(self.promise))
        object.__setattr__(self, "weight", float(self.weight))
        if self.transfer < -1e-12:
            raise ValueError("limited liability: transfers must be nonnegative")
        if self.transfer < 0:
            object.__setattr__(self, "transfer", 0.0)
        if self.weight < -1e-12:
            raise ValueError("atom weight must be nonnegative")


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def expected_payoff(game: StageGame, belief: Belief, action: int, side: str) -> float:
    """Belief-weighted payoff of one action for one side."""
    if not 0 <= action < game.n_actions:
        raise IndexError(f"action index {action} out of range")
    mat = game.u if side == RECEIVER else game.v if side == SENDER else None
    if mat is None:
        raise ValueError(f"side must be '{RECEIVER}' or '{SENDER}'")
    return float(mat[action] @ belief.vec)


def _transfer_vector(game: StageGame, transfers) -> np.ndarray:
    if transfers is None:
        return np.zeros(game.n_actions)
    if isinstance(transfers, dict):
        t = np.zeros(game.n_actions)
        for a, x in transfers.items():
            t[int(a)] = float(x)
    else:
        t = np.asarray(transfers, dtype=float)
        if t.shape != (game.n_actions,):
            raise ValueError("transfer vector must cover every action")
    if np.any(t < -1e-12):
        raise ValueError("transfers must be nonnegative")
    return np.clip(t, 0.0, None)


def best_response(game: StageGame, belief: Belief, transfers=None, tol: float = MATCH_TOL):
    """Actor's optimal action under a transfer schedule, ties favoring the designer.

    Returns ``(chosen_action, receiver_value)``.  Among actions within
    ``tol`` of the actor's maximum, the one with the highest designer value
    net of transfer cost is chosen; remaining ties go to the lowest index.
    """
    t = _transfer_vector(game, transfers)
    mu = belief.vec
    actor = game.u @ mu + t
    top = float(np.max(actor))
    tied = np.flatnonzero(actor >= top - tol)
    designer = game.v @ mu - game.k * t
    chosen = int(tied[np.argmax(designer[tied])])
    return chosen, top


def no_info_flow(game: StageGame, belief: Belief) -> float:
    """Per-period actor value when acting on the bare belief, no transfers."""
    return float(np.max(game.u @ belief.vec))


def full_info_flow(game: StageGame, belief: Belief) -> float:
    """Per-period actor value when the state is revealed before acting."""
    return float(belief.vec @ np.max(game.u, axis=0))


def _discounted_flow(game: DiscountedGame, belief: Belief, flow) -> float:
    """Normalized discounted sum of a per-period flow along the belief path."""
    delta = game.discount
    if delta == 0.0:
        return flow(game.stage, belief)
    if game.is_iid():
        rest = Belief(tuple(game.chain.rows[0]))
        return (1 - delta) * flow(game.stage, belief) + delta * flow(game.stage, rest)
    payoff_range = float(np.max(np.abs(game.stage.u))) + 1.0
    total = 0.0
    weight = 1.0  # delta**t
    mu = belief
    while weight * payoff_range >= SERIES_TOL:
        total += (1 - delta) * weight * flow(game.stage, mu)
        weight *= delta
        mu = game.chain.push(mu)
    return total


def no_info_value(game: DiscountedGame, belief: Belief) -> float:
    """Discounted value of ignoring all signals: the actor's outside option."""
    return _discounted_flow(game, belief, no_info_flow)


def full_info_value(game: DiscountedGame, belief: Belief) -> float:
    """Discounted actor value under full state revelation every period."""
    return _discounted_flow(game, belief, full_info_flow)


def bayes_plausible(e: Experiment, prior: Belief, tol: float = MATCH_TOL) -> bool:
    """True when the experiment's atoms average back to the prior."""
    return bool(np.max(np.abs(e.mean_belief() - prior.vec)) <= tol)


def ergodic_distribution(chain: MarkovChain, tol: float = 1e-10) -> Belief:
    """Stationary distribution of an irreducible aperiodic chain.

    Ergodicity is certified by finding a power of the matrix with all
    entries positive, up to power n_states**2; the fixed point itself is
    then found by power iteration.
    """
    n = chain.n_states
    power = chain.rows.copy()
    for _ in range(n * n):
        if np.all(power > 0):
            break
        power = power @ chain.rows
    else:
        raise NotErgodic(
            f"no positive matrix power within budget {n * n}; "
            "chain is not irreducible and aperiodic"
        )
    pi = np.full(n, 1.0 / n)
    for _ in range(1_000_000):
        nxt = pi @ chain.rows
        if np.max(np.abs(nxt - pi)) < tol:
            pi = nxt
            break
        pi = nxt
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    return Belief(tuple(pi))


# ---------------------------------------------------------------------------
# Game specification files
# ---------------------------------------------------------------------------


def game_from_dict(spec: dict) -> DiscountedGame:
    """Build a DiscountedGame from a parsed specification document.

    Required keys: states, actions, u, v, k, prior, discount.  Optional:
    transition (omitted means the state is drawn i.i.d. from the prior) and
    promise_bound (omitted means 10*max|u|/(1-discount)).
    """
    try:
        states = list(spec["states"])
        actions = list(spec["actions"])
        stage = StageGame(states, actions, spec["u"], spec["v"], spec["k"])
        prior = Belief(tuple(np.asarray(spec["prior"], dtype=float)))
        discount = float(spec["discount"])
        if "transition" in spec and spec["transition"] is not None:
            chain = MarkovChain(np.asarray(spec["transition"], dtype=float))
        else:
            chain = MarkovChain.iid(prior.vec)
        if "promise_bound" in spec and spec["promise_bound"] is not None:
            bound = float(spec["promise_bound"])
        else:
            bound = 10.0 * float(np.max(np.abs(stage.u))) / (1.0 - discount)
            bound = max(bound, 1.0)
        return DiscountedGame(stage, chain, prior, discount, bound)
    except GameSpecError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise GameSpecError(f"bad game specification: {exc}") from exc


def load_game(path) -> DiscountedGame:
    """Load a DiscountedGame from a JSON specification file."""
    try:
        spec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise GameSpecError(f"cannot read game spec {path}: {exc}") from exc
    if not isinstance(spec, dict):
        raise GameSpecError(f"game spec {path} must be a JSON object")
    return game_from_dict(spec)
