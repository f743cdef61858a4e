"""Structural diagnostics: which actions and beliefs survive optimality,
when transfers genuinely help, and the patient-limit value bound.

These operations audit solved contracts and the game primitives themselves.
They are pure functions; the sampling-based region check uses a seeded
generator so reports are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .dynamic import PolicyTable, ValueSurface
from .games import (
    Belief,
    DiscountedGame,
    StageGame,
    ergodic_distribution,
    no_info_flow,
)
from .static import k_cavify, persuasion_only_value

MARGIN = 1e-9


class DegenerateDenominator(Exception):
    """The actor gains nothing from full information at this belief."""


def feasibly_optimal_set(game: StageGame) -> tuple:
    """Actions that can appear in some optimal contract.

    Action a is excluded when some a' gains the designer more in every
    state than the worst-case payment needed to swap the actor to a'.
    """
    u, v, k = game.u, game.v, game.k
    keep = []
    for a in range(game.n_actions):
        excluded = False
        for b in range(game.n_actions):
            if b == a:
                continue
            if np.min(v[b] - v[a]) > k * np.max(u[a] - u[b]):
                excluded = True
                break
        if not excluded:
            keep.append(a)
    return tuple(keep)


def _full_info_actions(game: StageGame) -> np.ndarray:
    """Actor-optimal action per state, ties resolved toward the designer."""
    out = np.empty(game.n_states, dtype=int)
    for theta in range(game.n_states):
        col = game.u[:, theta]
        tied = np.flatnonzero(col >= col.max() - MARGIN)
        out[theta] = int(tied[np.argmax(game.v[tied, theta])])
    return out


def effectiveness_ratio(game: StageGame, belief: Belief) -> float:
    """Designer loss per unit of actor gain from replacing this belief
    with full revelation, minimized over feasibly optimal alternatives.

    Requires a strictly positive full-information gain for the actor.
    """
    mu = belief.vec
    afi = _full_info_actions(game)
    fi_receiver = float(mu @ game.u[afi, np.arange(game.n_states)])
    denominator = fi_receiver - no_info_flow(game, belief)
    if denominator <= 1e-12:
        raise DegenerateDenominator(
            f"full-information gain {denominator} is not positive at {belief}"
        )
    fi_sender = float(mu @ game.v[afi, np.arange(game.n_states)])
    numerator = min(fi_sender - float(game.v[b] @ mu) for b in feasibly_optimal_set(game))
    return numerator / denominator


def in_effectiveness_region(game: StageGame, belief: Belief, k=None, margin: float = MARGIN) -> bool:
    """Membership in the open region of beliefs incompatible with prior payments.

    Interior beliefs whose ratio strictly exceeds -k; beliefs with a
    degenerate full-information gain are treated as outside.
    """
    k = game.k if k is None else float(k)
    if np.min(belief.vec) <= 1e-12:
        return False
    try:
        ratio = effectiveness_ratio(game, belief)
    except DegenerateDenominator:
        return False
    return ratio > -k + margin


@dataclass
class RegionReport:
    k_values: tuple
    samples_per_k: dict
    convexity_violations: list = field(default_factory=list)
    nesting_violations: list = field(default_factory=list)
    boundary_hits: int = 0

    @property
    def passed(self) -> bool:
        return not self.convexity_violations and not self.nesting_violations


def effectiveness_region_check(game: StageGame, k_values, samples: int, seed: int) -> RegionReport:
    """Sampling witness that the region is convex and nested across costs.

    Draws belief pairs inside the region for each cost level, checks their
    midpoints stay inside, and checks membership survives raising the cost.
    """
    rng = np.random.default_rng(seed)
    ks = tuple(sorted(float(k) for k in k_values))
    report = RegionReport(k_values=ks, samples_per_k={})
    n = game.n_states
    for k in ks:
        members = []
        tries = 0
        while len(members) < 2 * samples and tries < 50 * samples:
            tries += 1
            cand = Belief(tuple(rng.dirichlet(np.ones(n))))
            if in_effectiveness_region(game, cand, k):
                members.append(cand)
        report.samples_per_k[k] = len(members)
        for i in range(0, len(members) - 1, 2):
            a, b = members[i], members[i + 1]
            mid = Belief(tuple(0.5 * (a.vec + b.vec)))
            try:
                ratio = effectiveness_ratio(game, mid)
            except DegenerateDenominator:
                report.convexity_violations.append(
                    {"k": k, "pair": (a.probabilities, b.probabilities), "reason": "degenerate midpoint"}
                )
                continue
            if ratio <= -k - MARGIN:
                report.convexity_violations.append(
                    {"k": k, "pair": (a.probabilities, b.probabilities), "ratio": ratio}
                )
            elif ratio <= -k + MARGIN:
                report.boundary_hits += 1
        # nesting: members at this cost stay members at any higher cost
        for bigger in ks:
            if bigger <= k:
                continue
            for m in members:
                if not in_effectiveness_region(game, m, bigger):
                    report.nesting_violations.append(
                        {"k_small": k, "k_big": bigger, "belief": m.probabilities}
                    )
    return report


def is_nontrivial(game: DiscountedGame, surface: ValueSurface, tol: float = 1e-4) -> bool:
    """True when promised utility is locally cheaper than paying at the prior."""
    return surface.right_derivative(0.0, game.prior) > -game.k + tol


def is_incentivizable_static(game: StageGame, prior: Belief, tol: float = MARGIN) -> bool:
    """True when transfers strictly improve on information alone one-shot."""
    return k_cavify(game, prior).value > persuasion_only_value(game, prior) + tol


@dataclass(frozen=True)
class ErgodicCoupling:
    """A stationary joint law over (state, action) with a lump-sum payment."""

    gamma: np.ndarray  # (n_states, n_actions)
    payment: float
    value: float

    def state_marginal(self) -> np.ndarray:
        return self.gamma.sum(axis=1)


def ergodic_bound(game: DiscountedGame) -> ErgodicCoupling:
    """Best stationary coupling value at the chain's ergodic distribution.

    Maximizes the designer's payoff over couplings whose state marginal is
    the ergodic distribution, subject to the actor (with the payment) weakly
    preferring the coupling to their no-information flow there.  Ties are
    broken toward the minimal payment.
    """
    stage = game.stage
    pi = ergodic_distribution(game.chain)
    outside = no_info_flow(stage, pi)  # the discounted series collapses at the fixed point
    ns, na = stage.n_states, stage.n_actions
    nvar = ns * na + 1  # vec(gamma) row-major, then m

    c = np.concatenate([-stage.v.T.reshape(-1), [game.k]])
    a_eq = np.zeros((ns, nvar))
    for theta in range(ns):
        a_eq[theta, theta * na : (theta + 1) * na] = 1.0
    b_eq = pi.vec
    a_ub = -np.concatenate([stage.u.T.reshape(-1), [1.0]])[None, :]
    b_ub = np.array([-outside])
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"ergodic coupling LP failed: {res.message}")
    value = float(-res.fun)

    # second stage: among near-optimal couplings, minimize the payment
    c2 = np.zeros(nvar)
    c2[-1] = 1.0
    a_ub2 = np.vstack([a_ub, c[None, :]])
    b_ub2 = np.concatenate([b_ub, [-(value - 1e-10)]])
    res2 = linprog(c2, A_ub=a_ub2, b_ub=b_ub2, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    x = res.x
    if res2.success:
        v2 = float(np.sum(np.clip(res2.x[:-1], 0, None).reshape(ns, na) * stage.v.T) - game.k * res2.x[-1])
        if v2 >= value - 1e-10:
            x = res2.x
    gamma = np.clip(x[:-1].reshape(ns, na), 0.0, None)
    m = float(max(x[-1], 0.0))
    value = float(np.sum(gamma * stage.v.T) - game.k * m)
    return ErgodicCoupling(gamma=gamma, payment=m, value=value)


def benefits_from_dynamics(game: StageGame, prior: Belief, tol: float = MARGIN) -> bool:
    """Whether repetition strictly beats the one-shot optimum for the designer.

    Evaluated with the actor's per-period no-information value normalized
    to zero: the one-shot optimal coupling must leave the actor's raw
    action payoff strictly above that outside flow, and the designer must
    not already collect their first-best stage value.
    """
    sol = k_cavify(game, prior)
    gamma = sol.coupling(game)
    raw_actor = float(np.sum(gamma * game.u.T))
    surplus = raw_actor - no_info_flow(game, prior)
    first_best = float(prior.vec @ np.max(game.v, axis=0))
    return surplus > tol and sol.value < first_best - tol


# ---------------------------------------------------------------------------
# Policy audits
# ---------------------------------------------------------------------------


@dataclass
class ActionAuditReport:
    allowed: tuple
    used: tuple
    violations: list

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_policy_actions(game: DiscountedGame, policy: PolicyTable, weight_tol: float = 1e-7) -> ActionAuditReport:
    """Every action carrying weight in the solved policy must be feasibly optimal."""
    allowed = feasibly_optimal_set(game.stage)
    used = set()
    violations = []
    for (g, i), atoms in sorted(policy.atoms.items()):
        for atom in atoms:
            if atom.weight <= weight_tol:
                continue
            used.add(atom.action)
            if atom.action not in allowed:
                violations.append({"point": (g, i), "action": atom.action})
    return ActionAuditReport(allowed=allowed, used=tuple(sorted(used)), violations=violations)


@dataclass
class BeliefAuditReport:
    checked_atoms: int
    violations: list
    boundary_hits: list
    degenerate_skips: int

    @property
    def passed(self) -> bool:
        return not self.violations


def audit_paying_beliefs(
    game: DiscountedGame,
    surface: ValueSurface,
    policy: PolicyTable,
    pay_tol: float = 1e-7,
    slope_margin: float = 1e-4,
) -> BeliefAuditReport:
    """After any paying atom, successor experiments may only carry beliefs
    whose effectiveness ratio is at most -k (or degenerate ones).

    Meaningful for i.i.d. states; boundary hits (ratio within the margin of
    -k) are logged separately rather than counted as violations.
    """
    grid = np.asarray(policy.promises)
    checked = 0
    violations = []
    boundary = []
    degenerate = 0
    for (g, i), atoms in sorted(policy.atoms.items()):
        for atom in atoms:
            if atom.transfer <= pay_tol or atom.weight <= pay_tol:
                continue
            nxt = game.chain.push(atom.belief)
            try:
                g_next = surface.belief_index(nxt)
            except Exception:
                continue
            i_next = int(np.argmin(np.abs(grid - atom.promise)))
            if (g_next, i_next) not in policy.atoms:
                continue
            for succ in policy.atoms[(g_next, i_next)]:
                if succ.weight <= pay_tol:
                    continue
                checked += 1
                if succ.belief.is_degenerate():
                    continue
                try:
                    ratio = effectiveness_ratio(game.stage, succ.belief)
                except DegenerateDenominator:
                    degenerate += 1
                    continue
                if ratio > -game.k + slope_margin:
                    violations.append(
                        {"point": (g, i), "successor": (g_next, i_next),
                         "belief": succ.belief.probabilities, "ratio": ratio}
                    )
                elif ratio > -game.k - slope_margin:
                    boundary.append(
                        {"point": (g, i), "belief": succ.belief.probabilities, "ratio": ratio}
                    )
    return BeliefAuditReport(
        checked_atoms=checked,
        violations=violations,
        boundary_hits=boundary,
        degenerate_skips=degenerate,
    )
