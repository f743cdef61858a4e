"""Multi-ride acceptance game and its tiered loyalty contract.

Each period the designer pushes n rides; the driver accepts or rejects each
one.  Ride values are additively separable, the driver only wants rides
whose state is good, and states are i.i.d. across periods.  The designer's
frontier has a closed form: one linear stretch per cheap dimension, then a
terminal stretch at the transfer cost.  The optimal contract is a tier
ladder: run the static-optimal experiment per dimension until a promotion
threshold, then reveal that dimension's state (paying in the expensive
dimensions) forever after.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamic import SolverConfig, solve
from .games import Belief, DiscountedGame, MarkovChain, StageGame
from .static import k_cavify


class TooLarge(Exception):
    """Product game construction kept at desk scale."""


@dataclass(frozen=True)
class RideGame:
    """Parameters of the repeated ride-acceptance problem."""

    n: int
    c: tuple
    mu0: tuple
    k: float
    discount: float

    def __post_init__(self):
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "mu0", tuple(float(x) for x in self.mu0))
        object.__setattr__(self, "k", float(self.k))
        object.__setattr__(self, "discount", float(self.discount))
        if self.n < 1:
            raise ValueError("need at least one ride per period")
        if len(self.c) != self.n or len(self.mu0) != self.n:
            raise ValueError("c and mu0 must have one entry per ride")
        if any(ci <= 0 for ci in self.c):
            raise ValueError("acceptance values must be positive")
        if any(not 0.0 < m < 0.5 for m in self.mu0):
            raise ValueError("per-ride priors must lie strictly inside (0, 1/2)")
        if not self.k > 0:
            raise ValueError("transfer cost must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")

    def paying_dimensions(self) -> tuple:
        return tuple(i for i in range(self.n) if self.c[i] > self.k)


@dataclass(frozen=True)
class Frontier:
    """Per-period designer value against driver surplus above the no-info baseline.

    Segments are (slope, length) pairs with weakly decreasing slopes; the
    terminal transfer segment has slope -k and unbounded length.
    """

    origin_value: float
    segments: tuple

    def knots(self):
        """Cumulative (surplus, value) kink points, starting at the origin."""
        pts = [(0.0, self.origin_value)]
        s, v = 0.0, self.origin_value
        for slope, length in self.segments:
            if math.isinf(length):
                break
            s += length
            v += slope * length
            pts.append((s, v))
        return pts

    def value_at(self, surplus: float) -> float:
        if surplus <= 0:
            return self.origin_value
        v = self.origin_value
        left = surplus
        for slope, length in self.segments:
            step = min(left, length)
            v += slope * step
            left -= step
            if left <= 0:
                break
        return v


@dataclass(frozen=True)
class TierEntry:
    dimension: int
    threshold: float


@dataclass(frozen=True)
class TierSchedule:
    entries: tuple  # of TierEntry, ordered by (threshold, dimension)
    no_dynamic_incentives: bool = False

    def threshold_of(self, dim: int) -> float:
        for e in self.entries:
            if e.dimension == dim:
                return e.threshold
        raise KeyError(dim)


def build_ride_game(ride: RideGame) -> DiscountedGame:
    """Product construction: states and actions are bit tuples per ride."""
    if ride.n > 3:
        raise TooLarge("product game limited to three rides per period")
    bits = list(itertools.product((0, 1), repeat=ride.n))
    labels = ["".join(str(b) for b in t) for t in bits]
    n_s = len(bits)
    u = np.zeros((n_s, n_s))
    v = np.zeros((n_s, n_s))
    for ai, act in enumerate(bits):
        for si, st in enumerate(bits):
            u[ai, si] = sum(1.0 for i in range(ride.n) if act[i] == st[i])
            v[ai, si] = sum(ride.c[i] for i in range(ride.n) if act[i] == 1)
    prior = np.array(
        [np.prod([ride.mu0[i] if st[i] == 1 else 1 - ride.mu0[i] for i in range(ride.n)]) for st in bits]
    )
    stage = StageGame(labels, labels, u, v, ride.k)
    bound = 10.0 * float(np.max(np.abs(u))) / (1.0 - ride.discount)
    return DiscountedGame(stage, MarkovChain.iid(prior), Belief(tuple(prior)), ride.discount, bound)


def pareto_frontier(ride: RideGame) -> Frontier:
    """Closed-form frontier: origin at the repeated static-experiment value.

    Each cheap dimension contributes a stretch of slope -c_i and length
    mu0_i (the driver's full-information surplus in that dimension); the
    terminal stretch prices surplus at the transfer cost.  Dimensions at or
    above the transfer cost deliver surplus on the terminal stretch, where
    information and payments are perfect substitutes.
    """
    origin = sum(2 * m * c for m, c in zip(ride.mu0, ride.c))
    info = sorted(
        ((-ride.c[i], ride.mu0[i]) for i in range(ride.n) if ride.c[i] < ride.k),
        key=lambda seg: (-seg[0], seg[1]),
    )
    segments = tuple(info) + ((-ride.k, math.inf),)
    return Frontier(origin_value=float(origin), segments=segments)


def tier_schedule(ride: RideGame) -> TierSchedule:
    """Promotion thresholds in cumulative promised-surplus units.

    Cheap dimensions promote in increasing order of acceptance value; every
    dimension at or above the transfer cost promotes at the knee where the
    frontier reaches slope -k.  Without any dimension strictly above the
    transfer cost there are no dynamic incentives to ledger, and the
    schedule is empty.
    """
    if not ride.paying_dimensions():
        return TierSchedule(entries=(), no_dynamic_incentives=True)
    cheap = [(ride.c[i], i) for i in range(ride.n) if ride.c[i] < ride.k]
    cheap.sort()
    knee = sum(ride.mu0[i] for _, i in cheap)
    entries = []
    running = 0.0
    for _, i in cheap:
        running += ride.mu0[i]
        entries.append(TierEntry(dimension=i, threshold=running))
    for i in range(ride.n):
        if ride.c[i] >= ride.k:
            entries.append(TierEntry(dimension=i, threshold=knee))
    entries.sort(key=lambda e: (e.threshold, e.dimension))
    return TierSchedule(entries=tuple(entries))


@dataclass(frozen=True)
class LoyaltyPeriod:
    period: int
    states: tuple
    beliefs: tuple  # posterior P(good) per ride
    actions: tuple
    transfers: tuple
    promoted: tuple
    ledger: float
    receiver_flow: float
    sender_flow: float


@dataclass
class LoyaltyHistory:
    ride: RideGame
    periods: list = field(default_factory=list)
    promotion_times: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.periods)

    def good_ride_rejections(self) -> int:
        return sum(
            1
            for p in self.periods
            for i in range(self.ride.n)
            if p.states[i] == 1 and p.actions[i] == 0
        )

    def transfers_before_promotion(self) -> int:
        count = 0
        for p in self.periods:
            for i in range(self.ride.n):
                if p.transfers[i] > 0 and not p.promoted[i]:
                    count += 1
        return count

    def acceptance_rate(self, dim: int, state: int, promoted: bool) -> float:
        rel = [
            p.actions[dim]
            for p in self.periods
            if p.states[dim] == state and p.promoted[dim] == promoted
        ]
        return float(np.mean(rel)) if rel else float("nan")

    def mean_sender_flow(self) -> float:
        return float(np.mean([p.sender_flow for p in self.periods])) if self.periods else 0.0


def simulate_loyalty(ride: RideGame, seed: int, horizon: int) -> LoyaltyHistory:
    """Play the tiered contract forward under a seeded state draw.

    Before promotion each dimension runs the static-optimal split (posterior
    one-half with probability twice the prior, else zero); the driver
    accepts at one-half, and in dimensions worth more than the transfer cost
    also accepts at zero, each such acceptance crediting the promise ledger
    with the smallest obedience-compatible increment (1-delta)/delta.  A
    dimension switches to full revelation the period after the ledger
    crosses its threshold; from then on expensive dimensions buy acceptance
    at the canonical per-state payment while cheap ones let the driver act.
    Good rides are never rejected, in any phase.
    """
    schedule = tier_schedule(ride)
    if schedule.no_dynamic_incentives:
        raise ValueError(
            "no dimension pays more than the transfer cost: nothing to ledger "
            "(schedule flags no_dynamic_incentives)"
        )
    rng = np.random.default_rng(seed)
    d = ride.discount
    increment = (1.0 - d) / d
    ledger = 0.0
    promoted = [False] * ride.n
    history = LoyaltyHistory(ride=ride)
    history.promotion_times = {i: None for i in range(ride.n)}

    for t in range(horizon):
        # promotions take effect at the start of the period after the crossing
        for entry in schedule.entries:
            i = entry.dimension
            if not promoted[i] and ledger > entry.threshold + 1e-12:
                promoted[i] = True
                history.promotion_times[i] = t
        states, beliefs, actions, transfers = [], [], [], []
        for i in range(ride.n):
            theta = int(rng.random() < ride.mu0[i])
            states.append(theta)
            if promoted[i]:
                beliefs.append(float(theta))
                if theta == 1:
                    actions.append(1)
                    transfers.append(0.0)
                elif ride.c[i] > ride.k:
                    actions.append(1)
                    transfers.append(1.0)  # forgone good-state payoff at a bad ride
                else:
                    actions.append(0)
                    transfers.append(0.0)
            else:
                if theta == 1:
                    belief = 0.5
                else:
                    belief = 0.5 if rng.random() < ride.mu0[i] / (1 - ride.mu0[i]) else 0.0
                beliefs.append(belief)
                if belief == 0.5:
                    actions.append(1)  # indifferent; resolved toward the designer
                    transfers.append(0.0)
                elif ride.c[i] > ride.k:
                    actions.append(1)
                    transfers.append(0.0)
                    ledger += increment
                else:
                    actions.append(0)
                    transfers.append(0.0)
        rflow = sum(
            (1.0 if actions[i] == states[i] else 0.0) + transfers[i] for i in range(ride.n)
        )
        sflow = sum(ride.c[i] * actions[i] - ride.k * transfers[i] for i in range(ride.n))
        assert not any(states[i] == 1 and actions[i] == 0 for i in range(ride.n))
        history.periods.append(
            LoyaltyPeriod(
                period=t,
                states=tuple(states),
                beliefs=tuple(beliefs),
                actions=tuple(actions),
                transfers=tuple(transfers),
                promoted=tuple(promoted),
                ledger=ledger,
                receiver_flow=rflow,
                sender_flow=sflow,
            )
        )
    return history


@dataclass(frozen=True)
class CrosscheckReport:
    slope_measured: float
    slope_expected: float
    value_measured: float
    value_expected: float
    origin_value: float
    origin_gap: float | None
    iterations: int

    @property
    def slope_gap(self) -> float:
        return abs(self.slope_measured - self.slope_expected)

    @property
    def value_gap(self) -> float:
        return abs(self.value_measured - self.value_expected)

    def passed(self, slope_tol: float = 1e-2, value_tol: float = 5e-3) -> bool:
        ok = self.slope_gap <= slope_tol and self.value_gap <= value_tol
        if self.origin_gap is not None:
            ok = ok and self.origin_gap <= value_tol
        return ok


def crosscheck(ride: RideGame, config: SolverConfig | None = None) -> CrosscheckReport:
    """Compare the recursive solver against the closed form on one ride.

    The surface slope on the information stretch (between the no-info value
    and the full-information value) must match max(-c, -k), and the value at
    promise zero must match the one-shot optimum; when the ride is worth
    less than the transfer cost that optimum is the frontier origin.
    """
    if ride.n != 1:
        raise ValueError("crosscheck runs on single-ride games")
    game = build_ride_game(ride)
    if config is None:
        config = SolverConfig.for_game(game, belief_points=11, promise_points=48)
    result = solve(game, config, extract_policy=False)
    mu0 = ride.mu0[0]
    outside = 1.0 - mu0
    probe = outside + 0.5 * mu0  # midpoint of the information stretch
    slope = result.surface.right_derivative(probe, game.prior)
    expected_slope = max(-ride.c[0], -ride.k)
    value0 = result.surface.value(0.0, game.prior)
    static_value = k_cavify(game.stage, game.prior).value
    origin = pareto_frontier(ride).origin_value
    origin_gap = abs(value0 - origin) if ride.c[0] <= ride.k else None
    return CrosscheckReport(
        slope_measured=float(slope),
        slope_expected=float(expected_slope),
        value_measured=float(value0),
        value_expected=float(static_value),
        origin_value=float(origin),
        origin_gap=origin_gap,
        iterations=result.iterations,
    )
