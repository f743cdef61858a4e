"""Solvers and verification tools for contracts that pay and persuade.

A designer privately observes a Markov state and motivates an actor with
two instruments: flexible information about the state and nonnegative
transfers that cost k per unit delivered.  This package solves the one-shot
and repeated design problems and machine-checks the structural properties
of the optimum (payment backloading, effectiveness regions, ergodic value
bounds, tiered loyalty contracts).
"""

from .analysis import (
    DegenerateDenominator,
    ErgodicCoupling,
    audit_paying_beliefs,
    audit_policy_actions,
    benefits_from_dynamics,
    effectiveness_ratio,
    effectiveness_region_check,
    ergodic_bound,
    feasibly_optimal_set,
    in_effectiveness_region,
    is_incentivizable_static,
    is_nontrivial,
)
from .dynamic import (
    History,
    InconsistentMarginals,
    NoConvergence,
    OutOfRange,
    PolicyTable,
    PullbackStrategy,
    SolveResult,
    SolverConfig,
    UnreachablePoint,
    ValueSurface,
    bellman_step,
    playout,
    pullback,
    right_derivative,
    solve,
    verify_backloading,
)
from .games import (
    Belief,
    ContractAtom,
    DiscountedGame,
    Experiment,
    GameSpecError,
    MarkovChain,
    NotErgodic,
    StageGame,
    bayes_plausible,
    best_response,
    ergodic_distribution,
    expected_payoff,
    full_info_value,
    game_from_dict,
    load_game,
    no_info_value,
)
from .loyalty import (
    Frontier,
    LoyaltyHistory,
    RideGame,
    TierSchedule,
    TooLarge,
    build_ride_game,
    crosscheck,
    pareto_frontier,
    simulate_loyalty,
    tier_schedule,
)
from .static import (
    ActionPolytope,
    ExtremalBeliefSet,
    StaticSolution,
    action_polytope,
    canonical_transfer,
    envelope_table,
    extremal_beliefs,
    k_cavify,
    persuasion_only_value,
    transfer_augmented_value,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
