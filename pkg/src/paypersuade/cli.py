"""Batch entry point: read a game spec, run a solver or audit, write files.

Every command writes a ``summary.json`` with the headline numbers, the
configuration hash, and pass/fail flags for the invariant checks it ran.
Outputs are deterministic given identical inputs and seeds.  Exit status:
0 success, 2 parse error, 3 solver non-convergence, 4 invariant failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import click
import numpy as np

from . import analysis, dynamic, games, loyalty, static

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INVARIANT = 4


def fixture_path(name: str) -> Path:
    """Path of a bundled example specification file."""
    return Path(str(resources.files("paypersuade").joinpath("fixtures", name)))


@dataclass
class RunManifest:
    """Everything needed to reproduce one batch run."""

    command: str
    input_path: str
    out_dir: str
    overrides: dict = field(default_factory=dict)

    def config_hash(self) -> str:
        payload = {
            "command": self.command,
            "overrides": {k: v for k, v in sorted(self.overrides.items()) if v is not None},
        }
        try:
            payload["input"] = hashlib.sha256(Path(self.input_path).read_bytes()).hexdigest()
        except OSError:
            payload["input"] = None
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, games.Belief):
        return list(obj.probabilities)
    raise TypeError(f"cannot serialize {type(obj)}")


def _write_json(path: Path, payload):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _load_dynamic(manifest: RunManifest) -> games.DiscountedGame:
    game = games.load_game(manifest.input_path)
    ov = manifest.overrides
    delta = ov.get("delta")
    k = ov.get("k")
    if delta is None and k is None:
        return game
    stage = game.stage
    if k is not None:
        stage = games.StageGame(stage.states, stage.actions, stage.u, stage.v, float(k))
    discount = float(delta) if delta is not None else game.discount
    bound = max(game.promise_bound, 10.0 * float(np.max(np.abs(stage.u))) / (1.0 - discount))
    return games.DiscountedGame(stage, game.chain, game.prior, discount, bound)


def _solver_config(game, ov) -> dynamic.SolverConfig:
    return dynamic.SolverConfig.for_game(
        game,
        belief_points=int(ov.get("belief_grid") or 13),
        promise_points=int(ov.get("promise_grid") or 48),
        tolerance=float(ov.get("tol") or 1e-8),
        max_iterations=int(ov["max_iter"]) if ov.get("max_iter") is not None else 10_000,
    )


def _atom_payload(atom: games.ContractAtom) -> dict:
    return {
        "belief": list(atom.belief.probabilities),
        "action": atom.action,
        "transfer": atom.transfer,
        "promise": atom.promise,
        "weight": atom.weight,
    }


def _finish(manifest: RunManifest, out: Path, headline: dict, invariants: dict) -> int:
    ok = all(bool(v) for v in invariants.values())
    _write_json(
        out / "summary.json",
        {
            "command": manifest.command,
            "config_hash": manifest.config_hash(),
            "headline": headline,
            "invariants": invariants,
            "status": "ok" if ok else "invariant_failure",
        },
    )
    return EXIT_OK if ok else EXIT_INVARIANT


def _run_static(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    stage, prior = game.stage, game.prior
    sol = static.k_cavify(stage, prior)
    p_only = static.persuasion_only_value(stage, prior)
    kset = static.extremal_beliefs(stage)
    _write_json(
        out / "solution.json",
        {
            "value": sol.value,
            "persuasion_only_value": p_only,
            "extremal_beliefs": [list(b.probabilities) for b in kset.beliefs],
            "atoms": [
                {
                    "belief": list(a.belief.probabilities),
                    "weight": a.weight,
                    "action": a.action,
                    "transfer": a.transfer,
                    "sender_value": a.sender_value,
                    "receiver_value": a.receiver_value,
                }
                for a in sol.atoms
            ],
        },
    )
    n_env = int(manifest.overrides.get("envelope") or 0)
    if n_env > 1 and stage.n_states == 2:
        priors = [games.Belief((1 - x, x)) for x in np.linspace(0, 1, n_env)]
        rows = static.envelope_table(stage, priors)
        _write_csv(
            out / "envelope.csv",
            ["belief_1", "persuasion_flow", "transfer_augmented", "cav_persuasion", "cav_transfer_augmented"],
            [
                (r["belief"][1], r["persuasion_flow"], r["transfer_augmented"],
                 r["cav_persuasion"], r["cav_transfer_augmented"])
                for r in rows
            ],
        )
    ic_ok = all(
        games.best_response(stage, a.belief, {a.action: a.transfer})[0] == a.action
        for a in sol.atoms
    )
    recon = sum(a.weight * a.sender_value for a in sol.atoms)
    invariants = {
        "bayes_plausible": games.bayes_plausible(sol.experiment, prior),
        "atoms_incentive_compatible": ic_ok,
        "value_matches_atoms": abs(recon - sol.value) <= 1e-9,
        "envelope_dominates_at_prior": sol.value
        >= static.transfer_augmented_value(stage, prior) - 1e-9,
    }
    headline = {"value": sol.value, "persuasion_only_value": p_only}
    return _finish(manifest, out, headline, invariants)


def _run_dynamic(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    config = _solver_config(game, manifest.overrides)
    result = dynamic.solve(game, config)
    surface, policy = result.surface, result.policy
    _write_csv(
        out / "surface.csv",
        ["belief_id", "promise", "value"],
        [
            (g, float(u), float(surface.values[g, i]))
            for g in range(len(surface.beliefs))
            for i, u in enumerate(surface.promises)
        ],
    )
    _write_json(
        out / "policy.json",
        {
            "beliefs": [list(b.probabilities) for b in surface.beliefs],
            "promises": [float(u) for u in surface.promises],
            "points": {
                f"{g},{i}": [_atom_payload(a) for a in atoms]
                for (g, i), atoms in sorted(policy.atoms.items())
            },
        },
    )
    _write_csv(
        out / "convergence.csv",
        ["iteration", "delta"],
        [(i + 1, d) for i, d in enumerate(result.deltas)],
    )
    shape = surface.check_shape(game.k)
    invariants = {
        "surface_concave": shape["concave"],
        "surface_nonincreasing": shape["nonincreasing"],
        "slope_floor": shape["slope_floor"],
        "contraction_ratio": result.contraction_ratio <= game.discount + 1e-3,
    }
    headline = {
        "value_at_zero_promise": surface.value(0.0, game.prior),
        "iterations": result.iterations,
        "contraction_ratio": result.contraction_ratio,
    }
    return _finish(manifest, out, headline, invariants)


def _run_analyze(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    stage, prior = game.stage, game.prior
    config = _solver_config(game, manifest.overrides)
    result = dynamic.solve(game, config, extract_policy=False)
    bound = analysis.ergodic_bound(game)
    region = analysis.effectiveness_region_check(
        stage,
        k_values=[stage.k / 2, stage.k, 2 * stage.k],
        samples=int(manifest.overrides.get("samples") or 200),
        seed=int(manifest.overrides.get("seed") or 0),
    )
    report = {
        "feasibly_optimal": list(analysis.feasibly_optimal_set(stage)),
        "nontrivial": analysis.is_nontrivial(game, result.surface),
        "incentivizable_static": analysis.is_incentivizable_static(stage, prior),
        "benefits_from_dynamics": analysis.benefits_from_dynamics(stage, prior),
        "ergodic_bound": {
            "value": bound.value,
            "gamma": bound.gamma.tolist(),
            "m": bound.payment,
        },
        "effectiveness_region": {
            "k": list(region.k_values),
            "violations": len(region.convexity_violations) + len(region.nesting_violations),
            "boundary_hits": region.boundary_hits,
        },
    }
    _write_json(out / "report.json", report)
    invariants = {
        "region_check": region.passed,
        "ergodic_bound_at_least_static": bound.value
        >= static.k_cavify(stage, analysis.ergodic_distribution(game.chain)).value - 1e-9,
    }
    headline = {
        "ergodic_bound": bound.value,
        "nontrivial": report["nontrivial"],
        "incentivizable_static": report["incentivizable_static"],
    }
    return _finish(manifest, out, headline, invariants)


def _run_ergodic(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    bound = analysis.ergodic_bound(game)
    payload = {"value": bound.value, "gamma": bound.gamma.tolist(), "m": bound.payment}
    _write_json(out / "ergodic_bound.json", payload)
    pi = analysis.ergodic_distribution(game.chain)
    invariants = {
        "marginal_matches_ergodic": bool(
            np.max(np.abs(bound.state_marginal() - pi.vec)) <= 1e-8
        ),
        "actor_rationality": float(np.sum(bound.gamma * game.stage.u.T)) + bound.payment
        >= games.no_info_flow(game.stage, pi) - 1e-8,
    }
    return _finish(manifest, out, {"value": bound.value}, invariants)


def _load_ride(manifest: RunManifest) -> loyalty.RideGame:
    ov = manifest.overrides
    spec = {}
    if manifest.input_path:
        try:
            spec = json.loads(Path(manifest.input_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise games.GameSpecError(f"cannot read ride spec: {exc}") from exc
    def pick(key, default=None):
        return ov[key] if ov.get(key) is not None else spec.get(key, default)
    try:
        return loyalty.RideGame(
            n=int(pick("n")),
            c=tuple(float(x) for x in pick("c")),
            mu0=tuple(float(x) for x in pick("mu0")),
            k=float(pick("k", 1.0)),
            discount=float(pick("delta", spec.get("discount", 0.9))),
        )
    except (TypeError, ValueError) as exc:
        raise games.GameSpecError(f"bad ride specification: {exc}") from exc


def _run_loyalty(manifest: RunManifest, out: Path) -> int:
    ride = _load_ride(manifest)
    frontier = loyalty.pareto_frontier(ride)
    schedule = loyalty.tier_schedule(ride)
    knots = frontier.knots()
    _write_csv(out / "frontier.csv", ["surplus", "value"], knots)
    _write_json(
        out / "schedule.json",
        {
            "no_dynamic_incentives": schedule.no_dynamic_incentives,
            "tiers": [
                {"dimension": e.dimension, "threshold": e.threshold} for e in schedule.entries
            ],
            "frontier_slopes": [s for s, _ in frontier.segments],
            "origin_value": frontier.origin_value,
        },
    )
    invariants = {
        "frontier_concave": all(
            frontier.segments[i][0] >= frontier.segments[i + 1][0] - 1e-12
            for i in range(len(frontier.segments) - 1)
        )
    }
    headline = {
        "origin_value": frontier.origin_value,
        "slopes": [s for s, _ in frontier.segments],
    }
    if not schedule.no_dynamic_incentives:
        horizon = int(manifest.overrides.get("horizon") or 5000)
        seed = int(manifest.overrides.get("seed") or 0)
        sim = loyalty.simulate_loyalty(ride, seed=seed, horizon=horizon)
        _write_csv(
            out / "history.csv",
            ["period", "states", "beliefs", "actions", "transfers", "promoted", "ledger"],
            [
                (
                    p.period,
                    "".join(map(str, p.states)),
                    "|".join(f"{b:g}" for b in p.beliefs),
                    "".join(map(str, p.actions)),
                    "|".join(f"{t:g}" for t in p.transfers),
                    "".join("1" if x else "0" for x in p.promoted),
                    p.ledger,
                )
                for p in sim.periods
            ],
        )
        _write_json(
            out / "promotions.json",
            {str(k): v for k, v in sim.promotion_times.items()},
        )
        invariants["no_good_ride_rejected"] = sim.good_ride_rejections() == 0
        invariants["transfers_post_promotion_only"] = sim.transfers_before_promotion() == 0
        headline["promotion_times"] = sim.promotion_times
    return _finish(manifest, out, headline, invariants)


def _run_verify_backloading(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    config = _solver_config(game, manifest.overrides)
    result = dynamic.solve(game, config)
    report = dynamic.verify_backloading(game, result.surface, result.policy, config)
    _write_json(
        out / "backloading.json",
        {
            "passed": report.passed,
            "paying_points": report.n_paying_points,
            "points": [
                {
                    "belief_index": p.belief_index,
                    "promise_index": p.promise_index,
                    "paying_atoms": p.n_paying_atoms,
                    "slope_residual": p.slope_residual,
                    "resolve_gap": p.resolve_gap,
                    "passed": p.passed,
                }
                for p in report.points
            ],
        },
    )
    return _finish(
        manifest,
        out,
        {"paying_points": report.n_paying_points, "passed": report.passed},
        {"backloading": report.passed},
    )


def _run_playout(manifest: RunManifest, out: Path) -> int:
    game = _load_dynamic(manifest)
    config = _solver_config(game, manifest.overrides)
    result = dynamic.solve(game, config)
    seed = int(manifest.overrides.get("seed") or 0)
    horizon = int(manifest.overrides.get("horizon") or 10_000)
    hist = dynamic.playout(game, result.policy, seed=seed, horizon=horizon)
    _write_csv(
        out / "history.csv",
        ["period", "state", "action", "transfer", "promise", "receiver_flow", "sender_flow", "ic_residual"],
        [
            (r.period, r.state, r.atom.action, r.atom.transfer, r.atom.promise,
             r.receiver_flow, r.sender_flow, r.ic_residual)
            for r in hist.records
        ],
    )
    summary = {
        "mean_sender_flow": hist.mean_sender_flow(),
        "mean_receiver_flow": hist.mean_receiver_flow(),
        "worst_ic_residual": hist.worst_ic_residual(),
        "max_snap_error": hist.max_snap_error(),
    }
    _write_json(out / "playout_summary.json", summary)
    invariants = {"obedient": hist.worst_ic_residual() >= -1e-6}
    return _finish(manifest, out, summary, invariants)


_RUNNERS = {
    "static-solve": _run_static,
    "dynamic-solve": _run_dynamic,
    "analyze": _run_analyze,
    "ergodic-bound": _run_ergodic,
    "loyalty": _run_loyalty,
    "verify-backloading": _run_verify_backloading,
    "playout": _run_playout,
}


def run(manifest: RunManifest) -> int:
    """Execute one manifest; returns the process exit status."""
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _RUNNERS[manifest.command](manifest, out)
    except games.GameSpecError as exc:
        _write_json(out / "summary.json", {"command": manifest.command, "status": "parse_error",
                                           "error": str(exc)})
        return EXIT_PARSE
    except dynamic.NoConvergence as exc:
        _write_json(out / "summary.json", {"command": manifest.command, "status": "no_convergence",
                                           "error": str(exc)})
        return EXIT_NO_CONVERGENCE
    except games.NotErgodic as exc:
        _write_json(out / "summary.json", {"command": manifest.command, "status": "invariant_failure",
                                           "error": str(exc)})
        return EXIT_INVARIANT


def _common_options(fn):
    fn = click.option("--input", "input_path", type=click.Path(), default=None,
                      help="Game or ride specification JSON.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), required=True,
                      help="Output directory.")(fn)
    fn = click.option("--belief-grid", type=int, default=None,
                      help="Belief grid points per simplex edge.")(fn)
    fn = click.option("--promise-grid", type=int, default=None, help="Promise grid knots.")(fn)
    fn = click.option("--tol", type=float, default=None, help="Value-iteration tolerance.")(fn)
    fn = click.option("--max-iter", type=int, default=None, help="Iteration cap.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Simulation seed.")(fn)
    fn = click.option("--delta", type=float, default=None, help="Discount override.")(fn)
    fn = click.option("--k", type=float, default=None, help="Transfer cost override.")(fn)
    fn = click.option("--horizon", type=int, default=None, help="Simulation horizon.")(fn)
    return fn


def _dispatch(command, kwargs):
    overrides = {key: val for key, val in kwargs.items() if key not in ("input_path", "out_dir")}
    manifest = RunManifest(
        command=command,
        input_path=kwargs.get("input_path") or "",
        out_dir=kwargs["out_dir"],
        overrides=overrides,
    )
    sys.exit(run(manifest))


@click.group()
def main():
    """Batch solvers for contracts that pay and persuade."""


for _name in _RUNNERS:

    def _make(name):
        @_common_options
        @click.option("--envelope", type=int, default=None,
                      help="Rows for the static envelope table (binary-state games).")
        @click.option("--samples", type=int, default=None,
                      help="Sample count for region checks.")
        @click.option("--n", type=int, default=None, help="Rides per period (loyalty).")
        @click.option("--c", type=str, default=None, help="Comma-separated ride values (loyalty).")
        @click.option("--mu0", type=str, default=None, help="Comma-separated ride priors (loyalty).")
        def cmd(**kwargs):
            if kwargs.get("c"):
                kwargs["c"] = [float(x) for x in kwargs["c"].split(",")]
            if kwargs.get("mu0"):
                kwargs["mu0"] = [float(x) for x in kwargs["mu0"].split(",")]
            _dispatch(name, kwargs)

        cmd.__name__ = name.replace("-", "_")
        return cmd

    main.command(name=_name)(_make(_name))


if __name__ == "__main__":
    main()
