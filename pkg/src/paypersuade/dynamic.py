"""Recursive solver for the dynamic pay-and-persuade contract.

The per-period design problem at a (promised utility, belief) grid point is
a linear program once transfers and continuation promises are lifted to
weighted variables; because the continuation surface is piecewise linear
and concave, that LP's value over the whole grid equals the monotone upper
concave envelope of a finite point cloud in (belief, delivered-utility,
designer-value) space.  Value iteration therefore runs on convex-hull upper
facets, and the per-point LP is only solved when an explicit policy (the
maximizing contract atoms) is required.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from . import pwl
from .games import (
    Belief,
    ContractAtom,
    DiscountedGame,
    full_info_value,
    no_info_value,
)
from .static import extremal_beliefs

PAY_TOL = 1e-7
SUPPORT_TOL = 1e-7
FACET_TOL = 1e-12


class NoConvergence(Exception):
    """Value iteration hit the iteration cap before reaching tolerance."""


class OutOfRange(Exception):
    """Query point lies outside the stored promise grid."""


class UnreachablePoint(Exception):
    """A playout left the solved (promise, belief) grid."""


class InconsistentMarginals(Exception):
    """Target joint distributions do not match the prior's Markov evolution."""


# ---------------------------------------------------------------------------
# Grids and surfaces
# ---------------------------------------------------------------------------


def _merge_knots(specials, core, lo, hi, tol=1e-9):
    """Sorted knots: exact special values plus core points not too close to them."""
    specials = sorted({float(s) for s in specials if lo <= s <= hi})
    out = list(specials)
    for c in core:
        c = float(c)
        if lo <= c <= hi and all(abs(c - s) > tol for s in specials):
            out.append(c)
    out = sorted(out)
    merged = [out[0]]
    for x in out[1:]:
        if x - merged[-1] > tol:
            merged.append(x)
    return np.array(merged)


@dataclass(frozen=True)
class SolverConfig:
    """Discretization of the (promise, belief) domain plus stopping rules."""

    belief_grid: tuple  # of Belief
    promise_grid: np.ndarray
    tolerance: float = 1e-8
    max_iterations: int = 10_000

    def __post_init__(self):
        grid = np.asarray(self.promise_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("promise grid must be strictly increasing")
        if not np.any(np.abs(grid) < 1e-12):
            raise ValueError("promise grid must contain 0")
        grid.flags.writeable = False
        object.__setattr__(self, "promise_grid", grid)
        object.__setattr__(self, "belief_grid", tuple(self.belief_grid))
        if not self.belief_grid:
            raise ValueError("belief grid must be nonempty")

    def belief_index(self, belief: Belief, tol: float = 1e-9):
        for i, b in enumerate(self.belief_grid):
            if b.close_to(belief, tol):
                return i
        return None

    def validate(self, game: DiscountedGame):
        n = game.stage.n_states
        missing = []
        if self.belief_index(game.prior) is None:
            missing.append("prior")
        for i in range(n):
            if self.belief_index(Belief.degenerate(i, n)) is None:
                missing.append(f"degenerate state {i}")
        for b in extremal_beliefs(game.stage).beliefs:
            if self.belief_index(b) is None:
                missing.append(f"extremal belief {b}")
        if game.is_iid():
            row = Belief(tuple(game.chain.rows[0]))
            if self.belief_index(row) is None:
                missing.append("i.i.d. continuation belief")
        if missing:
            raise ValueError(f"belief grid is missing required points: {missing}")

    @classmethod
    def for_game(
        cls,
        game: DiscountedGame,
        belief_points: int = 13,
        promise_points: int = 56,
        extra_promise_knots=(),
        tolerance: float = 1e-8,
        max_iterations: int = 10_000,
    ) -> "SolverConfig":
        n = game.stage.n_states
        specials = [Belief.degenerate(i, n) for i in range(n)]
        specials += list(extremal_beliefs(game.stage).beliefs)
        specials.append(game.prior)
        if game.is_iid():
            specials.append(Belief(tuple(game.chain.rows[0])))
        else:
            specials += [game.chain.push(b) for b in list(specials)]

        beliefs: list[Belief] = []
        for b in specials:
            if not any(b.close_to(x) for x in beliefs):
                beliefs.append(b)
        if n == 2:
            for x in np.linspace(0.0, 1.0, belief_points):
                cand = Belief((1.0 - float(x), float(x)))
                if not any(cand.close_to(b) for b in beliefs):
                    beliefs.append(cand)
        else:
            res = 1
            while _simplex_grid_size(res + 1, n) <= max(belief_points, n + 1):
                res += 1
            for combo in itertools.combinations(range(res + n - 1), n - 1):
                counts = np.diff([-1, *combo, res + n - 1]) - 1
                cand = Belief(tuple(counts / res))
                if not any(cand.close_to(b) for b in beliefs):
                    beliefs.append(cand)
        beliefs.sort(key=lambda b: b.probabilities)

        c_bound = game.promise_bound
        u_lo = float(np.min(game.stage.u))
        u_hi = float(np.max(game.stage.u))
        span = max(u_hi - u_lo, 1.0)
        outside = no_info_value(game, game.prior)
        rfi = full_info_value(game, game.prior)
        knot_specials = {0.0, outside, -outside, rfi, -rfi, -c_bound, c_bound}
        knot_specials.update(float(x) for x in extra_promise_knots)
        lo = min(0.0, u_lo) - 0.25 * span
        hi = max(0.0, u_hi, rfi) + 1.25 * span
        n_core = max(promise_points - len(knot_specials), 8)
        core = np.linspace(lo, hi, n_core)
        grid = _merge_knots(knot_specials, core, -c_bound, c_bound)
        return cls(tuple(beliefs), grid, tolerance, max_iterations)


def _simplex_grid_size(res: int, n: int) -> int:
    from math import comb

    return comb(res + n - 1, n - 1)


@dataclass(frozen=True)
class ValueSurface:
    """Designer value on the grid: piecewise linear in the promise per belief."""

    beliefs: tuple  # of Belief
    promises: np.ndarray  # (P,)
    values: np.ndarray  # (G, P)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        proms = np.asarray(self.promises, dtype=float)
        if vals.shape != (len(self.beliefs), proms.size):
            raise ValueError("values must have shape (n_beliefs, n_promises)")
        vals.flags.writeable = False
        proms.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "promises", proms)
        object.__setattr__(self, "beliefs", tuple(self.beliefs))

    @classmethod
    def constant(cls, config: SolverConfig, c: float) -> "ValueSurface":
        vals = np.full((len(config.belief_grid), config.promise_grid.size), float(c))
        return cls(config.belief_grid, config.promise_grid.copy(), vals)

    def belief_index(self, belief: Belief, tol: float = 1e-9) -> int:
        for i, b in enumerate(self.beliefs):
            if b.close_to(belief, tol):
                return i
        raise OutOfRange(f"belief {belief} is not on the surface grid")

    def value(self, u: float, belief) -> float:
        g = belief if isinstance(belief, (int, np.integer)) else self.belief_index(belief)
        try:
            return pwl.pl_value(self.promises, self.values[g], u)
        except ValueError as exc:
            raise OutOfRange(str(exc)) from exc

    def right_derivative(self, u: float, belief) -> float:
        g = belief if isinstance(belief, (int, np.integer)) else self.belief_index(belief)
        try:
            return pwl.right_slope(self.promises, self.values[g], u)
        except ValueError as exc:
            raise OutOfRange(str(exc)) from exc

    def check_shape(self, k: float, slope_tol: float = 1e-6) -> dict:
        """Concavity, monotonicity, and slope-floor diagnostics per belief."""
        report = {"concave": True, "nonincreasing": True, "slope_floor": True,
                  "worst_convexity": 0.0, "worst_increase": 0.0, "worst_slope": 0.0}
        for row in self.values:
            s = pwl.slopes(self.promises, row)
            report["worst_convexity"] = max(report["worst_convexity"], float(np.max(np.diff(s), initial=0.0)))
            report["worst_increase"] = max(report["worst_increase"], float(np.max(s, initial=0.0)))
            report["worst_slope"] = min(report["worst_slope"], float(np.min(s, initial=0.0)))
        report["concave"] = report["worst_convexity"] <= slope_tol
        report["nonincreasing"] = report["worst_increase"] <= slope_tol
        report["slope_floor"] = report["worst_slope"] >= -k - slope_tol
        return report


def right_derivative(surface: ValueSurface, u: float, belief) -> float:
    """Slope of the stored surface on the segment to the right of ``u``."""
    return surface.right_derivative(u, belief)


@dataclass(frozen=True)
class PolicyTable:
    """Maximizing contract atoms per (belief, promise) grid point."""

    beliefs: tuple
    promises: np.ndarray
    atoms: dict  # (belief_idx, promise_idx) -> tuple[ContractAtom]

    def atoms_at(self, belief_idx: int, promise_idx: int):
        key = (int(belief_idx), int(promise_idx))
        if key not in self.atoms:
            raise UnreachablePoint(f"no policy stored at grid point {key}")
        return self.atoms[key]

    def paying_points(self, tol: float = PAY_TOL):
        out = []
        for key, atoms in sorted(self.atoms.items()):
            if any(a.transfer > tol for a in atoms):
                out.append(key)
        return out


@dataclass(frozen=True)
class SolveResult:
    surface: ValueSurface
    policy: PolicyTable
    iterations: int
    deltas: tuple
    contraction_ratio: float
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# The lifted per-period problem as a point cloud
# ---------------------------------------------------------------------------


class _Workspace:
    """Per-(game, config) constants for the recursive operator.

    ``full_revelation`` restricts today's experiments to degenerate beliefs,
    which yields the value of committing to reveal the state forever.
    """

    def __init__(self, game: DiscountedGame, config: SolverConfig, full_revelation=False):
        self.game = game
        self.config = config
        self.full_revelation = full_revelation
        stage = game.stage
        self.delta = game.discount
        self.k = stage.k
        self.c_bound = game.promise_bound

        beliefs = config.belief_grid
        self.n_grid = len(beliefs)
        bmat = np.array([b.vec for b in beliefs])  # (G, n_states)
        self.bmat = bmat
        self.coords = bmat[:, :-1]  # hull coordinates
        self.ubar = bmat @ stage.u.T  # (G, A)
        self.vbar = bmat @ stage.v.T
        self.flowmax = np.max(self.ubar, axis=1)

        # Continuation data per grid belief: next prior, outside option there.
        self.iid = game.is_iid()
        self.cont_belief = [game.chain.push(b) for b in beliefs]
        self.outside_next = np.array([no_info_value(game, b) for b in self.cont_belief])
        self.cont_index = [config.belief_index(b) for b in self.cont_belief]
        self.interpolated = sum(1 for i in self.cont_index if i is None)

        if full_revelation:
            degenerate = [g for g, b in enumerate(beliefs) if b.is_degenerate(1e-12)]
            self.atom_beliefs = degenerate
        else:
            self.atom_beliefs = list(range(self.n_grid))

        self.icfloor = (1 - self.delta) * self.flowmax[:, None] + self.delta * self.outside_next[:, None]
        self.icfloor = np.broadcast_to(self.icfloor, self.ubar.shape)

    # -- continuation value rows -------------------------------------------

    def _cont_rows(self, values: np.ndarray) -> np.ndarray:
        """Continuation value function (one promise row) per grid belief."""
        rows = np.empty((self.n_grid, values.shape[1]))
        for g in range(self.n_grid):
            idx = self.cont_index[g]
            if idx is not None:
                rows[g] = values[idx]
            else:
                rows[g] = self._interp_row(values, self.cont_belief[g])
        return rows

    def _interp_row(self, values: np.ndarray, belief: Belief) -> np.ndarray:
        """Barycentric interpolation of the surface across grid beliefs."""
        if self.bmat.shape[1] == 2:
            xs = self.bmat[:, 1]
            order = np.argsort(xs)
            x = belief.vec[1]
            j = np.searchsorted(xs[order], x)
            j = min(max(j, 1), xs.size - 1)
            a, b = order[j - 1], order[j]
            lam = (x - xs[a]) / (xs[b] - xs[a])
            return (1 - lam) * values[a] + lam * values[b]
        from scipy.spatial import Delaunay

        if not hasattr(self, "_tri"):
            self._tri = Delaunay(self.coords)
        simplex = self._tri.find_simplex(belief.vec[:-1])
        if simplex < 0:
            raise OutOfRange(f"continuation belief {belief} outside the belief grid hull")
        trans = self._tri.transform[simplex]
        bary = trans[:-1] @ (belief.vec[:-1] - trans[-1])
        lam = np.concatenate([bary, [1 - bary.sum()]])
        verts = self._tri.simplices[simplex]
        return lam @ values[verts]

    # -- package curves -----------------------------------------------------

    def _package_curve(self, cont_row: np.ndarray):
        """Best designer value of delivering a package y = (1-d)t + d*u'.

        Returns a dict of knot arrays: y (delivered level), w (designer
        value), t / up (the transfer and promise realizing that knot), plus
        the pure-promise values and the running pay-source data needed to
        price off-knot levels.  Transfers extend any promise knot to higher
        delivered levels at marginal cost k.
        """
        d, k = self.delta, self.k
        grid = self.config.promise_grid
        if d == 0.0:
            return {
                "y": np.array([0.0, self.c_bound]),
                "w": np.array([0.0, -k * self.c_bound]),
                "t": np.array([0.0, self.c_bound]),
                "up": np.array([0.0, 0.0]),
                "w0": np.array([0.0]),
                "y0": np.array([0.0]),
                "best": np.array([0.0]),
                "src": np.array([0]),
            }
        y0 = d * grid
        w0 = d * cont_row
        t = np.zeros_like(y0)
        up = grid.astype(float).copy()
        # paying down from an earlier promise knot substitutes at marginal cost k
        r = w0 + k * y0
        best = np.maximum.accumulate(r)
        hit = r >= best - 1e-12
        src = np.maximum.accumulate(np.where(hit, np.arange(y0.size), 0))
        alt = best - k * y0
        use = alt > w0 + 1e-12
        w = np.where(use, alt, w0)
        t = np.where(use, (y0 - y0[src]) / (1 - d), t)
        up = np.where(use, grid[src], up)
        # tail: keep paying past the top promise knot, up to the pay budget
        y = np.append(y0, y0[-1] + self.c_bound)
        w = np.append(w, w[-1] - k * self.c_bound)
        t = np.append(t, t[-1] + self.c_bound / (1 - d))
        up = np.append(up, up[-1])
        return {"y": y, "w": w, "t": t, "up": up, "w0": w0, "y0": y0, "best": best, "src": src}

    def _package_at(self, curve, yq: float, transfers_allowed=True):
        """Best single-package value and decode at one off-knot level.

        Used for the incentive-binding knot, which must be achievable by a
        single (transfer, promise) pair rather than a mixture.
        """
        d, k = self.delta, self.k
        if d == 0.0:
            if not transfers_allowed and yq > 1e-15:
                return None
            return float(-k * yq), float(yq), 0.0
        y0, w0 = curve["y0"], curve["w0"]
        options = []
        if y0[0] - 1e-12 <= yq <= y0[-1] + 1e-12:
            val = float(np.interp(yq, y0, w0))
            options.append((val, 0.0, yq / d))
        if transfers_allowed:
            j = int(np.searchsorted(y0, yq, side="right")) - 1
            if j >= 0:
                s = int(curve["src"][j])
                val = float(curve["best"][j] - k * yq)
                options.append((val, (yq - y0[s]) / (1 - d), float(self.config.promise_grid[s])))
        if not options:
            return None
        val, tq, uq = max(options, key=lambda o: o[0])
        return val, tq, uq

    def cloud(self, values: np.ndarray, transfers_allowed=True, cont_rows=None):
        """Assemble the point cloud whose monotone concave envelope is O(V).

        Each point is (belief coords, delivered actor value s, designer value)
        and decodes to a specific (transfer, continuation promise) package.
        """
        d = self.delta
        if cont_rows is None:
            cont_rows = self._cont_rows(values)
        pts_x, pts_s, pts_val = [], [], []
        meta_g, meta_a, meta_t, meta_up = [], [], [], []
        curves = {}
        for g in self.atom_beliefs:
            key = -1 if self.iid else g
            if key not in curves:
                curves[key] = self._package_curve(cont_rows[g])
            curve = curves[key]
            y, w, t, up = curve["y"], curve["w"], curve["t"], curve["up"]
            if not transfers_allowed:
                sel = t <= 1e-15
                y, w, t, up = y[sel], w[sel], t[sel], up[sel]
                if y.size == 0:
                    continue
            for a in range(self.ubar.shape[1]):
                base = (1 - d) * self.ubar[g, a]
                shift = (1 - d) * self.vbar[g, a]
                icf = self.icfloor[g, a]
                s = base + y
                keep = s >= icf - 1e-12
                ss = s[keep]
                vv = shift + w[keep]
                tt = t[keep]
                uu = up[keep]
                yq = icf - base
                dropped = ss.size < s.size
                if dropped and (ss.size == 0 or ss[0] > icf + 1e-12) and yq <= curve["y"][-1] + 1e-12:
                    # insert the exact incentive-binding package
                    pkg = self._package_at(curve, yq, transfers_allowed)
                    if pkg is not None:
                        wq, tq, uq = pkg
                        ss = np.concatenate([[icf], ss])
                        vv = np.concatenate([[shift + wq], vv])
                        tt = np.concatenate([[tq], tt])
                        uu = np.concatenate([[uq], uu])
                if ss.size == 0:
                    continue
                pts_x.append(np.repeat(self.coords[g][None, :], ss.size, axis=0))
                pts_s.append(ss)
                pts_val.append(vv)
                meta_g.append(np.full(ss.size, g))
                meta_a.append(np.full(ss.size, a))
                meta_t.append(tt)
                meta_up.append(uu)
        return {
            "x": np.vstack(pts_x),
            "s": np.concatenate(pts_s),
            "val": np.concatenate(pts_val),
            "g": np.concatenate(meta_g).astype(int),
            "a": np.concatenate(meta_a).astype(int),
            "t": np.concatenate(meta_t),
            "up": np.concatenate(meta_up),
        }


def _upper_facets(pts: np.ndarray):
    """Affine majorants (coef, const) whose pointwise min is the concave envelope.

    Points are scaled to the unit box for qhull, and a single point far below
    the centroid guarantees full dimensionality without touching upper facets.
    """
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
    sc = (pts - lo) / span
    floor = sc.mean(axis=0)
    floor[-1] = sc[:, -1].min() - 1.0
    allpts = np.vstack([sc, floor])
    try:
        hull = ConvexHull(allpts)
    except QhullError:
        hull = ConvexHull(allpts, qhull_options="QJ")
    normals = hull.equations[:, :-1]
    offsets = hull.equations[:, -1]
    up = normals[:, -1] > FACET_TOL
    if not np.any(up):
        raise RuntimeError("degenerate cloud: no upper facets")
    coef_sc = -normals[up, :-1] / normals[up, -1:]
    const_sc = -offsets[up] / normals[up, -1]
    coef = coef_sc * (span[-1] / span[:-1])
    const = lo[-1] + span[-1] * const_sc - coef @ lo[:-1]
    return coef, const


class _Envelope:
    """Monotone concave envelope of a cloud, queryable at grid points."""

    def __init__(self, cloud: dict):
        self.cloud = cloud
        joint = np.column_stack([cloud["x"], cloud["s"], cloud["val"]])
        coef, const = _upper_facets(joint)
        mono = coef[:, -1] <= FACET_TOL
        self.j_coef = coef[mono]
        self.j_const = const[mono]
        marg = np.column_stack([cloud["x"], cloud["val"]])
        self.m_coef, self.m_const = _upper_facets(marg)

    def values_on(self, coords: np.ndarray, promises: np.ndarray) -> np.ndarray:
        """Envelope values for every (grid belief, promise knot) pair."""
        slack = np.min(self.m_coef @ coords.T + self.m_const[:, None], axis=0)  # (G,)
        if self.j_coef.size:
            base = self.j_coef[:, :-1] @ coords.T + self.j_const[:, None]  # (F, G)
            sweep = base[:, :, None] + self.j_coef[:, -1][:, None, None] * promises[None, None, :]
            vals = np.min(sweep, axis=0)  # (G, P)
            vals = np.minimum(vals, slack[:, None])
        else:
            vals = np.repeat(slack[:, None], promises.size, axis=1)
        return vals

    def supporting_plane(self, x: np.ndarray, u: float):
        """(coef_x, coef_s, const) of the plane active at one evaluation point."""
        slack = float(np.min(self.m_coef @ x + self.m_const))
        if self.j_coef.size:
            vals = self.j_coef[:, :-1] @ x + self.j_coef[:, -1] * u + self.j_const
            j = int(np.argmin(vals))
            if vals[j] <= slack + 1e-12:
                return self.j_coef[j, :-1], float(self.j_coef[j, -1]), float(self.j_const[j])
        m = int(np.argmin(self.m_coef @ x + self.m_const))
        return self.m_coef[m], 0.0, float(self.m_const[m])

    def value_at(self, x: np.ndarray, u: float) -> float:
        """Envelope value at one (belief coords, promise) point."""
        slack = float(np.min(self.m_coef @ x + self.m_const))
        if self.j_coef.size:
            vals = self.j_coef[:, :-1] @ x + self.j_coef[:, -1] * u + self.j_const
            return min(float(np.min(vals)), slack)
        return slack


# ---------------------------------------------------------------------------
# Operator, solver, policy
# ---------------------------------------------------------------------------


def _step_values(ws: _Workspace, values: np.ndarray):
    cloud = ws.cloud(values)
    env = _Envelope(cloud)
    vals = env.values_on(ws.coords, ws.config.promise_grid)
    grid = ws.config.promise_grid
    for g in range(vals.shape[0]):
        vals[g] = pwl.concave_envelope(grid, vals[g])
        vals[g] = pwl.nonincreasing_envelope(vals[g])
    return vals, cloud, env


def bellman_step(game: DiscountedGame, surface: ValueSurface, config: SolverConfig) -> ValueSurface:
    """One application of the recursive operator to a concave surface."""
    ws = _Workspace(game, config)
    vals, _, _ = _step_values(ws, np.asarray(surface.values))
    return ValueSurface(config.belief_grid, config.promise_grid.copy(), vals)


def solve(
    game: DiscountedGame,
    config: SolverConfig | None = None,
    extract_policy: bool = True,
    full_revelation: bool = False,
) -> SolveResult:
    """Iterate the operator to its fixed point and extract the policy.

    Raises NoConvergence when the sup-norm change is still above tolerance
    after ``max_iterations`` sweeps.  The reported contraction ratio is the
    worst successive-delta ratio observed above the noise floor.
    """
    if config is None:
        config = SolverConfig.for_game(game)
    config.validate(game)
    ws = _Workspace(game, config, full_revelation=full_revelation)
    values = np.full(
        (len(config.belief_grid), config.promise_grid.size), float(np.max(game.stage.v))
    )
    deltas = []
    converged = False
    iterations = 0
    cloud = env = None
    for iterations in range(1, config.max_iterations + 1):
        new_vals, cloud, env = _step_values(ws, values)
        d = float(np.max(np.abs(new_vals - values)))
        deltas.append(d)
        values = new_vals
        if d < config.tolerance:
            converged = True
            break
    if not converged:
        raise NoConvergence(
            f"no convergence after {iterations} sweeps (last delta {deltas[-1] if deltas else 'n/a'})"
        )

    floor = max(1e-6, 100 * config.tolerance)
    ratio = 0.0
    for a, b in zip(deltas, deltas[1:]):
        if a >= floor:
            ratio = max(ratio, b / a)

    surface = ValueSurface(config.belief_grid, config.promise_grid.copy(), values)
    if extract_policy:
        policy = _extract_policy(ws, surface, cloud, env)
    else:
        policy = PolicyTable(config.belief_grid, config.promise_grid.copy(), {})
    return SolveResult(
        surface=surface,
        policy=policy,
        iterations=iterations,
        deltas=tuple(deltas),
        contraction_ratio=ratio,
        diagnostics={"interpolated_continuations": ws.interpolated},
    )


def _solve_point_lp(ws, cloud, x, u, columns=None, min_transfer_only=False):
    """Exact LP at one grid point over (a subset of) the cloud columns.

    The default runs two stages: maximize designer value, then minimize the
    expected transfer among near-optimal mixes so outputs are deterministic.
    With ``min_transfer_only`` (valid when the columns already lie on the
    supporting plane, so every feasible mix is value-optimal) only the
    second stage runs.  Returns (value, weights, column_indices, delivered)
    or None when infeasible.
    """
    idx = np.arange(cloud["s"].size) if columns is None else np.asarray(columns)
    if idx.size == 0:
        return None
    xs = cloud["x"][idx]
    ss = cloud["s"][idx]
    vv = cloud["val"][idx]
    tt = cloud["t"][idx]
    a_eq = np.vstack([xs.T, np.ones(idx.size)])
    b_eq = np.concatenate([x, [1.0]])
    a_ub = -ss[None, :]
    b_ub = np.array([-u])
    if min_transfer_only:
        res = linprog(tt, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
        if not res.success:
            return None
        weights = np.clip(res.x, 0.0, None)
        return float(vv @ weights), weights, idx, float(ss @ weights)
    res = linprog(-vv, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        return None
    value = float(-res.fun)
    a_ub2 = np.vstack([a_ub, -vv[None, :]])
    b_ub2 = np.concatenate([b_ub, [-(value - 1e-9)]])
    res2 = linprog(tt, A_ub=a_ub2, b_ub=b_ub2, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    weights = np.clip(res2.x if res2.success else res.x, 0.0, None)
    return float(vv @ weights), weights, idx, float(ss @ weights)


def _atoms_from_weights(ws, cloud, weights, idx):
    atoms = []
    mass = weights.sum()
    for w, q in zip(weights, idx):
        if w <= 1e-10:
            continue
        atoms.append(
            ContractAtom(
                belief=ws.config.belief_grid[cloud["g"][q]],
                action=int(cloud["a"][q]),
                transfer=float(max(cloud["t"][q], 0.0)),
                promise=float(cloud["up"][q]),
                weight=float(w / mass),
            )
        )
    return tuple(atoms)


def _extract_policy(ws: _Workspace, surface: ValueSurface, cloud, env) -> PolicyTable:
    """One pass of exact point LPs over the final surface.

    Points are visited from the highest promise down so that a mixture
    found in the slack region (where promise keeping does not bind and the
    value is flat) is reused for every lower knot it still covers.
    """
    grid = ws.config.promise_grid
    values = np.asarray(surface.values)
    atoms = {}
    for g in range(ws.n_grid):
        x = ws.coords[g]
        cached = None  # (delivered, value, key of the reusable solution)
        for i in range(grid.size - 1, -1, -1):
            u = float(grid[i])
            v_point = float(values[g, i])
            if cached is not None:
                delivered, val, key = cached
                if delivered >= u - 1e-9 and abs(val - v_point) <= 1e-6:
                    atoms[(g, i)] = atoms[key]
                    continue
            coef_x, coef_s, const = env.supporting_plane(x, u)
            plane_vals = cloud["x"] @ coef_x + coef_s * cloud["s"] + const
            near = np.flatnonzero(plane_vals - cloud["val"] <= SUPPORT_TOL)
            got = _solve_point_lp(ws, cloud, x, u, columns=near, min_transfer_only=True)
            if got is not None and abs(got[0] - v_point) > 1e-6:
                got = None  # plane restriction missed the optimum: fall back
            if got is None:
                got = _solve_point_lp(ws, cloud, x, u)
            if got is None:
                continue  # genuinely infeasible point: no policy stored
            value, weights, idx, delivered = got
            atoms[(g, i)] = _atoms_from_weights(ws, cloud, weights, idx)
            cached = (delivered, value, (g, i))
    return PolicyTable(ws.config.belief_grid, grid.copy(), atoms)


# ---------------------------------------------------------------------------
# Histories and playout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodRecord:
    period: int
    prior: Belief
    atom: ContractAtom
    state: int
    receiver_flow: float
    sender_flow: float
    cumulative_receiver: float
    cumulative_sender: float
    ic_residual: float
    snap_error: float


@dataclass
class History:
    """A realized path of play with per-period flows and diagnostics."""

    records: list
    discount: float

    def __len__(self):
        return len(self.records)

    def mean_sender_flow(self) -> float:
        return float(np.mean([r.sender_flow for r in self.records])) if self.records else 0.0

    def mean_receiver_flow(self) -> float:
        return float(np.mean([r.receiver_flow for r in self.records])) if self.records else 0.0

    def joint_frequencies(self, n_states: int, n_actions: int) -> np.ndarray:
        freq = np.zeros((n_states, n_actions))
        for r in self.records:
            freq[r.state, r.atom.action] += 1.0
        if self.records:
            freq /= len(self.records)
        return freq

    def worst_ic_residual(self) -> float:
        return float(min((r.ic_residual for r in self.records), default=0.0))

    def max_snap_error(self) -> float:
        return float(max((r.snap_error for r in self.records), default=0.0))


def _ic_residual(game: DiscountedGame, atom: ContractAtom, outside_next: float) -> float:
    d = game.discount
    mu = atom.belief.vec
    own = (1 - d) * (float(game.stage.u[atom.action] @ mu) + atom.transfer) + d * atom.promise
    dev = (1 - d) * float(np.max(game.stage.u @ mu)) + d * outside_next
    return own - dev


def playout(game: DiscountedGame, policy, seed: int, horizon: int) -> History:
    """Monte-Carlo realization of a policy, deterministic given the seed.

    Promises are snapped to the nearest grid knot (the snap error is logged)
    and obedience residuals are recorded per sampled atom.
    """
    rng = np.random.default_rng(seed)
    records = []
    d = game.discount
    outside_cache: dict = {}

    def outside(b: Belief) -> float:
        key = b.probabilities
        if key not in outside_cache:
            outside_cache[key] = no_info_value(game, b)
        return outside_cache[key]

    cum_r = 0.0
    cum_s = 0.0

    if isinstance(policy, PullbackStrategy):
        for t in range(horizon):
            atoms = policy.atoms_at_period(t)
            weights = np.array([a.weight for a in atoms])
            weights = weights / weights.sum()
            atom = atoms[int(rng.choice(len(atoms), p=weights))]
            state = int(rng.choice(atom.belief.n_states, p=atom.belief.vec))
            t_pay = atom.transfer
            rflow = float(game.stage.u[atom.action, state]) + t_pay
            sflow = float(game.stage.v[atom.action, state]) - game.k * t_pay
            w = (1 - d) * d**t if d > 0 else (1.0 if t == 0 else 0.0)
            cum_r += w * rflow
            cum_s += w * sflow
            res = _ic_residual(game, atom, outside(game.chain.push(atom.belief)))
            records.append(
                PeriodRecord(t, policy.prior_at(t), atom, state, rflow, sflow, cum_r, cum_s, res, 0.0)
            )
        return History(records, d)

    grid = policy.promises
    g = _find_belief(policy.beliefs, game.prior)
    if g is None:
        raise UnreachablePoint("starting prior is not on the policy's belief grid")
    promise = 0.0
    for t in range(horizon):
        i = int(np.argmin(np.abs(grid - promise)))
        snap = float(abs(grid[i] - promise))
        atoms = policy.atoms_at(g, i)
        weights = np.array([a.weight for a in atoms])
        weights = weights / weights.sum()
        atom = atoms[int(rng.choice(len(atoms), p=weights))]
        state = int(rng.choice(atom.belief.n_states, p=atom.belief.vec))
        rflow = float(game.stage.u[atom.action, state]) + atom.transfer
        sflow = float(game.stage.v[atom.action, state]) - game.k * atom.transfer
        w = (1 - d) * d**t if d > 0 else (1.0 if t == 0 else 0.0)
        cum_r += w * rflow
        cum_s += w * sflow
        nxt = game.chain.push(atom.belief)
        res = _ic_residual(game, atom, outside(nxt))
        prior_b = policy.beliefs[g]
        records.append(PeriodRecord(t, prior_b, atom, state, rflow, sflow, cum_r, cum_s, res, snap))
        g_next = _find_belief(policy.beliefs, nxt)
        if g_next is None:
            raise UnreachablePoint(f"continuation belief {nxt} left the belief grid at period {t}")
        g = g_next
        promise = float(atom.promise)
        if promise < grid[0] - 1e-9 or promise > grid[-1] + 1e-9:
            raise UnreachablePoint(f"promise {promise} left the grid at period {t}")
    return History(records, d)


def _find_belief(beliefs, b: Belief, tol: float = 1e-9):
    for i, x in enumerate(beliefs):
        if x.close_to(b, tol):
            return i
    return None


# ---------------------------------------------------------------------------
# Pullback: full-revelation strategies matching target outcome marginals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PullbackStrategy:
    """Reveal the state every period, recommend the target action mixture,
    and pay exactly the actor's loss relative to their state-best action.

    The last marginal repeats forever (stationary tail), so the actor nets
    their full-information value in every period by construction.
    """

    game: DiscountedGame
    marginals: tuple  # of (n_states, n_actions) arrays
    transfers: np.ndarray  # (n_states, n_actions)

    def prior_at(self, t: int) -> Belief:
        q = self.marginals[min(t, len(self.marginals) - 1)]
        return Belief(tuple(q.sum(axis=1)))

    def atoms_at_period(self, t: int):
        q = self.marginals[min(t, len(self.marginals) - 1)]
        n = self.game.stage.n_states
        atoms = []
        for theta in range(n):
            for a in range(self.game.stage.n_actions):
                if q[theta, a] <= 1e-14:
                    continue
                b = Belief.degenerate(theta, n)
                atoms.append(
                    ContractAtom(
                        belief=b,
                        action=a,
                        transfer=float(self.transfers[theta, a]),
                        promise=full_info_value(self.game, self.game.chain.push(b)),
                        weight=float(q[theta, a]),
                    )
                )
        return atoms

    def expected_transfer_bill(self) -> float:
        """Normalized discounted expected payment under the stationary tail."""
        d = self.game.discount
        bills = [float(np.sum(q * self.transfers)) for q in self.marginals]
        if d == 0.0:
            return bills[0]
        total = 0.0
        for t, b in enumerate(bills[:-1]):
            total += (1 - d) * d**t * b
        total += d ** (len(bills) - 1) * bills[-1]
        return total

    def receiver_value_of_marginals(self) -> float:
        """Normalized discounted actor value of the raw target marginals."""
        d = self.game.discount
        u = self.game.stage.u
        flows = [float(np.sum(q * u.T)) for q in self.marginals]
        if d == 0.0:
            return flows[0]
        total = 0.0
        for t, f in enumerate(flows[:-1]):
            total += (1 - d) * d**t * f
        total += d ** (len(flows) - 1) * flows[-1]
        return total


def pullback(game: DiscountedGame, target_marginals, base_receiver_value: float):
    """Full-revelation strategy matching the target joint outcome marginals.

    The designer's cost of moving from the base strategy to the constructed
    one is exactly k times the actor's full-information gain over the base
    value.  Raises InconsistentMarginals when a target's state marginal does
    not match the prior pushed forward by the chain.
    """
    stage = game.stage
    qs = []
    mu = game.prior
    for t, raw in enumerate(target_marginals):
        q = np.asarray(raw, dtype=float)
        if q.shape != (stage.n_states, stage.n_actions):
            raise InconsistentMarginals(f"marginal {t} has shape {q.shape}")
        if np.any(q < -1e-12) or abs(q.sum() - 1.0) > 1e-9:
            raise InconsistentMarginals(f"marginal {t} is not a distribution")
        if np.max(np.abs(q.sum(axis=1) - mu.vec)) > 1e-9:
            raise InconsistentMarginals(
                f"marginal {t} has state law {q.sum(axis=1)}, expected {mu.vec}"
            )
        qs.append(np.clip(q, 0.0, None))
        mu = game.chain.push(mu)
    if not qs:
        raise InconsistentMarginals("need at least one target marginal")
    transfers = np.max(stage.u, axis=0)[:, None] - stage.u.T  # (states, actions)
    strategy = PullbackStrategy(game, tuple(qs), transfers)
    cost = game.k * (full_info_value(game, game.prior) - float(base_receiver_value))
    return strategy, cost


# ---------------------------------------------------------------------------
# Backloading audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointAudit:
    belief_index: int
    promise_index: int
    n_paying_atoms: int
    slope_residual: float
    slope_ok: bool
    resolve_gap: float
    resolve_ok: bool

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.resolve_ok


@dataclass(frozen=True)
class BackloadingReport:
    points: tuple  # of PointAudit
    n_paying_points: int

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.points)

    def failures(self):
        return [p for p in self.points if not p.passed]


def verify_backloading(
    game: DiscountedGame,
    surface: ValueSurface,
    policy: PolicyTable,
    config: SolverConfig | None = None,
    fr_surface: ValueSurface | None = None,
    pay_tol: float = PAY_TOL,
    slope_tol: float = 1e-4,
    value_tol: float = 1e-6,
) -> BackloadingReport:
    """Audit every paying grid point for the payments-last-resort structure.

    Check (i): the surface slope just right of each paying atom's promise,
    at the continuation belief, must equal -k.  Check (ii): the point's
    design problem must admit an equal-value solution in which any paying
    atom's continuation value comes from the full-revelation-forever
    surface (transfers on other atoms are disabled), which witnesses that
    payments can be deferred behind a commitment to reveal the state.
    """
    if config is None:
        config = SolverConfig(surface.beliefs, surface.promises)
    ws = _Workspace(game, config)
    paying = policy.paying_points(pay_tol)
    if not paying:
        return BackloadingReport(points=(), n_paying_points=0)
    if fr_surface is None:
        fr_surface = solve(game, config, extract_policy=False, full_revelation=True).surface

    values = np.asarray(surface.values)
    fr_values = np.asarray(fr_surface.values)
    cont_rows_v = ws._cont_rows(values)
    cont_rows_fr = ws._cont_rows(fr_values)
    # transfers only appear on columns whose continuation is full revelation
    cloud_free = ws.cloud(values, transfers_allowed=False, cont_rows=cont_rows_v)
    cloud_fr = ws.cloud(fr_values, cont_rows=cont_rows_fr)
    cloud = {key: np.concatenate([cloud_free[key], cloud_fr[key]]) for key in cloud_free}
    env = _Envelope(cloud)

    audits = []
    grid = config.promise_grid
    for g, i in paying:
        atoms = policy.atoms_at(g, i)
        worst = 0.0
        for atom in atoms:
            if atom.transfer <= pay_tol:
                continue
            cont_b = game.chain.push(atom.belief)
            u_q = float(np.clip(atom.promise, grid[0], grid[-1]))
            try:
                slope = surface.right_derivative(u_q, cont_b)
            except OutOfRange:
                slope = surface.right_derivative(u_q, g)
            worst = max(worst, abs(slope + game.k))
        v_point = float(values[g, i])
        gap = v_point - env.value_at(ws.coords[g], float(grid[i]))
        audits.append(
            PointAudit(
                belief_index=g,
                promise_index=i,
                n_paying_atoms=sum(1 for a in atoms if a.transfer > pay_tol),
                slope_residual=worst,
                slope_ok=worst <= slope_tol,
                resolve_gap=gap,
                resolve_ok=gap <= value_tol,
            )
        )
    return BackloadingReport(points=tuple(audits), n_paying_points=len(paying))
