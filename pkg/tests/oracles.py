"""Independent reference computations used to pin expected test values.

Everything here recomputes results straight from the payoff matrices with
brute force (grid envelopes, direct enumeration), deliberately avoiding the
solver code paths it is used to check.
"""

import itertools

import numpy as np
from scipy.spatial import ConvexHull


def transfer_augmented_values(u, v, k, beliefs):
    """V^t on an array of beliefs, straight from the matrices.

    beliefs: (N, n_states).  Returns (N,) array of
    max_a [E[v_a] - k (max_b E[u_b] - E[u_a])].
    """
    eu = beliefs @ u.T  # (N, A)
    ev = beliefs @ v.T
    outside = eu.max(axis=1, keepdims=True)
    return (ev - k * (outside - eu)).max(axis=1)


def persuasion_only_values(u, v, beliefs, tie_break="designer"):
    """No-transfer designer flow with designer-favorable tie-breaking."""
    eu = beliefs @ u.T
    ev = beliefs @ v.T
    out = np.empty(beliefs.shape[0])
    for i in range(beliefs.shape[0]):
        tied = np.flatnonzero(eu[i] >= eu[i].max() - 1e-9)
        out[i] = ev[i, tied].max()
    return out


def _upper_chain(x, y):
    """Knots of the upper concave hull of a 1-d point set (monotone chain)."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    keep = [0]
    for i in range(1, xs.size):
        while len(keep) >= 2:
            a, b = keep[-2], keep[-1]
            # drop b when it lies weakly below the chord a -> i
            if (ys[b] - ys[a]) * (xs[i] - xs[a]) <= (ys[i] - ys[a]) * (xs[b] - xs[a]):
                keep.pop()
            else:
                break
        keep.append(i)
    return xs[keep], ys[keep]


def grid_cavify_value(u, v, k, prior, mesh=1e-3, values_fn=None):
    """Brute-force concavification of V^t over a belief mesh, at one prior.

    Two states: 1-d upper hull of the sampled curve.  Three states: upper
    facets of the 3-d hull over a barycentric mesh, evaluated at the prior.
    """
    values_fn = values_fn or (lambda B: transfer_augmented_values(u, v, k, B))
    n = u.shape[1]
    if n == 2:
        xs = np.arange(0.0, 1.0 + mesh / 2, mesh)
        beliefs = np.column_stack([1 - xs, xs])
        vals = values_fn(beliefs)
        hx, hy = _upper_chain(xs, vals)
        return float(np.interp(prior[1], hx, hy))
    if n == 3:
        steps = int(round(1.0 / mesh))
        ij = np.array(
            [(i, j) for i in range(steps + 1) for j in range(steps + 1 - i)], dtype=float
        )
        beliefs = np.column_stack(
            [ij[:, 0] / steps, ij[:, 1] / steps, 1.0 - (ij[:, 0] + ij[:, 1]) / steps]
        )
        vals = values_fn(beliefs)
        pts = np.column_stack([beliefs[:, 0], beliefs[:, 1], vals])
        lo, hi = pts.min(0), pts.max(0)
        span = np.where(hi - lo < 1e-12, 1.0, hi - lo)
        sc = (pts - lo) / span
        floor = sc.mean(0)
        floor[-1] = sc[:, -1].min() - 1.0
        hull = ConvexHull(np.vstack([sc, floor]))
        eq = hull.equations
        up = eq[:, 2] > 1e-12
        coef = -eq[up, :2] / eq[up, 2:3]
        const = -eq[up, -1] / eq[up, 2]
        q = (np.array([prior[0], prior[1]]) - lo[:2]) / span[:2]
        val_sc = float(np.min(coef @ q + const))
        return float(lo[-1] + span[-1] * val_sc)
    raise NotImplementedError("grid oracle covers two or three states")


def enumerate_best_response(u, v, k, belief, transfers):
    """Direct argmax with designer-favorable tie-breaking, as a plain loop."""
    best_actor = -np.inf
    for a in range(u.shape[0]):
        val = float(u[a] @ belief) + transfers[a]
        if val > best_actor:
            best_actor = val
    chosen, best_net = None, -np.inf
    for a in range(u.shape[0]):
        val = float(u[a] @ belief) + transfers[a]
        if val >= best_actor - 1e-9:
            net = float(v[a] @ belief) - k * transfers[a]
            if net > best_net:
                best_net = net
                chosen = a
    return chosen, best_actor


def stationary_2x2(rows):
    """Closed-form stationary law of a two-state chain, by linear solve."""
    a = np.array([[rows[0][0] - 1.0, rows[1][0]], [1.0, 1.0]])
    b = np.array([0.0, 1.0])
    return np.linalg.solve(a, b)


def all_splits_value(points, values, prior, max_support=3):
    """Best value over explicit splits of the prior across candidate points.

    Exhaustive over supports up to ``max_support``; used as a slow second
    opinion for small extremal sets.
    """
    n_pts = len(points)
    best = -np.inf
    for size in range(1, max_support + 1):
        for combo in itertools.combinations(range(n_pts), size):
            mat = np.vstack([np.array([points[i] for i in combo]).T, np.ones(size)])
            rhs = np.concatenate([prior, [1.0]])
            sol, residual, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
            if np.any(sol < -1e-9):
                continue
            if np.max(np.abs(mat @ sol - rhs)) > 1e-9:
                continue
            best = max(best, float(sum(w * values[i] for w, i in zip(sol, combo))))
    return best
