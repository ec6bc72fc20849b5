"""Independent reference solvers for checking the RRM and planners.

Nothing here shares code with the production solvers: the slot problem is
re-posed as a joint concave program in (bandwidth, power) and handed to a
generic conic solver for every association subset, and the sub-problems are
brute-forced on grids.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .environment import ChannelParams, GridMap, Position, User, gain_table
from .rrm import SnapshotInput

LN2 = math.log(2.0)


# --- exhaustive subset x convex oracle for the slot problem ---------------------------


def subset_optimum(inp: SnapshotInput, subset: Sequence[int]) -> float | None:
    """Best slot reward when exactly ``subset`` is served, jointly over bandwidth and power.

    With ``p_i = ρ_i β_i`` the per-user rate ``β log2(1 + g p / β)`` is a perspective
    of a concave function, so the problem is concave in ``(β, p)``. Returns
    ``None`` when the QoS floors cannot be met.
    """
    import cvxpy as cp

    idx = list(subset)
    if not idx:
        return 0.0
    bw = cp.Variable(len(idx))  # MHz
    pw = cp.Variable(len(idx))  # W
    g = inp.gains[idx] * 1e-6
    rate = -cp.rel_entr(bw, bw + cp.multiply(g, pw)) / LN2  # Mbps
    scale = inp.slot_duration_s * 1e6 / inp.cumulative_bits[idx]
    cons = [cp.sum(bw) <= inp.bandwidth_hz / 1e6, cp.sum(pw) <= inp.power_w, pw >= 0,
            rate >= inp.qos_rate_bps[idx] / 1e6]
    prob = cp.Problem(cp.Maximize(cp.sum(cp.log(1 + cp.multiply(scale, rate)))), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.error.SolverError:
        return None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or prob.value is None:
        return None
    return float(prob.value)


def rrm_oracle(inp: SnapshotInput) -> tuple[float, tuple[int, ...]]:
    """Maximum slot reward over every subset of active users."""
    users = [i for i in range(inp.n_users) if inp.active[i] and inp.gains[i] > 0]
    best, best_set = 0.0, ()
    for k in range(1, len(users) + 1):
        for sub in itertools.combinations(users, k):
            v = subset_optimum(inp, sub)
            if v is not None and v > best:
                best, best_set = v, sub
    return best, best_set


# --- grid oracles --------------------------------------------------------------------


def budget_grid_max(objective: Callable[[list[np.ndarray]], np.ndarray], lows: Sequence[float],
                    constraints: Sequence[tuple[Sequence[float], float]], steps: int):
    """Brute-force ``max objective(x)`` s.t. ``x ≥ lows`` and ``w·x ≤ b`` for each ``(w, b)``.

    The first ``n−1`` coordinates run over a uniform grid of ``steps`` intervals;
    the objective is assumed increasing in the last coordinate, which is set to
    its largest feasible value. Returns ``(value, x)``.
    """
    n = len(lows)
    lows = np.asarray(lows, dtype=float)
    ups = np.array([min(b / w[i] for w, b in constraints if w[i] > 0) for i in range(n)])
    grids = [np.linspace(lows[i], ups[i], steps + 1) for i in range(n - 1)]
    best, best_x = -math.inf, None
    heads = itertools.product(*grids[: n - 2]) if n >= 2 else [()]
    for head in heads:
        if n == 1:
            X = []
            shape = (1,)
        else:
            col = grids[n - 2]
            X = [np.full(col.shape, h) for h in head] + [col]
            shape = col.shape
        last = np.full(shape, math.inf)
        ok = np.ones(shape, dtype=bool)
        for w, b in constraints:
            used = sum(w[i] * X[i] for i in range(n - 1)) if n > 1 else np.zeros(shape)
            rem = b - used
            if w[n - 1] > 0:
                last = np.minimum(last, rem / w[n - 1])
            else:
                ok &= rem >= -1e-12 * abs(b)
        ok &= last >= lows[n - 1] - 1e-12
        if not ok.any():
            continue
        last = np.maximum(last, lows[n - 1])
        vals = np.where(ok, objective(X + [last]), -math.inf)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best = float(vals[k])
            best_x = np.array([x[k] for x in X] + [last[k]])
    return best, best_x


def waterfill_grid(weights, floors, budget, steps=10_000):
    """Grid maximizer of ``Σ log(1 + w_i β_i)`` over ``β ≥ floors, Σβ ≤ budget``."""
    w = np.asarray(weights, dtype=float)
    return budget_grid_max(lambda X: sum(np.log1p(w[i] * X[i]) for i in range(len(w))),
                           floors, [(np.ones(len(w)), budget)], steps)


def bandwidth_grid(ground, floors, psd, steps):
    """Grid maximizer of ``Σ log(1 + b_i/c_i)`` under bandwidth and power budgets (normalized)."""
    c = np.asarray(ground, dtype=float)
    s = np.asarray(psd, dtype=float)
    return budget_grid_max(lambda X: sum(np.log1p(X[i] / c[i]) for i in range(len(c))),
                           floors, [(np.ones(len(c)), 1.0), (s, 1.0)], steps)


def power_grid(bandwidth, snr, weights, floors, steps):
    """Grid maximizer of ``Σ τ_i log(1 + ω_i s_i)`` over ``s ≥ ζ, Σ s_i b_i ≤ 1`` (normalized)."""
    b = np.asarray(bandwidth, dtype=float)
    om = np.asarray(snr, dtype=float)
    tau = np.asarray(weights, dtype=float)
    return budget_grid_max(lambda X: sum(tau[i] * np.log1p(om[i] * X[i]) for i in range(len(b))),
                           floors, [(b, 1.0)], steps)


# --- instance generators ---------------------------------------------------------------


@dataclass(frozen=True)
class SnapshotSpec:
    n_users: int = 5
    bandwidth_hz: float = 2e6
    qos_rate_bps: float = 5e6
    cumulative_range_bits: tuple[float, float] = (10e6, 30e6)
    width_m: float = 600.0
    slot_duration_s: float = 3.0


def random_snapshot(spec: SnapshotSpec, seed: int) -> SnapshotInput:
    """All-active slot instance: users ~ U([0,w]²), UAV at a uniformly drawn lattice point."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    grid = GridMap(width_m=spec.width_m)
    ch = ChannelParams(bandwidth_hz=spec.bandwidth_hz)
    pts = grid.points()
    q = np.array(pts[int(rng.integers(0, len(pts)))], dtype=float) * grid.grid_step_m
    xy = rng.uniform(0.0, spec.width_m, size=(spec.n_users, 2))
    users = [User(i, Position(float(x), float(y)), 0, 1) for i, (x, y) in enumerate(xy)]
    gains = gain_table(q[None, :], users, ch)[0]
    cum = rng.uniform(*spec.cumulative_range_bits, size=spec.n_users)
    return SnapshotInput(gains, np.ones(spec.n_users, dtype=bool), cum,
                         np.full(spec.n_users, spec.qos_rate_bps), ch.bandwidth_hz, ch.tx_power_w,
                         spec.slot_duration_s)
