"""Per-slot user association, bandwidth allocation and power control.

The public functions take and return physical units (Hz, W/Hz, bps, bits).
The heavy lifting happens in :mod:`uavpf.rrm._kernels` in normalized units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K

OUTER_TOL = 1e-4
OUTER_MAX_ITER = 100
DUAL_TOL = 1e-8  # relative change of the dual objective between accepted steps
DUAL_MAX_ITER = 10_000


class RrmError(RuntimeError):
    pass


class InfeasibleError(RrmError):
    """QoS floors exceed the bandwidth or power budget."""


class NonConvergenceError(RrmError):
    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


@dataclass(frozen=True)
class SnapshotInput:
    """Everything the slot problem needs besides the UAV position itself.

    ``gains`` is the per-user gain over noise ``10^(−ξ/10)/N0`` in 1/(W/Hz) at
    the UAV position under consideration.
    """

    gains: np.ndarray
    active: np.ndarray
    cumulative_bits: np.ndarray
    qos_rate_bps: np.ndarray
    bandwidth_hz: float
    power_w: float
    slot_duration_s: float = 1.0

    def __post_init__(self):
        for name in ("gains", "cumulative_bits", "qos_rate_bps"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "active", np.asarray(self.active, dtype=bool))
        if np.any(self.cumulative_bits <= 0):
            raise ValueError("cumulative_bits must be positive")

    @property
    def n_users(self) -> int:
        return self.gains.shape[0]

    @property
    def uniform_psd(self) -> float:
        return self.power_w / self.bandwidth_hz

    # normalized views used by the kernels
    @property
    def snr(self) -> np.ndarray:
        return self.gains * self.uniform_psd

    @property
    def ground_scale(self) -> np.ndarray:
        return self.cumulative_bits / (self.bandwidth_hz * self.slot_duration_s)

    @property
    def qos_norm(self) -> np.ndarray:
        return self.qos_rate_bps / self.bandwidth_hz

    @property
    def pc_weight(self) -> np.ndarray:
        return 1.0 / self.cumulative_bits

    def spectral_efficiency(self, psd_w_hz) -> np.ndarray:
        return np.log2(1.0 + np.asarray(psd_w_hz, dtype=float) * self.gains)


@dataclass(frozen=True)
class RrmSolution:
    association: tuple[int, ...]
    bandwidth_hz: np.ndarray
    psd_w_hz: np.ndarray
    slot_reward: float
    rates_bps: np.ndarray = field(repr=False)
    iterations: int = 0
    trace: np.ndarray = field(default=None, repr=False)

    @classmethod
    def empty(cls, n: int) -> "RrmSolution":
        z = np.zeros(n)
        return cls((), z, z.copy(), 0.0, z.copy(), 0, np.zeros(1))

    def slot_bits(self, slot_duration_s: float) -> np.ndarray:
        return self.rates_bps * slot_duration_s

    def to_dict(self) -> dict:
        return {
            "association": list(self.association),
            "bandwidth_hz": self.bandwidth_hz.tolist(),
            "psd_w_hz": self.psd_w_hz.tolist(),
            "rates_bps": self.rates_bps.tolist(),
            "slot_reward": self.slot_reward,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class WaterfillWeights:
    """Water-filling weights ``w_i`` (1/Hz) and bandwidth floors (Hz)."""

    weights: np.ndarray
    floors: np.ndarray

    @classmethod
    def from_input(cls, inp: SnapshotInput, psd_w_hz=None) -> "WaterfillWeights":
        psd = inp.uniform_psd if psd_w_hz is None else psd_w_hz
        e = inp.spectral_efficiency(np.broadcast_to(psd, inp.gains.shape))
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(inp.active, e * inp.slot_duration_s / inp.cumulative_bits, 0.0)
            floors = np.where(e > 0, inp.qos_rate_bps / e, np.inf)
        return cls(w, floors)


@dataclass
class DualState:
    mu: np.ndarray
    lambda1: float = 0.5
    lambda2: float = 0.8
    learning_rate: float = 0.1

    @classmethod
    def initial(cls, n: int, learning_rate: float = 0.1) -> "DualState":
        return cls(np.full(n, 0.5), 0.5, 0.8, learning_rate)

    def o(self, psd_norm) -> np.ndarray:
        return self.lambda1 + self.lambda2 * np.asarray(psd_norm) - self.mu


# --- water-filling ---------------------------------------------------------------


def waterfill_bandwidth(assoc: Sequence[int], weights: WaterfillWeights, budget_hz: float):
    """``β_i = max(floor_i, 1/λ − 1/w_i)`` on ``assoc`` with ``Σβ = budget``.

    Returns ``(beta, water_level)`` where ``water_level = λ`` (``None`` for an
    empty association). Raises :class:`InfeasibleError` if the floors do not fit.
    """
    n = weights.weights.shape[0]
    beta = np.zeros(n)
    idx = np.asarray(sorted(assoc), dtype=np.int64)
    if idx.size == 0:
        return beta, None
    w = weights.weights[idx]
    fl = weights.floors[idx]
    if np.any(w <= 0) or not np.all(np.isfinite(fl)):
        raise InfeasibleError("associated users need positive spectral efficiency")
    if fl.sum() > budget_hz * (1 + 1e-12):
        raise InfeasibleError(f"bandwidth floors {fl.sum():.6g} Hz exceed budget {budget_hz:.6g} Hz")
    out = np.empty(idx.size)
    level = K.waterfill(1.0 / w, fl, float(budget_hz), out)
    beta[idx] = out
    return beta, 1.0 / level


def waterfill_objective(beta, weights: WaterfillWeights) -> float:
    """Association objective ``Σ log(1 + w_i β_i)`` in nats."""
    return float(np.sum(np.log1p(weights.weights * np.asarray(beta))))


# --- association -------------------------------------------------------------


def user_association(inp: SnapshotInput):
    """Greedy incremental association under uniform PSD ``P/B``.

    Returns ``(assoc, beta_hz)`` with ``assoc`` a sorted tuple of user indices.
    """
    snr = inp.snr
    e0 = np.log2(1.0 + snr)
    with np.errstate(divide="ignore", invalid="ignore"):
        c0 = np.where(e0 > 0, inp.ground_scale / e0, np.inf)
        f0 = np.where(e0 > 0, inp.qos_norm / e0, np.inf)
    eligible = inp.active & (e0 > 0)
    mask, b, _, _ = K.associate(c0, f0, eligible)
    return tuple(int(i) for i in np.flatnonzero(mask)), b * inp.bandwidth_hz


# --- resource allocation ---------------------------------------------------------


def _ra_arrays(inp: SnapshotInput, assoc, psd_w_hz):
    idx = np.asarray(sorted(assoc), dtype=np.int64)
    s = np.asarray(psd_w_hz, dtype=float)[idx] / inp.uniform_psd
    e = np.log2(1.0 + s * inp.snr[idx])
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(e > 0, inp.ground_scale[idx] / e, np.inf)
        fl = np.where(e > 0, inp.qos_norm[idx] / e, np.where(inp.qos_norm[idx] > 0, np.inf, 0.0))
    return idx, c, fl, s


def dual_objective(state: DualState, c, floors, psd_norm) -> float:
    """Lagrange dual function of the bandwidth problem (normalized units).

    Includes the constant ``−Σ log c_i`` so that it equals the primal optimum at
    zero duality gap.
    """
    o = state.o(psd_norm)
    if np.any(o <= 0):
        return math.inf
    return float(
        -o.size
        - np.sum(np.log(o))
        - np.sum(np.log(c))
        - np.sum(state.mu * (c + floors))
        + state.lambda1 * (np.sum(c) + 1.0)
        + state.lambda2 * (np.sum(psd_norm * c) + 1.0)
    )


def dual_gradient(state: DualState, c, floors, psd_norm):
    o = state.o(psd_norm)
    inv = 1.0 / o
    g_mu = inv - c - floors
    g_l1 = -inv.sum() + 1.0 + c.sum()
    g_l2 = -(psd_norm * inv).sum() + 1.0 + (psd_norm * c).sum()
    return g_mu, g_l1, g_l2


def ra_dual_step(state: DualState, c, floors, psd_norm) -> tuple[DualState, bool]:
    """One projected subgradient update of ``(μ, λ1, λ2)``.

    The step is rejected (and the learning rate halved) if it leaves the domain
    ``o_i > 0`` or increases the dual objective. Returns ``(new_state, accepted)``.
    """
    g_mu, g_l1, g_l2 = dual_gradient(state, c, floors, psd_norm)
    gamma = state.learning_rate
    cand = DualState(
        np.maximum(state.mu - gamma * g_mu, 0.0),
        max(state.lambda1 - gamma * g_l1, 0.0),
        max(state.lambda2 - gamma * g_l2, 0.0),
        gamma,
    )
    before = dual_objective(state, c, floors, psd_norm)
    after = dual_objective(cand, c, floors, psd_norm)
    if not math.isfinite(after) or after > before:
        rejected = DualState(state.mu.copy(), state.lambda1, state.lambda2, max(gamma / 2, 1e-6))
        return rejected, False
    return cand, True


def _project_feasible(b, floors, psd_norm):
    """Clip to the floors, then rescale the part above the floors onto the tightest budget.

    The objective is increasing in every share, so the recovered point is pushed
    up to (or pulled back to) the boundary of the feasible set.
    """
    b = np.maximum(b, floors)
    above = b - floors
    t = math.inf
    if above.sum() > 0:
        t = (1.0 - floors.sum()) / above.sum()
    pa = (psd_norm * above).sum()
    if pa > 0:
        t = min(t, (1.0 - (psd_norm * floors).sum()) / pa)
    if not math.isfinite(t):
        return b
    return floors + max(t, 0.0) * above


def ra_subgradient(inp: SnapshotInput, assoc, psd_w_hz, tol=DUAL_TOL, max_iter=DUAL_MAX_ITER,
                   learning_rate=0.1, return_state=False):
    """Bandwidth allocation by projected subgradient descent on the dual.

    Multipliers start at ``μ_i = 0.5, λ1 = 0.5, λ2 = 0.8``; the loop stops when
    the dual objective changes by at most ``tol`` (relative) between accepted
    steps, or the learning rate hits its 1e-6 floor. The primal point is
    recovered from ``β_i = 1/o_i − 1/w_i`` and projected onto the feasible set.
    """
    n = inp.n_users
    beta = np.zeros(n)
    idx, c, fl, s = _ra_arrays(inp, assoc, psd_w_hz)
    if idx.size == 0:
        return (beta, None) if return_state else beta
    if fl.sum() > 1.0 + 1e-12 or (s * fl).sum() > 1.0 + 1e-12:
        raise InfeasibleError("QoS floors do not fit the bandwidth/power budgets")
    state = DualState.initial(idx.size, learning_rate)
    val = dual_objective(state, c, fl, s)
    converged = False
    for _ in range(max_iter):
        state, ok = ra_dual_step(state, c, fl, s)
        if not ok:
            if state.learning_rate <= 1e-6:
                converged = True
                break
            continue
        prev, val = val, dual_objective(state, c, fl, s)
        if abs(val - prev) <= tol * abs(val):
            converged = True
            break
    o = state.o(s)
    b = _project_feasible(1.0 / o - c, fl, s)
    beta[idx] = b * inp.bandwidth_hz
    if not converged:
        raise NonConvergenceError("dual subgradient hit the iteration cap", last=(beta, state))
    return (beta, state) if return_state else beta


def ra_kkt(inp: SnapshotInput, assoc, psd_w_hz, return_multipliers=False):
    """Bandwidth allocation by solving the KKT system of the same dual exactly.

    ``λ1`` and ``λ2`` are located by nested safeguarded root finding on the
    budget residuals instead of subgradient steps.
    """
    n = inp.n_users
    beta = np.zeros(n)
    idx, c, fl, s = _ra_arrays(inp, assoc, psd_w_hz)
    if idx.size == 0:
        return (beta, (0.0, 0.0, np.zeros(0))) if return_multipliers else beta
    out = np.empty(idx.size)
    l1, l2, status = K.allocate_bandwidth(c, fl, s, out)
    if status == K.STATUS_INFEASIBLE:
        raise InfeasibleError("QoS floors do not fit the bandwidth/power budgets")
    beta[idx] = out * inp.bandwidth_hz
    if return_multipliers:
        mu = np.maximum(l1 + l2 * s - 1.0 / (c + out), 0.0)
        return beta, (l1, l2, mu)
    return beta


def ra_optimize(inp: SnapshotInput, assoc, psd_w_hz, method: str = "kkt", **kw) -> np.ndarray:
    if method == "kkt":
        return ra_kkt(inp, assoc, psd_w_hz)
    if method == "subgradient":
        return ra_subgradient(inp, assoc, psd_w_hz, **kw)
    raise ValueError(f"unknown RA method {method!r}")


# --- power control -------------------------------------------------------------


def pc_closed_form(inp: SnapshotInput, assoc, bandwidth_hz) -> np.ndarray:
    """Closed-form PSD ``ρ_i = max(ζ_i, τ_i/(β_i λ) − 1/ω_i)`` with ``Σ ρ_i β_i = P``."""
    n = inp.n_users
    psd = np.zeros(n)
    idx = np.asarray(sorted(assoc), dtype=np.int64)
    if idx.size == 0:
        return psd
    b = np.asarray(bandwidth_hz, dtype=float)[idx] / inp.bandwidth_hz
    out = np.empty(idx.size)
    _, status = K.control_power(b, inp.snr[idx], inp.pc_weight[idx], inp.qos_norm[idx], out)
    if status == K.STATUS_INFEASIBLE:
        raise InfeasibleError("QoS power floors exceed the power budget")
    psd[idx] = out * inp.uniform_psd
    return psd


# --- evaluation ----------------------------------------------------------------


def rates(inp: SnapshotInput, bandwidth_hz, psd_w_hz) -> np.ndarray:
    return np.where(inp.active, np.asarray(bandwidth_hz) * inp.spectral_efficiency(psd_w_hz), 0.0)


def slot_reward(inp: SnapshotInput, assoc, bandwidth_hz, psd_w_hz) -> float:
    """``Σ_{i∈A} ln(1 + R_i·ΔT / cum_i)`` in nats."""
    idx = np.asarray(sorted(assoc), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    r = rates(inp, bandwidth_hz, psd_w_hz)[idx]
    return float(np.sum(np.log1p(r * inp.slot_duration_s / inp.cumulative_bits[idx])))


def _solution_from_kernel(inp, mask, b, s, f, trace, it, status):
    if status == K.STATUS_INFEASIBLE:
        raise InfeasibleError("RA/PC sub-problem infeasible")
    if status == K.STATUS_NONCONVERGED:
        raise NonConvergenceError(f"RA/PC alternation did not converge in {it} iterations")
    beta = b * inp.bandwidth_hz
    psd = s * inp.uniform_psd
    assoc = tuple(int(i) for i in np.flatnonzero(mask))
    return RrmSolution(assoc, beta, psd, float(f), rates(inp, beta, psd), int(it), trace)


def rrm_evaluate(inp: SnapshotInput, tol: float = OUTER_TOL, max_iter: int = OUTER_MAX_ITER) -> RrmSolution:
    """Slot reward ``f(q)`` with its association, bandwidth and PSD.

    Uniform PSD, greedy association, then RA/PC alternation on the fixed
    association until the reward changes by at most ``tol`` (relative).
    """
    out = K.rrm_kernel(inp.snr, inp.ground_scale, inp.qos_norm, inp.pc_weight,
                       inp.active, tol, max_iter, False)
    return _solution_from_kernel(inp, *out)


def max_sinr_rrm(inp: SnapshotInput, tol: float = OUTER_TOL, max_iter: int = OUTER_MAX_ITER) -> RrmSolution:
    """Baseline: serve only the feasible active user with the strongest channel."""
    out = K.rrm_kernel(inp.snr, inp.ground_scale, inp.qos_norm, inp.pc_weight,
                       inp.active, tol, max_iter, True)
    return _solution_from_kernel(inp, *out)


def audit_solution(inp: SnapshotInput, sol: RrmSolution, rtol: float = 1e-6) -> list[str]:
    """Constraint violations of a solution (empty list when feasible)."""
    problems = []
    B, P = inp.bandwidth_hz, inp.power_w
    beta, psd = sol.bandwidth_hz, sol.psd_w_hz
    served = np.zeros(inp.n_users, dtype=bool)
    served[list(sol.association)] = True
    if np.any(beta < -rtol * B) or np.any(psd < -rtol * inp.uniform_psd):
        problems.append("negative bandwidth or PSD")
    if np.any(beta[~served] != 0):
        problems.append("bandwidth given to an unassociated user")
    if np.any(served & ~inp.active):
        problems.append("inactive user associated")
    if beta.sum() > B * (1 + rtol):
        problems.append(f"bandwidth budget exceeded: {beta.sum():.9g} > {B:.9g}")
    if (beta * psd).sum() > P * (1 + rtol):
        problems.append(f"power budget exceeded: {(beta * psd).sum():.9g} > {P:.9g}")
    r = rates(inp, beta, psd)
    short = served & (r < inp.qos_rate_bps * (1 - rtol))
    if np.any(short):
        problems.append(f"QoS violated for users {np.flatnonzero(short).tolist()}")
    return problems
