"""Trajectory planners over the lattice MDP with the slot RRM as reward."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..environment import GridPoint, InvalidPositionError, Scenario, ScenarioModel
from ..rrm import NonConvergenceError, InfeasibleError, RrmSolution
from ..rrm import _kernels as K
from ..rrm.core import OUTER_MAX_ITER, OUTER_TOL
from . import _search as S

KINDS = ("dfs", "ga_tp", "ga_iter", "circular", "fixed", "exhaustive")
EXHAUSTIVE_GUARD = 1_000_000
FIXED_POINT_M = (300.0, 300.0, 200.0)
ORBIT_CENTER_M = (300.0, 300.0)
ORBIT_RADIUS_M = 100.0
ORBIT_ALT_M = 200.0
GA_ITER_MAX = 10


class PlannerError(RuntimeError):
    pass


class SizeGuardError(PlannerError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "dfs"
    dfs_depth: int = 5
    generations: int = 300
    population: int = 30
    elites: int = 6
    mutation_prob: float = 0.1
    rng_seed: int = 0
    orbit_phase: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown planner kind {self.kind!r}; expected one of {KINDS}")
        if self.dfs_depth < 1:
            raise ValueError("dfs_depth must be >= 1")
        if not (self.population >= self.elites >= 1):
            raise ValueError("need population >= elites >= 1")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")

    def paper_scale(self) -> "PlannerConfig":
        return replace(self, generations=10_000, population=50, elites=10)

    @property
    def label(self) -> str:
        return f"dfs-{self.dfs_depth}" if self.kind == "dfs" else self.kind.replace("_", "-")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_label(cls, label: str, **kw) -> "PlannerConfig":
        """``dfs-5``, ``ga-tp``, ``ga_iter`` ... -> config."""
        name = label.replace("-", "_")
        if name.startswith("dfs_"):
            return cls(kind="dfs", dfs_depth=int(name[4:]), **kw)
        return cls(kind=name, **kw)


@dataclass
class Trajectory:
    initial_position: GridPoint
    positions: list[GridPoint]
    solutions: list[RrmSolution]
    slot_rewards: list[float]
    total_pf: float
    cumulative_bits: np.ndarray = field(repr=False)
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def served(self) -> set[int]:
        return set().union(*(s.association for s in self.solutions)) if self.solutions else set()


# --- evaluation -------------------------------------------------------------------


class SlotEvaluator:
    """Binds a :class:`ScenarioModel` to the compiled slot step."""

    def __init__(self, model: ScenarioModel, tol=OUTER_TOL, max_iter=OUTER_MAX_ITER):
        sc = model.scenario
        ch = sc.channel
        self.model = model
        self.B = ch.bandwidth_hz
        self.P = ch.tx_power_w
        self.dt = sc.dynamics.slot_duration_s
        self.bdt = self.B * self.dt
        self.snr_tab = model.gains * (self.P / self.B)
        self.qos_norm = model.qos / self.B
        self.tol = tol
        self.max_iter = max_iter
        self.T = sc.n_slots

    def node(self, p: GridPoint) -> int:
        try:
            return self.model.index[tuple(p)]
        except KeyError:
            raise InvalidPositionError(f"grid point {p} is outside the flight map") from None

    def step(self, t: int, node: int, cum: np.ndarray, max_sinr=False):
        new = np.empty_like(cum)
        f, st, mask, b, s, trace, it = S.slot_step(node, t, cum, self.snr_tab, self.model.activity,
                                                   self.qos_norm, self.bdt, self.tol, self.max_iter,
                                                   max_sinr, new)
        _raise_status(st, t)
        beta = b * self.B
        psd = s * (self.P / self.B)
        rates = (new - cum) / self.dt
        assoc = tuple(int(i) for i in np.flatnonzero(mask))
        return RrmSolution(assoc, beta, psd, float(f), rates, int(it), trace), new

    def trajectory(self, q0: GridPoint, path: Sequence[int], history=None) -> Trajectory:
        cum = self.model.initial_bits.copy()
        sols, rewards = [], []
        total = 0.0
        for k, node in enumerate(path):
            sol, cum = self.step(k + 1, int(node), cum)
            sols.append(sol)
            rewards.append(sol.slot_reward)
            total += sol.slot_reward
        pts = [self.model.points[int(n)] for n in path]
        return Trajectory(tuple(q0), pts, sols, rewards, total, cum, list(history or []))

    def path_value(self, path: np.ndarray) -> float:
        v, st = S.path_value(np.asarray(path, dtype=np.int64), self.model.initial_bits, self.snr_tab,
                             self.model.activity, self.qos_norm, self.bdt, self.tol, self.max_iter)
        _raise_status(st, None)
        return v


def _raise_status(st, t):
    where = "" if t is None else f" at slot {t}"
    if st == K.STATUS_INFEASIBLE:
        raise InfeasibleError("slot RRM infeasible" + where)
    if st == K.STATUS_NONCONVERGED:
        raise NonConvergenceError("slot RRM did not converge" + where)


def is_feasible_chain(model: ScenarioModel, q0: GridPoint, positions: Sequence[GridPoint]) -> bool:
    prev = model.index.get(tuple(q0))
    if prev is None:
        return False
    for p in positions:
        node = model.index.get(tuple(p))
        if node is None or node not in model.moves(prev):
            return False
        prev = node
    return True


def _model(scenario) -> ScenarioModel:
    return scenario if isinstance(scenario, ScenarioModel) else ScenarioModel(scenario)


# --- depth-first lookahead ---------------------------------------------------------


def dfs_plan(scenario, q0: GridPoint | None = None, depth_n: int = 5, evaluator=None) -> Trajectory:
    """Receding-horizon search: commit the first move of the best length-n sub-trajectory."""
    if depth_n < 1:
        raise ValueError("depth_n must be >= 1")
    model = _model(scenario)
    ev = evaluator or SlotEvaluator(model)
    q0 = tuple(model.scenario.initial_position if q0 is None else q0)
    node = ev.node(q0)
    cum = model.initial_bits.copy()
    base = 0.0
    path = []
    for t in range(1, ev.T + 1):
        depth = min(depth_n, ev.T - t + 1)
        first, _, _, st = S.lookahead(t, node, cum, base, depth, model.neighbors, model.n_neighbors,
                                      ev.snr_tab, model.activity, ev.qos_norm, ev.bdt, ev.tol, ev.max_iter)
        _raise_status(st, t)
        node = int(model.neighbors[node, first])
        nxt = np.empty_like(cum)
        f, *_ = S.slot_step(node, t, cum, ev.snr_tab, model.activity, ev.qos_norm, ev.bdt,
                            ev.tol, ev.max_iter, False, nxt)
        base += f
        cum = nxt
        path.append(node)
    return ev.trajectory(q0, path)


# --- exhaustive oracle -------------------------------------------------------------


def count_trajectories(model: ScenarioModel, q0_node: int, T: int) -> int:
    ways = np.zeros(len(model.points), dtype=object)
    ways[q0_node] = 1
    for _ in range(T):
        nxt = np.zeros_like(ways)
        for n in np.flatnonzero(ways):
            for m in model.moves(n):
                nxt[m] += ways[n]
        ways = nxt
    return int(ways.sum())


def exhaustive_plan(scenario, q0: GridPoint | None = None, guard: int = EXHAUSTIVE_GUARD) -> Trajectory:
    """Evaluate every feasible trajectory; the first lexicographic maximizer wins."""
    model = _model(scenario)
    ev = SlotEvaluator(model)
    q0 = tuple(model.scenario.initial_position if q0 is None else q0)
    start = ev.node(q0)
    width = model.neighbors.shape[1]
    if width ** ev.T > guard and count_trajectories(model, start, ev.T) > guard:
        raise SizeGuardError(f"more than {guard} trajectories; exhaustive search refused")
    best, best_path = -math.inf, None
    for moves in itertools.product(range(width), repeat=ev.T):
        node, path = start, []
        for m in moves:
            if m >= model.n_neighbors[node]:
                break
            node = int(model.neighbors[node, m])
            path.append(node)
        if len(path) < ev.T:
            continue
        v = ev.path_value(np.array(path))
        if v > best:
            best, best_path = v, path
    return ev.trajectory(q0, best_path)


# --- genetic search ------------------------------------------------------------------


def decode(model: ScenarioModel, start: int, gene: np.ndarray) -> np.ndarray:
    """Move genes -> node path. Gene ``g`` at a node with ``m`` moves selects move ``g mod m``."""
    path = np.empty(len(gene), dtype=np.int64)
    node = start
    for k, g in enumerate(gene):
        node = model.neighbors[node, g % model.n_neighbors[node]]
        path[k] = node
    return path


def encode(model: ScenarioModel, start: int, path: Sequence[int]) -> np.ndarray:
    gene = np.empty(len(path), dtype=np.int64)
    node = start
    for k, nxt in enumerate(path):
        gene[k] = int(np.flatnonzero(model.moves(node) == nxt)[0])
        node = nxt
    return gene


def run_ga(model: ScenarioModel, start: int, fitness, config: PlannerConfig, rng: np.random.Generator,
           initial_population: np.ndarray | None = None):
    """Elitist GA over move genes with tournament selection, one-point crossover
    and single-move mutation.

    Returns ``(best_gene, best_fitness, history)`` where ``history`` is the
    best-so-far fitness after each generation.
    """
    T = model.scenario.n_slots
    width = model.neighbors.shape[1]
    pop_n = config.population
    pop = rng.integers(0, width, size=(pop_n, T))
    if initial_population is not None:
        init = np.asarray(initial_population, dtype=np.int64).reshape(-1, T)[:pop_n]
        pop[: len(init)] = init
    cache: dict[bytes, float] = {}

    def fit(gene):
        path = decode(model, start, gene)
        key = path.tobytes()
        if key not in cache:
            cache[key] = fitness(path)
        return cache[key]

    best_gene, best_fit, history = None, -math.inf, []
    for _ in range(config.generations):
        scores = np.array([fit(g) for g in pop])
        order = np.argsort(-scores, kind="stable")
        if scores[order[0]] > best_fit:
            best_fit, best_gene = float(scores[order[0]]), pop[order[0]].copy()
        history.append(best_fit)
        nxt = [pop[i].copy() for i in order[: config.elites]]
        while len(nxt) < pop_n:
            a = _tournament(scores, rng)
            b = _tournament(scores, rng)
            if T > 1:
                cut = int(rng.integers(1, T))
                child = np.concatenate([pop[a][:cut], pop[b][cut:]])
            else:
                child = pop[a].copy()
            if rng.random() < config.mutation_prob:
                child[int(rng.integers(0, T))] = int(rng.integers(0, width))
            nxt.append(child)
        pop = np.array(nxt)
    return best_gene, best_fit, history


def _tournament(scores, rng, k=2):
    idx = rng.integers(0, len(scores), size=k)
    return int(idx[np.argmax(scores[idx])])


def _planner_rng(config: PlannerConfig, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(config.rng_seed), tag]))


def ga_tp_plan(scenario, q0: GridPoint | None = None, config: PlannerConfig | None = None,
               initial_population=None) -> Trajectory:
    """GA over whole trajectories; each gene's fitness re-solves the RRM along its path."""
    config = config or PlannerConfig(kind="ga_tp")
    model = _model(scenario)
    ev = SlotEvaluator(model)
    q0 = tuple(model.scenario.initial_position if q0 is None else q0)
    start = ev.node(q0)
    gene, _, history = run_ga(model, start, ev.path_value, config, _planner_rng(config, 1),
                              initial_population)
    return ev.trajectory(q0, decode(model, start, gene), history)


def random_path(model: ScenarioModel, start: int, T: int, rng: np.random.Generator) -> np.ndarray:
    path = np.empty(T, dtype=np.int64)
    node = start
    for k in range(T):
        node = int(model.neighbors[node, rng.integers(0, model.n_neighbors[node])])
        path[k] = node
    return path


def frozen_value(ev: SlotEvaluator, traj: Trajectory, path) -> float:
    """Reward of ``path`` with the RRM variables of ``traj`` held fixed slot by slot."""
    masks, betas, psds = frozen_tables(ev, traj)
    return S.frozen_path_value(np.asarray(path, dtype=np.int64), ev.model.initial_bits, ev.snr_tab,
                               masks, betas, psds, ev.qos_norm, ev.bdt)


def frozen_tables(ev: SlotEvaluator, traj: Trajectory):
    n = ev.model.scenario.n_users
    masks = np.zeros((len(traj.solutions), n), dtype=np.bool_)
    for k, s in enumerate(traj.solutions):
        masks[k, list(s.association)] = True
    betas = np.array([s.bandwidth_hz / ev.B for s in traj.solutions])
    psds = np.array([s.psd_w_hz / (ev.P / ev.B) for s in traj.solutions])
    return masks, betas, psds


def ga_iter_plan(scenario, q0: GridPoint | None = None, config: PlannerConfig | None = None,
                 initial_path=None, max_rounds: int = GA_ITER_MAX) -> Trajectory:
    """Alternating baseline: RRM on a fixed trajectory, then GA on the trajectory under
    the frozen RRM, until the true reward stops improving or ``max_rounds`` is hit."""
    config = config or PlannerConfig(kind="ga_iter")
    model = _model(scenario)
    ev = SlotEvaluator(model)
    q0 = tuple(model.scenario.initial_position if q0 is None else q0)
    start = ev.node(q0)
    rng = _planner_rng(config, 2)
    path = random_path(model, start, ev.T, rng) if initial_path is None else np.asarray(initial_path)
    cur = ev.trajectory(q0, path)
    history = [cur.total_pf]
    for _ in range(max_rounds):
        masks, betas, psds = frozen_tables(ev, cur)

        def fitness(p, masks=masks, betas=betas, psds=psds):
            return S.frozen_path_value(p, model.initial_bits, ev.snr_tab, masks, betas, psds,
                                       ev.qos_norm, ev.bdt)

        seed = encode(model, start, [model.index[p] for p in cur.positions])
        gene, _, _ = run_ga(model, start, fitness, config, rng, initial_population=seed[None, :])
        cand = ev.trajectory(q0, decode(model, start, gene))
        if not cand.total_pf > cur.total_pf:
            break
        cur = cand
        history.append(cur.total_pf)
    cur.history = history
    return cur


# --- fixed geometric baselines ---------------------------------------------------------


def orbit_point(phase: float, t: int, speed_step_m: float) -> tuple[float, float, float]:
    theta = phase + speed_step_m / ORBIT_RADIUS_M * t
    return (ORBIT_CENTER_M[0] + ORBIT_RADIUS_M * math.cos(theta),
            ORBIT_CENTER_M[1] + ORBIT_RADIUS_M * math.sin(theta),
            ORBIT_ALT_M)


def circular_path(model: ScenarioModel, phase: float) -> tuple[GridPoint, list[int]]:
    """Track the orbit: start at the lattice point nearest the orbit and, each slot,
    move to the reachable point nearest the orbit target (lexicographic ties)."""
    sc = model.scenario
    grid = sc.grid
    step = sc.dynamics.step_m
    q0 = grid.snap(orbit_point(phase, 0, step))
    node = model.index[q0]
    pts = np.array(model.points, dtype=float) * grid.grid_step_m
    path = []
    for t in range(1, sc.n_slots + 1):
        target = np.array(orbit_point(phase, t, step))
        moves = model.moves(node)
        d = np.linalg.norm(pts[moves] - target, axis=1)
        node = int(moves[np.argmin(d)])
        path.append(node)
    return q0, path


def circular_plan(scenario, q0_angle: float | None = None, config: PlannerConfig | None = None) -> Trajectory:
    model = _model(scenario)
    if q0_angle is None:
        cfg = config or PlannerConfig(kind="circular")
        q0_angle = cfg.orbit_phase
        if q0_angle is None:
            q0_angle = float(_planner_rng(cfg, 3).uniform(0.0, 2 * math.pi))
    q0, path = circular_path(model, q0_angle)
    return SlotEvaluator(model).trajectory(q0, path)


def fixed_plan(scenario, point_m=FIXED_POINT_M) -> Trajectory:
    model = _model(scenario)
    grid = model.scenario.grid
    x, y, z = point_m
    if not (0 <= x <= grid.width_m and 0 <= y <= grid.width_m and grid.min_alt_m <= z <= grid.max_alt_m):
        raise InvalidPositionError(f"fixed position {point_m} is off the map")
    q = grid.snap(point_m)
    node = model.index[q]
    return SlotEvaluator(model).trajectory(q, [node] * model.scenario.n_slots)


def plan(scenario, config: PlannerConfig, q0: GridPoint | None = None) -> Trajectory:
    model = _model(scenario)
    if config.kind == "dfs":
        return dfs_plan(model, q0, config.dfs_depth)
    if config.kind == "ga_tp":
        return ga_tp_plan(model, q0, config)
    if config.kind == "ga_iter":
        return ga_iter_plan(model, q0, config)
    if config.kind == "circular":
        return circular_plan(model, config=config)
    if config.kind == "fixed":
        return fixed_plan(model)
    if config.kind == "exhaustive":
        return exhaustive_plan(model, q0)
    raise ValueError(config.kind)
