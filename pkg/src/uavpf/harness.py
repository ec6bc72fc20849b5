"""Scenario generation, episode execution, metrics, seeded sweeps and persistence."""

from __future__ import annotations

import csv
import io
import json
import math
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .environment import (
    ChannelParams,
    GridMap,
    Position,
    Scenario,
    ScenarioModel,
    UavDynamics,
    User,
    average_pathloss_db,
    gain_over_noise,
)
from .planners import PlannerConfig, Trajectory, is_feasible_chain, plan
from .rrm import InfeasibleError, NonConvergenceError, SnapshotInput, audit_solution

SCHEMA_VERSION = 1
CSV_COLUMNS = ("axis_value", "planner", "seed", "total_pf_nats", "pct_served", "wall_clock_s", "status")
AXES = ("qos_rate_bps", "n_users", "bandwidth_hz", "width_m", "planner")
SCENARIO_STREAM = 0


class PairingError(ValueError):
    pass


class AuditError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    width_m: float = 600.0
    grid_step_m: float = 40.0
    min_alt_m: float = 50.0
    max_alt_m: float = 200.0
    max_speed_mps: float = 15.0
    slot_duration_s: float = 3.0
    bandwidth_hz: float = 2e6
    tx_power_dbm: float = 23.0
    channel: dict = field(default_factory=dict)
    n_users: int = 20
    qos_rate_bps: float | tuple[float, ...] = 0.0
    n_slots: int = 20
    rng_seed: int = 0
    initial_position: tuple[int, int, int] | None = None
    duration_range: tuple[int, int] = (4, 8)
    initial_data_bits: float = 1.0

    def __post_init__(self):
        if self.n_users < 0 or self.n_slots < 1:
            raise ValueError("need n_users >= 0 and n_slots >= 1")
        lo, hi = self.duration_range
        if not 1 <= lo <= hi:
            raise ValueError("duration_range must satisfy 1 <= lo <= hi")
        if not isinstance(self.qos_rate_bps, (int, float)):
            object.__setattr__(self, "qos_rate_bps", tuple(float(r) for r in self.qos_rate_bps))
            if len(self.qos_rate_bps) != self.n_users:
                raise ValueError("per-user qos_rate_bps must have n_users entries")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise KeyError(f"unknown scenario field(s): {sorted(unknown)}")
        d = dict(d)
        for k in ("initial_position", "duration_range"):
            if d.get(k) is not None:
                d[k] = tuple(int(v) for v in d[k])
        if isinstance(d.get("qos_rate_bps"), list):
            d["qos_rate_bps"] = tuple(d["qos_rate_bps"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("initial_position", "duration_range", "qos_rate_bps"):
            if isinstance(out[k], tuple):
                out[k] = list(out[k])
        return out

    def with_axis(self, axis: str, value) -> "ScenarioSpec":
        if axis == "planner":
            return self
        if axis == "n_users":
            value = int(value)
        return replace(self, **{axis: value})


def default_initial_position(grid: GridMap) -> tuple[int, int, int]:
    """Lattice point nearest the top of the map centre."""
    c = grid.width_m / 2
    return grid.snap((c, c, grid.max_alt_m))


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Draw user positions ~ U([0,w]²), start slots ~ U{0..T}, durations ~ U{lo..hi}."""
    grid = GridMap(spec.width_m, spec.grid_step_m, spec.min_alt_m, spec.max_alt_m)
    dyn = UavDynamics(spec.max_speed_mps, spec.slot_duration_s)
    ch = ChannelParams(**{"bandwidth_hz": spec.bandwidth_hz, "tx_power_dbm": spec.tx_power_dbm, **spec.channel})
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.rng_seed), SCENARIO_STREAM]))
    n = spec.n_users
    xy = rng.uniform(0.0, spec.width_m, size=(n, 2))
    start = rng.integers(0, spec.n_slots + 1, size=n)
    lo, hi = spec.duration_range
    dur = rng.integers(lo, hi + 1, size=n)
    qos = spec.qos_rate_bps if isinstance(spec.qos_rate_bps, tuple) else (float(spec.qos_rate_bps),) * n
    users = tuple(
        User(i, Position(float(xy[i, 0]), float(xy[i, 1]), 0.0), int(start[i]), int(dur[i]),
             float(qos[i]), float(spec.initial_data_bits))
        for i in range(n)
    )
    q0 = spec.initial_position or default_initial_position(grid)
    return Scenario(grid, dyn, ch, users, spec.n_slots, tuple(q0), spec.rng_seed)


# --- episodes ---------------------------------------------------------------------


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    total_pf: float
    served_user_set: set[int]
    pct_served: float
    wall_clock_s: float
    seed: int | None
    planner: str
    initial_bits: np.ndarray = field(repr=False)
    audit: list[str] = field(default_factory=list)

    def to_dict(self, scenario: Scenario | None = None, config: PlannerConfig | None = None) -> dict:
        tr = self.trajectory
        d = {
            "schema_version": SCHEMA_VERSION,
            "planner": self.planner,
            "seed": self.seed,
            "total_pf_nats": self.total_pf,
            "served_user_set": sorted(self.served_user_set),
            "pct_served": self.pct_served,
            "wall_clock_s": self.wall_clock_s,
            "audit": self.audit,
            "initial_position": list(tr.initial_position),
            "positions": [list(p) for p in tr.positions],
            "slot_rewards": list(tr.slot_rewards),
            "solutions": [s.to_dict() for s in tr.solutions],
            "initial_bits": self.initial_bits.tolist(),
            "final_cumulative_bits": tr.cumulative_bits.tolist(),
        }
        if scenario is not None:
            d["scenario"] = scenario.to_dict()
        if config is not None:
            d["planner_config"] = config.to_dict()
        return d


def snapshot_from_geometry(scenario: Scenario, q, t: int, cumulative_bits) -> SnapshotInput:
    """Slot input recomputed from raw positions and channel constants (no lookup tables)."""
    ch = scenario.channel
    xyz = np.asarray(q, dtype=float) * scenario.grid.grid_step_m
    gains = np.array([gain_over_noise(average_pathloss_db(xyz, u, ch), ch) for u in scenario.users])
    active = np.array([u.start_slot <= t < u.start_slot + u.duration_slots for u in scenario.users], dtype=bool)
    qos = np.array([u.qos_rate_bps for u in scenario.users], dtype=float)
    return SnapshotInput(gains, active, np.asarray(cumulative_bits, dtype=float), qos, ch.bandwidth_hz,
                         ch.tx_power_w, scenario.dynamics.slot_duration_s)


def audit_trajectory(scenario: Scenario, tr: Trajectory, rtol: float = 1e-6, model=None) -> list[str]:
    """Re-check reachability and every slot's budgets and QoS floors from raw geometry."""
    model = model or ScenarioModel(scenario)
    problems = []
    if len(tr.positions) != scenario.n_slots:
        problems.append(f"trajectory has {len(tr.positions)} slots, expected {scenario.n_slots}")
    if not is_feasible_chain(model, tr.initial_position, tr.positions):
        problems.append("reachability chain violated")
    cum = np.array([u.initial_data_bits for u in scenario.users], dtype=float)
    for t, (q, sol) in enumerate(zip(tr.positions, tr.solutions), start=1):
        inp = snapshot_from_geometry(scenario, q, t, cum)
        problems += [f"slot {t}: {p}" for p in audit_solution(inp, sol, rtol)]
        cum = cum + sol.rates_bps * scenario.dynamics.slot_duration_s
    return problems


def run_episode(scenario: Scenario, config: PlannerConfig, model: ScenarioModel | None = None,
                audit: bool = True) -> EpisodeResult:
    model = model or ScenarioModel(scenario)
    t0 = time.perf_counter()
    tr = plan(model, config)
    elapsed = time.perf_counter() - t0
    served = tr.served
    r0 = model.initial_bits.copy()
    res = EpisodeResult(
        trajectory=tr,
        total_pf=tr.total_pf,
        served_user_set=served,
        pct_served=len(served) / scenario.n_users if scenario.n_users else 0.0,
        wall_clock_s=elapsed,
        seed=scenario.seed,
        planner=config.label,
        initial_bits=r0,
    )
    if audit:
        res.audit = audit_trajectory(scenario, tr, model=model)
    return res


def compute_pf(episode: EpisodeResult | Trajectory, initial_bits=None) -> float:
    """Telescoped PF: ``Σ_{served} ln(final cumulative bits) − ln R_i^(0)`` in nats."""
    tr = episode.trajectory if isinstance(episode, EpisodeResult) else episode
    r0 = episode.initial_bits if isinstance(episode, EpisodeResult) else np.asarray(initial_bits, dtype=float)
    served = sorted(tr.served)
    return float(sum(math.log(tr.cumulative_bits[i]) - math.log(r0[i]) for i in served))


def telescoping_residual(episode: EpisodeResult) -> float:
    """Relative gap between ``Σ_t f + Σ ln R0`` and ``Σ ln(final bits)`` over served users."""
    served = sorted(episode.served_user_set)
    lhs = sum(episode.trajectory.slot_rewards) + sum(math.log(episode.initial_bits[i]) for i in served)
    rhs = sum(math.log(episode.trajectory.cumulative_bits[i]) for i in served)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


def save_episode(path: Path, result: EpisodeResult, scenario=None, config=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.to_dict(scenario, config), indent=1))


# --- sweeps -------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    base: ScenarioSpec
    axis: str
    values: tuple
    planners: tuple[str, ...]
    n_seeds: int
    seed_offset: int = 1
    min_samples: int = 1
    planner_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")

    @property
    def seeds(self) -> list[int]:
        return list(range(self.seed_offset, self.seed_offset + self.n_seeds))

    def tasks(self) -> list[tuple]:
        out = []
        values = self.values if self.axis != "planner" else (None,)
        planners = self.planners if self.axis != "planner" else self.values
        for v in values:
            for p in planners:
                for s in self.seeds:
                    out.append((v if self.axis != "planner" else p, p, s))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        for key in ("axis", "values", "n_seeds"):
            if key not in d:
                raise KeyError(f"sweep spec missing field {key!r}")
        return cls(
            base=ScenarioSpec.from_dict(d.get("base", {})),
            axis=d["axis"],
            values=tuple(d["values"]),
            planners=tuple(d.get("planners", ())),
            n_seeds=int(d["n_seeds"]),
            seed_offset=int(d.get("seed_offset", 1)),
            min_samples=int(d.get("min_samples", 1)),
            planner_options=dict(d.get("planner_options", {})),
        )

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "axis": self.axis,
            "values": list(self.values),
            "planners": list(self.planners),
            "n_seeds": self.n_seeds,
            "seed_offset": self.seed_offset,
            "min_samples": self.min_samples,
            "planner_options": self.planner_options,
        }


@dataclass
class SweepResult:
    axis: str
    rows: list[dict]
    min_samples: int = 1

    def points(self) -> list[dict]:
        groups: dict[tuple, list[dict]] = {}
        for r in self.rows:
            groups.setdefault((r["axis_value"], r["planner"]), []).append(r)
        out = []
        for (v, p), rows in groups.items():
            ok = [r for r in rows if r["status"] == "ok"]
            pf = np.array([r["total_pf_nats"] for r in ok], dtype=float)
            served = np.array([r["pct_served"] for r in ok], dtype=float)
            out.append({
                "axis_value": v,
                "planner": p,
                "n": len(ok),
                "failures": len(rows) - len(ok),
                "pf_mean": float(pf.mean()) if ok else math.nan,
                "pf_std": float(pf.std(ddof=1)) if len(ok) > 1 else 0.0,
                "served_mean": float(served.mean()) if ok else math.nan,
                "served_std": float(served.std(ddof=1)) if len(ok) > 1 else 0.0,
                "below_min_samples": len(ok) < self.min_samples,
            })
        return out

    @property
    def failure_rate(self) -> float:
        return sum(r["status"] != "ok" for r in self.rows) / max(len(self.rows), 1)

    def summary_csv(self) -> str:
        """Deterministic per-episode summary; wall-clock times go to ``timing_csv``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r["axis_value"]), r["planner"], r["seed"], repr(float(r["total_pf_nats"])),
                        repr(float(r["pct_served"])), "", r["status"]])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("axis_value", "planner", "seed", "wall_clock_s"))
        for r in self.rows:
            w.writerow([_fmt(r["axis_value"]), r["planner"], r["seed"], f"{r['wall_clock_s']:.6f}"])
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _status_of(exc: BaseException) -> str:
    if isinstance(exc, InfeasibleError):
        return "infeasible"
    if isinstance(exc, NonConvergenceError):
        return "nonconvergence"
    if isinstance(exc, AuditError):
        return "audit_violation"
    return f"error:{type(exc).__name__}"


def _planner_config(label: str, seed: int, options: dict) -> PlannerConfig:
    cfg = PlannerConfig.from_label(label, rng_seed=seed)
    opts = {k: v for k, v in options.items() if k in PlannerConfig.__dataclass_fields__ and k != "kind"}
    cfg = replace(cfg, **opts)
    if options.get("paper_scale"):
        cfg = cfg.paper_scale()
    return cfg


def run_task(args) -> dict:
    """One (axis value, planner, seed) episode -> summary row. Never raises."""
    spec, axis, value, label, seed, options, out_dir = args
    row = {"axis_value": value, "planner": label, "seed": seed, "total_pf_nats": math.nan,
           "pct_served": math.nan, "wall_clock_s": 0.0, "status": "ok", "audit": []}
    try:
        sc = generate_scenario(replace(spec.with_axis(axis, value), rng_seed=seed))
        cfg = _planner_config(label, seed, options)
        res = run_episode(sc, cfg)
        row.update(total_pf_nats=res.total_pf, pct_served=res.pct_served, wall_clock_s=res.wall_clock_s,
                   audit=res.audit, served=len(res.served_user_set),
                   residual=telescoping_residual(res), compute_pf=compute_pf(res))
        if res.audit:
            row["status"] = "audit_violation"
        if out_dir is not None:
            save_episode(Path(out_dir) / "episodes" / f"{axis}={_fmt(value)}_{label}_seed{seed}.json", res, sc, cfg)
    except Exception as exc:  # failure policy: record and continue
        row["status"] = _status_of(exc)
        row["error"] = str(exc)
    return row


def sweep(spec: SweepSpec, jobs: int = 1, out_dir: str | Path | None = None) -> SweepResult:
    """Cartesian product of axis values × planners × seeds; rows keep task order."""
    tasks = [(spec.base, spec.axis, v, p, s, spec.planner_options, out_dir) for v, p, s in spec.tasks()]
    if jobs > 1 and len(tasks) > 1:
        with mp.get_context("spawn").Pool(jobs) as pool:
            rows = pool.map(run_task, tasks, chunksize=1)
    else:
        rows = [run_task(t) for t in tasks]
    result = SweepResult(spec.axis, rows, spec.min_samples)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(result.summary_csv())
        (out / "timing.csv").write_text(result.timing_csv())
        (out / "points.json").write_text(json.dumps(
            {"schema_version": SCHEMA_VERSION, "axis": spec.axis, "failure_rate": result.failure_rate,
             "points": result.points()}, indent=1))
    return result


# --- reporting ------------------------------------------------------------------------


def sign_test_pvalue(n_pos: int, n_neg: int) -> float:
    """Two-sided exact binomial sign test (ties dropped)."""
    n_pos, n_neg = int(n_pos), int(n_neg)  # numpy ints would overflow 2**n
    n = n_pos + n_neg
    if n == 0:
        return 1.0
    k = min(n_pos, n_neg)
    tail = sum(math.comb(n, i) for i in range(k + 1)) / 2 ** n
    return min(1.0, 2 * tail)


def compare_report(rows: Iterable[dict], planner_a: str, planner_b: str, metric: str = "total_pf_nats",
                   min_positive_frac: float | None = None) -> list[dict]:
    """Paired differences ``a − b`` per axis point with sign tests.

    Rows are paired on (axis_value, seed); a seed present for one planner but
    not the other raises :class:`PairingError`.
    """
    table: dict[tuple, dict[str, float]] = {}
    for r in rows:
        if r["planner"] not in (planner_a, planner_b) or r["status"] != "ok":
            continue
        v = None if r["axis_value"] == r["planner"] else r["axis_value"]  # planner-axis sweeps
        table.setdefault((v, r["seed"]), {})[r["planner"]] = r[metric]
    report: dict[Any, list[float]] = {}
    for (v, s), d in table.items():
        if planner_a == planner_b:
            d = {planner_a: d[planner_a], planner_b: d[planner_a]}
        if set(d) != {planner_a, planner_b}:
            raise PairingError(f"seed {s} at {v} lacks a result for one of {planner_a}, {planner_b}")
        report.setdefault(v, []).append(d[planner_a] - d[planner_b])
    out = []
    for v, diffs in report.items():
        diffs = np.array(diffs)
        n_pos, n_neg = int((diffs > 0).sum()), int((diffs < 0).sum())
        row = {"axis_value": v, "a": planner_a, "b": planner_b, "n": len(diffs),
               "mean_diff": float(diffs.mean()), "n_pos": n_pos, "n_neg": n_neg,
               "sign_p": sign_test_pvalue(n_pos, n_neg)}
        if min_positive_frac is not None:
            row["band_ok"] = row["mean_diff"] > 0 and n_pos / len(diffs) >= min_positive_frac
        out.append(row)
    return out


def relative_drop(points: Sequence[dict], planner: str, worst_value) -> float:
    """``(best mean PF over the axis − mean PF at worst_value) / best`` for one planner."""
    pts = {p["axis_value"]: p["pf_mean"] for p in points if p["planner"] == planner}
    best = max(pts.values())
    return (best - pts[worst_value]) / best


def plot_data(points: Sequence[dict], metric: str = "pf") -> dict:
    """Plot-ready export: ``{x, series: {planner: {mean, std}}}``."""
    xs = sorted({p["axis_value"] for p in points}, key=lambda v: (isinstance(v, str), v))
    series: dict[str, dict[str, list]] = {}
    for p in points:
        s = series.setdefault(p["planner"], {"mean": [math.nan] * len(xs), "std": [math.nan] * len(xs)})
        k = xs.index(p["axis_value"])
        s["mean"][k] = p[f"{metric}_mean"]
        s["std"][k] = p[f"{metric}_std"]
    return {"schema_version": SCHEMA_VERSION, "metric": metric, "x": xs, "series": series}
