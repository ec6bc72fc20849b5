"""Command-line front end: simulate, sweep, oracle-check, export-plots.

Precedence for every setting is flags > file > defaults. Exit codes: 0 success,
1 usage, 2 infeasible instance, 3 non-convergence, 4 acceptance violation.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import sys
from dataclasses import replace
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .environment import Scenario
from .harness import (
    ScenarioSpec,
    SweepSpec,
    generate_scenario,
    plot_data,
    run_episode,
    save_episode,
    sweep,
)
from .planners import PlannerConfig, SizeGuardError
from .rrm import InfeasibleError, NonConvergenceError

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_ACCEPTANCE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def builtin_scenario(name: str) -> Path:
    return Path(str(resources.files("uavpf") / "scenarios" / name))


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists() and builtin_scenario(path).exists():
        p = builtin_scenario(path)
    try:
        return json.loads(p.read_text())
    except FileNotFoundError:
        raise UsageError(f"cannot read {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc})") from None


def write_manifest(out: Path, command: str, config: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "tool_version": tool_version(),
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(),
        "output_dir": str(out),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


# --- scenario parsing ----------------------------------------------------------------

_SCENARIO_REQUIRED = ("users", "T", "initial_position")
_USER_REQUIRED = ("id", "position", "start_slot", "duration_slots")


def _check_scenario_fields(d: dict) -> None:
    for k in _SCENARIO_REQUIRED:
        if k not in d:
            raise UsageError(f"missing required field '{k}'")
    if not isinstance(d["users"], list):
        raise UsageError("field 'users' must be a list")
    for n, u in enumerate(d["users"]):
        for k in _USER_REQUIRED:
            if k not in u:
                raise UsageError(f"missing required field 'users[{n}].{k}'")


def load_simulation(d: dict, args) -> tuple[Scenario, PlannerConfig, dict]:
    """Explicit scenario (has ``users``) or generator spec, plus an optional ``planner`` block."""
    d = dict(d)
    planner = dict(d.pop("planner", {}))
    try:
        if "users" in d or "T" in d:
            _check_scenario_fields(d)
            sc = Scenario.from_dict(d)
            if args.seed is not None:
                sc = replace(sc, seed=args.seed)
            resolved = {"scenario": sc.to_dict()}
        else:
            spec = ScenarioSpec.from_dict(d)
            if args.seed is not None:
                spec = replace(spec, rng_seed=args.seed)
            sc = generate_scenario(spec)
            resolved = {"scenario_spec": spec.to_dict()}
    except KeyError as exc:
        raise UsageError(f"scenario: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"scenario: {exc}") from None
    if args.planner is not None:
        planner["kind"] = args.planner.replace("-", "_")
    if args.depth is not None:
        planner["dfs_depth"] = args.depth
    if "kind" in planner and planner["kind"].startswith("dfs_"):
        planner["dfs_depth"] = int(planner["kind"][4:])
        planner["kind"] = "dfs"
    planner.setdefault("rng_seed", sc.seed if sc.seed is not None else 0)
    if args.seed is not None:
        planner["rng_seed"] = args.seed
    try:
        cfg = PlannerConfig(**planner)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"planner: {exc}") from None
    if args.paper_scale:
        cfg = cfg.paper_scale()
    resolved["planner"] = cfg.to_dict()
    return sc, cfg, resolved


# --- commands ------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    sc, cfg, resolved = load_simulation(_load_json(args.scenario), args)
    out = Path(args.out)
    write_manifest(out, "simulate", resolved)
    res = run_episode(sc, cfg)
    save_episode(out / "episode.json", res, sc, cfg)
    print(f"{cfg.label}: total_pf={res.total_pf:.6f} nats  served={len(res.served_user_set)}/{sc.n_users}"
          f"  wall_clock={res.wall_clock_s:.3f}s")
    if res.audit:
        print("constraint audit failed:\n  " + "\n  ".join(res.audit), file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def load_sweep(d: dict, args) -> SweepSpec:
    try:
        spec = SweepSpec.from_dict(d)
    except KeyError as exc:
        raise UsageError(f"sweep spec: {exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"sweep spec: {exc}") from None
    opts = dict(spec.planner_options)
    if args.paper_scale:
        opts["paper_scale"] = True
    if args.depth is not None:
        opts["dfs_depth"] = args.depth
    spec = replace(spec, planner_options=opts)
    if args.planner is not None:
        spec = replace(spec, planners=tuple(args.planner.split(",")))
    if args.seed is not None:
        spec = replace(spec, seed_offset=args.seed)
    return spec


def cmd_sweep(args) -> int:
    spec = load_sweep(_load_json(args.scenario), args)
    out = Path(args.out)
    write_manifest(out, "sweep", {"sweep": spec.to_dict(), "jobs": args.jobs})
    res = sweep(spec, jobs=args.jobs, out_dir=out)
    for p in res.points():
        print(f"{spec.axis}={p['axis_value']!s:>10} {p['planner']:>9}  PF {p['pf_mean']:.4f} ± {p['pf_std']:.4f}"
              f"  served {p['served_mean']:.3f}  n={p['n']} failures={p['failures']}")
    print(f"failure rate {res.failure_rate:.3f}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    from . import checks

    if args.scenario:
        cfg = _load_json(args.scenario)
        for k, v in cfg.items():
            if getattr(args, k, None) in (None, []):
                setattr(args, k, v)
    suites = ["rrm", "trajectory", "grid"] if args.suite in (None, "all") else [args.suite]
    out = Path(args.out) if args.out else None
    if out:
        write_manifest(out, "oracle-check", {k: v for k, v in vars(args).items() if k != "func"})
    rows = []
    try:
        for s in suites:
            rows += checks.run_suite(s, users=args.users, slots=args.slots, instances=args.instances,
                                     seed=args.seed or 0, bandwidth_hz=args.bandwidth)
    except SizeGuardError as exc:
        raise UsageError(str(exc)) from None
    print(f"{'suite':<11}{'check':<34}{'value':>12}{'band':>16}  ok")
    for r in rows:
        print(f"{r['suite']:<11}{r['check']:<34}{r['value']:>12.6f}{r['band']:>16}  {'yes' if r['ok'] else 'NO'}")
    if out:
        (out / "oracle_check.json").write_text(json.dumps(rows, indent=1))
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_ACCEPTANCE


def cmd_export_plots(args) -> int:
    src = Path(args.sweep)
    try:
        pts = json.loads((src / "points.json").read_text())["points"]
    except FileNotFoundError:
        raise UsageError(f"{src} has no points.json; run a sweep first") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for metric in ("pf", "served"):
        (out / f"{metric}.json").write_text(json.dumps(plot_data(pts, metric), indent=1))
    print(f"wrote {out / 'pf.json'} and {out / 'served.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="uavpf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required,
                        help="JSON file (path or name of a shipped file)")
        sp.add_argument("--planner", help="dfs | ga_tp | ga_iter | circular | fixed | exhaustive (or dfs-N)")
        sp.add_argument("--depth", type=int, help="DFS lookahead depth n")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out")
        sp.add_argument("--paper-scale", action="store_true", help="GA at 10000 generations x 50 genes")

    sp = sub.add_parser("simulate", help="run one episode")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="seeded sweep over one axis")
    common(sp)
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("oracle-check", help="compare solvers against brute-force oracles")
    sp.add_argument("--suite", choices=["all", "rrm", "trajectory", "grid", "convergence"])
    sp.add_argument("--scenario", help="JSON file with suite options")
    sp.add_argument("--users", type=int, nargs="+")
    sp.add_argument("--slots", type=int)
    sp.add_argument("--instances", type=int)
    sp.add_argument("--bandwidth", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_oracle_check)

    sp = sub.add_parser("export-plots", help="plot-ready JSON series from a sweep directory")
    sp.add_argument("--sweep", required=True)
    sp.add_argument("--out", default="plots")
    sp.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"uavpf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"uavpf: infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonConvergenceError as exc:
        print(f"uavpf: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
