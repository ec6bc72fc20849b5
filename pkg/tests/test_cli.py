import json
import shutil
import subprocess
from pathlib import Path

import pytest

from uavpf import checks, cli
from uavpf.harness import ScenarioSpec, SweepSpec, generate_scenario
from uavpf.rrm import InfeasibleError, NonConvergenceError

SHIPPED = sorted(Path(cli.builtin_scenario("tiny.json")).parent.glob("*.json"))


def explicit_scenario(tmp_path, **edit):
    d = generate_scenario(ScenarioSpec(n_users=3, n_slots=3, rng_seed=2)).to_dict()
    d["planner"] = {"kind": "dfs", "dfs_depth": 2}
    for k, v in edit.items():
        d[k] = v
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(d))
    return p, d


class TestSimulate:
    def test_generator_spec(self, tmp_path):
        code = cli.main(["simulate", "--scenario", "tiny.json", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        ep = json.loads((tmp_path / "episode.json").read_text())
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert ep["planner"] == "exhaustive" and len(ep["positions"]) == 3
        assert man["command"] == "simulate"
        assert {"argv", "config", "tool_version", "timestamp"} <= set(man)

    def test_explicit_scenario_and_flag_precedence(self, tmp_path):
        p, _ = explicit_scenario(tmp_path)
        out = tmp_path / "o"
        assert cli.main(["simulate", "--scenario", str(p), "--planner", "fixed", "--out", str(out)]) == 0
        ep = json.loads((out / "episode.json").read_text())
        assert ep["planner"] == "fixed"
        assert set(map(tuple, ep["positions"])) == {(7, 7, 5)}

    def test_depth_flag(self, tmp_path):
        p, _ = explicit_scenario(tmp_path)
        assert cli.main(["simulate", "--scenario", str(p), "--depth", "3", "--out", str(tmp_path / "o")]) == 0
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["config"]["planner"]["dfs_depth"] == 3

    def test_missing_field_names_it(self, tmp_path, capsys):
        p, d = explicit_scenario(tmp_path)
        del d["users"][1]["start_slot"]
        p.write_text(json.dumps(d))
        assert cli.main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_USAGE
        assert "users[1].start_slot" in capsys.readouterr().err

    def test_unknown_generator_field(self, tmp_path, capsys):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"n_userz": 3}))
        assert cli.main(["simulate", "--scenario", str(p)]) == cli.EXIT_USAGE
        assert "n_userz" in capsys.readouterr().err

    def test_usage_errors(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["simulate"])
        assert exc.value.code == cli.EXIT_USAGE
        with pytest.raises(SystemExit) as exc:
            cli.main(["teleport"])
        assert exc.value.code == cli.EXIT_USAGE
        assert cli.main(["simulate", "--scenario", str(tmp_path / "nope.json")]) == cli.EXIT_USAGE
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert cli.main(["simulate", "--scenario", str(bad)]) == cli.EXIT_USAGE

    @pytest.mark.parametrize("exc, code", [(InfeasibleError("x"), 2), (NonConvergenceError("x", None), 3)])
    def test_solver_failures_map_to_exit_codes(self, tmp_path, monkeypatch, exc, code):
        def boom(*a, **k):
            raise exc

        monkeypatch.setattr(cli, "run_episode", boom)
        assert cli.main(["simulate", "--scenario", "tiny.json", "--out", str(tmp_path)]) == code

    def test_paper_scale_recorded(self, tmp_path, monkeypatch):
        seen = {}

        def fake(sc, cfg):
            seen["cfg"] = cfg
            raise InfeasibleError("stop")

        monkeypatch.setattr(cli, "run_episode", fake)
        cli.main(["simulate", "--scenario", "tiny.json", "--planner", "ga_tp", "--paper-scale", "--out", str(tmp_path)])
        assert (seen["cfg"].generations, seen["cfg"].population) == (10_000, 50)
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["config"]["planner"]["generations"] == 10_000


class TestSweepAndPlots:
    def spec_file(self, tmp_path):
        p = tmp_path / "sweep.json"
        p.write_text(json.dumps({"base": {"n_users": 4, "n_slots": 3}, "axis": "qos_rate_bps",
                                 "values": [0.0, 1e6], "planners": ["dfs-1", "circular"], "n_seeds": 2}))
        return p

    def test_sweep_jobs_identical_and_export(self, tmp_path):
        p = self.spec_file(tmp_path)
        assert cli.main(["sweep", "--scenario", str(p), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["sweep", "--scenario", str(p), "--jobs", "2", "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
        assert (tmp_path / "a" / "manifest.json").exists()
        assert cli.main(["export-plots", "--sweep", str(tmp_path / "a"), "--out", str(tmp_path / "plots")]) == 0
        pf = json.loads((tmp_path / "plots" / "pf.json").read_text())
        assert pf["x"] == [0.0, 1e6] and set(pf["series"]) == {"dfs-1", "circular"}

    def test_export_without_sweep(self, tmp_path):
        assert cli.main(["export-plots", "--sweep", str(tmp_path)]) == cli.EXIT_USAGE

    def test_bad_sweep_spec(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"axis": "qos_rate_bps", "values": [0.0]}))
        assert cli.main(["sweep", "--scenario", str(p)]) == cli.EXIT_USAGE


class TestOracleCheck:
    def test_single_user_rrm_passes(self, tmp_path, capsys):
        args = ["oracle-check", "--suite", "rrm", "--users", "1", "--instances", "3", "--out", str(tmp_path)]
        assert cli.main(args) == cli.EXIT_OK
        rows = json.loads((tmp_path / "oracle_check.json").read_text())
        assert rows[0]["value"] == pytest.approx(1.0, rel=1e-6)
        assert "rrm/oracle" in capsys.readouterr().out

    def test_trajectory_suite(self):
        assert cli.main(["oracle-check", "--suite", "trajectory", "--users", "2", "--slots", "2",
                         "--instances", "2"]) == cli.EXIT_OK

    def test_band_violation_exit_code(self, monkeypatch):
        monkeypatch.setattr(checks, "run_suite", lambda *a, **k: [
            {"suite": "rrm", "check": "c", "value": 0.5, "band": ">= 0.995", "ok": False}])
        assert cli.main(["oracle-check", "--suite", "rrm"]) == cli.EXIT_ACCEPTANCE

    def test_options_file(self, tmp_path, monkeypatch):
        seen = {}

        def fake(suite, **kw):
            seen.update(kw, suite=suite)
            return []

        monkeypatch.setattr(checks, "run_suite", fake)
        assert cli.main(["oracle-check", "--scenario", "convergence.json", "--instances", "3"]) == 0
        assert seen == {"suite": "convergence", "users": [20], "slots": None, "instances": 3, "seed": 0,
                        "bandwidth_hz": None}


@pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.name)
def test_shipped_files_parse(path):
    d = json.loads(path.read_text())
    if "axis" in d:
        SweepSpec.from_dict(d)
    elif "suite" in d:
        assert d["suite"] in ("rrm", "trajectory", "grid", "convergence")
    else:
        d.pop("planner", None)
        ScenarioSpec.from_dict(d)


@pytest.mark.skipif(shutil.which("uavpf") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["uavpf", "simulate", "--scenario", "tiny.json", "--planner", "dfs-1", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "total_pf=" in r.stdout
