import json

from click.testing import CliRunner

from gwardar.cli import main
from gwardar.harness.metrics import read_attacks, read_fpr
from gwardar.harness.topology import generate_topology

TOPO = "gen:random(12,3)"


def invoke(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env, catch_exceptions=False)


def test_run_single_scenario(tmp_path):
    out = tmp_path / "out"
    res = invoke("--local", "run", "--topology", TOPO, "--scenario", "S6", "--seed", "1", "--out", str(out))
    assert res.exit_code == 0, res.output
    summary = json.loads(res.output)
    assert summary["attacks"] == 1 and summary["correct"] == 1
    assert [a.scenario for a in read_attacks(out / "attacks.csv")] == ["S6"]
    assert read_fpr(out / "fpr_timeline.csv")
    assert json.loads((out / "summary.json").read_text()) == summary
    assert json.loads((out / "verdicts.json").read_text())


def test_run_from_config_file_and_env_out(tmp_path):
    topo = tmp_path / "topo.json"
    generate_topology("ring(6)").dump(topo)
    scen = tmp_path / "scen.json"
    scen.write_text(json.dumps({"id": "S1", "action": "drop", "seed": 4}))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"topology": str(topo), "scenario": str(scen), "seed": 2,
                               "config": {"horizon": 200}}))
    out = tmp_path / "env-out"
    res = invoke("--local", "run", "--config", str(cfg), env={"GWARDAR_OUT": str(out)})
    assert res.exit_code == 0, res.output
    assert json.loads(res.output)["out"] == str(out)
    assert (out / "attacks.csv").exists()


def test_run_campaign(tmp_path):
    res = invoke("--local", "run", "--topology", TOPO, "--campaign", "3", "--seed", "1",
                 "--out", str(tmp_path))
    assert res.exit_code == 0, res.output
    assert len(read_attacks(tmp_path / "attacks.csv")) == 3


def test_run_errors(tmp_path):
    res = CliRunner().invoke(main, ["--local", "run"])
    assert res.exit_code == 2 and "--topology is required" in res.output
    res = CliRunner().invoke(main, ["--local", "run", "--topology", "gen:mesh(2)", "--out", str(tmp_path)])
    assert res.exit_code == 1 and "422" in res.output
    res = CliRunner().invoke(main, ["--local", "run", "--topology", TOPO, "--scenario", str(tmp_path / "x.json")])
    assert res.exit_code == 1 and "cannot read scenario" in res.output


def test_session_commands_locally():
    res = invoke("--local", "verify-replica", "--topology", TOPO)
    assert res.exit_code == 0 and json.loads(res.output)["equal"]
    res = invoke("--local", "advance", "--duration", "40", "--topology", TOPO)
    assert res.exit_code == 0 and json.loads(res.output)["verdicts"] == []
    res = invoke("--local", "takeover", "--topology", TOPO)
    assert json.loads(res.output)["active"]
    res = invoke("--local", "release-takeover", "--topology", TOPO)
    assert not json.loads(res.output)["active"]
    res = invoke("--local", "restore", "--force", "--devices", "0,2", "--topology", TOPO)
    assert set(json.loads(res.output)["devices"]) == {"0", "2"}
    res = invoke("--local", "new-session", "--topology", "gen:line(3)")
    assert json.loads(res.output)["devices"] == 3


def test_restore_without_incident_is_refused():
    res = CliRunner().invoke(main, ["--local", "restore", "--topology", TOPO])
    assert res.exit_code == 1 and "409" in res.output


def test_remote_mode_needs_session_and_server():
    res = CliRunner().invoke(main, ["verify-replica"], env={"GWARDAR_SESSION": ""})
    assert res.exit_code == 2 and "--session is required" in res.output
    res = CliRunner().invoke(main, ["--url", "http://127.0.0.1:9", "verify-replica", "--session", "s1"])
    assert res.exit_code == 1 and "cannot reach" in res.output
