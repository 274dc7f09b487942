import copy

import pytest

from gwardar.detection import VerdictKind
from gwardar.engine import GwardarConfig
from gwardar.harness.experiment import ExperimentConfig, _step, build_baseline
from gwardar.harness.scenario import ScenarioSpec, implant
from gwardar.harness.topology import generate_topology
from gwardar.harness.traffic import TrafficGenerator, TrafficSpec
from gwardar.system import Network


@pytest.fixture(scope="module")
def baseline():
    topo = generate_topology("random(12,3)", seed=1)
    return build_baseline(topo, TrafficSpec(seed=1), ExperimentConfig(seed=1))


def run_until_verdict(net, gen, limit=400):
    for _ in range(limit // 20):
        _step(net, gen, 20)
        real = [v for v in net.gwardar.verdicts if v.kind is not VerdictKind.FALSE_POSITIVE]
        if real:
            return real
    return []


def test_fail_closed_before_any_model():
    topo = generate_topology("line(4)")
    net = Network(topo)
    net.install_routing()
    gen = TrafficGenerator(topo, TrafficSpec(seed=1))
    net.inject_many(gen.window(99))
    net.gwardar.run_detection_cycle(99)
    net.gwardar.run_detection_cycle(100)
    assert net.gwardar.model is None
    assert net.gwardar.fpr_timeline() == [(100, 1.0)]


def test_fpr_falls_during_learning():
    topo = generate_topology("random(12,3)", seed=1)
    net, _, _ = build_baseline(topo, TrafficSpec(seed=1), ExperimentConfig(seed=1))
    rates = [r for _, r in net.gwardar.fpr_timeline()]
    # the first cycle runs before any model exists
    assert rates[0] > rates[-1]
    assert rates[-1] <= 0.05
    assert not net.gwardar.learning


def test_snapshots_are_trusted_when_quiet(baseline):
    net, gen, _ = copy.deepcopy(baseline)
    g = net.gwardar
    assert g.interceptor.history and all(s.trusted for s in list(g.interceptor.history)[-3:])
    snap = g.maybe_snapshot(net.time, force=True)
    assert snap.trusted
    assert g.maybe_snapshot(net.time) is None


def test_incident_distrusts_snapshots(baseline):
    net, gen, _ = copy.deepcopy(baseline)
    g = net.gwardar
    g.config.auto_respond = False
    implant(ScenarioSpec("S1", "random(1)", "drop", seed=2), net, gen)
    verdicts = run_until_verdict(net, gen)
    assert verdicts and verdicts[0].kind is VerdictKind.COMPROMISED_NOS
    assert not g.snapshot_trusted()
    _step(net, gen, 100)
    newest = list(g.interceptor.history)[-1]
    assert not newest.trusted
    assert g.responses == []
    g.clear_incident()
    assert g.snapshot_trusted() == (g._last_cycle_anomalies == 0)


def test_auto_response_restores_and_logs(baseline):
    net, gen, _ = copy.deepcopy(baseline)
    truth = implant(ScenarioSpec("S3", "random(1)", "drop", seed=2), net, gen)
    verdicts = run_until_verdict(net, gen)
    assert verdicts[0].targets == truth.targets
    g = net.gwardar
    assert g.responses and g.responses[0]["restoration"]["tables_equal"]
    assert g.events.of("response")
    # restored tables no longer carry the attack rule
    (dev,) = truth.targets
    assert all(r.priority < 30000 for r in net.dataplane.snapshot_tables()[dev])


def test_verdicts_are_not_repeated(baseline):
    net, gen, _ = copy.deepcopy(baseline)
    net.gwardar.config.auto_respond = False
    implant(ScenarioSpec("S6", "random(1)", "drop", seed=4), net, gen)
    run_until_verdict(net, gen)
    for _ in range(10):
        _step(net, gen, 20)
    real = [v for v in net.gwardar.verdicts if v.kind is not VerdictKind.FALSE_POSITIVE]
    assert len(real) == 1


def test_replay_anomaly_from_duplicate_ids(baseline):
    net, gen, _ = copy.deepcopy(baseline)
    truth = implant(ScenarioSpec("S6", "random(1)", "replay", seed=5), net, gen)
    verdicts = run_until_verdict(net, gen)
    assert any(e["reason"] == "replay" for e in net.gwardar.events.of("anomaly"))
    assert {d for v in verdicts for d in v.targets} == truth.targets


def test_config_roundtrip():
    cfg = GwardarConfig(window=50, learn_horizon=300)
    cfg.detection.probe_count = 9
    back = GwardarConfig.from_dict(cfg.to_dict())
    assert back == cfg
    assert ExperimentConfig.from_dict(ExperimentConfig(gwardar=cfg).to_dict()).gwardar == cfg


def test_event_log_dump(tmp_path, baseline):
    net, _, _ = copy.deepcopy(baseline)
    path = tmp_path / "events.ndjson"
    net.gwardar.events.dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(net.gwardar.events.events)
    assert any('"model_built"' in line for line in lines)
