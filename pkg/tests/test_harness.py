import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwardar.detection import NosMode, Verdict, VerdictKind
from gwardar.harness.experiment import (
    AttackRecord,
    ExperimentConfig,
    ExperimentMetrics,
    WarmupSpec,
    campaign_specs,
    run_campaign,
    stabilized,
)
from gwardar.harness.metrics import emit_metrics, read_attacks, read_fpr
from gwardar.harness.scenario import SCENARIOS, GroundTruth, ScenarioError, ScenarioSpec
from gwardar.harness.topology import ParseError, generate_topology, load_prefix_list
from gwardar.harness.traffic import TrafficGenerator, TrafficSpec, generate_traffic


# -- topology ------------------------------------------------------------------


def test_generator_shapes():
    line = generate_topology("gen:line(4)")
    assert len(line.devices) == 4 and len(line.links) == 2 * 3
    ring = generate_topology("ring(5)")
    assert len(ring.links) == 2 * 5
    rnd = generate_topology("gen:random(54,3)", seed=2)
    assert len(rnd.devices) == 54 and len(rnd.links) == 2 * 81
    assert [str(h.prefix) for h in line.hosts] == [f"10.0.{d}.0/24" for d in range(4)]
    assert generate_topology("gen:random:54:3", seed=2) == rnd


def test_generators_are_seeded():
    assert generate_topology("random(20,3)", seed=5) == generate_topology("random(20,3)", seed=5)
    assert generate_topology("random(20,3)", seed=5) != generate_topology("random(20,3)", seed=6)


def test_bad_generator_spec(tmp_path):
    with pytest.raises(ParseError):
        generate_topology("gen:mesh(4)")
    with pytest.raises(FileNotFoundError):
        generate_topology(str(tmp_path / "none.json"))
    with pytest.raises(ValueError):
        generate_topology("line(1)")


def test_prefix_list(tmp_path):
    p = tmp_path / "prefixes.txt"
    p.write_text("# site prefixes\n10.1.0.0/16\n192.168.4.0/24  # lab\n\n")
    prefixes = load_prefix_list(p)
    assert prefixes == ["10.1.0.0/16", "192.168.4.0/24"]
    topo = generate_topology("line(3)", prefixes=prefixes)
    assert [str(h.prefix) for h in topo.hosts] == prefixes
    p.write_text("not-a-prefix\n")
    with pytest.raises(ParseError):
        load_prefix_list(p)


# -- traffic -------------------------------------------------------------------


def test_traffic_is_seeded_and_rate_bound():
    topo = generate_topology("random(10,3)", seed=1)
    spec = TrafficSpec(rate=2.5, duration=200, seed=4)
    a = list(generate_traffic(topo, spec))
    b = list(generate_traffic(topo, spec))
    assert a == b
    assert 400 <= len(a) <= 600
    ids = [h.packet_id for _, h, _ in a]
    assert ids == list(range(1, len(a) + 1))
    assert all(0 <= t < 200 for t, _, _ in a)


def test_traffic_respects_prefix_filter_and_windows():
    topo = generate_topology("line(5)")
    gen = TrafficGenerator(topo, TrafficSpec(rate=3, seed=1, flows=0), prefixes=["10.0.4.0/24"])
    first = list(gen.window(10))
    second = list(gen.window(10))
    assert gen.time == 20
    assert all(topo.attachment_for(h.dst_addr).device == 4 for _, h, _ in first + second)
    assert second[0][1].packet_id == first[-1][1].packet_id + 1
    for _, h, ingress in first:
        assert topo.attachment_for(h.src_addr).device == ingress[0]


def test_bad_traffic_rate():
    with pytest.raises(ValueError):
        TrafficGenerator(generate_topology("line(2)"), TrafficSpec(rate=0))


# -- scenarios -----------------------------------------------------------------


def test_scenario_validation():
    assert "S5" not in SCENARIOS
    with pytest.raises(ScenarioError):
        ScenarioSpec("S5")
    with pytest.raises(ScenarioError):
        ScenarioSpec("S1", action="replay")
    with pytest.raises(ScenarioError):
        ScenarioSpec("S6", targets="random(0)")
    with pytest.raises(ScenarioError):
        ScenarioSpec("S6", targets="some")
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict({"id": "S1", "colour": "red"})
    assert ScenarioSpec.default("S4").target_count() == 2
    assert ScenarioSpec("S6", targets=[1, 4]).target_count() == 2


def test_scenario_file(tmp_path):
    spec = ScenarioSpec("S3", "random(1)", "misroute", 10, 7)
    p = tmp_path / "s.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert ScenarioSpec.load(p) == spec


def test_ground_truth_matching():
    nos = GroundTruth("S2", VerdictKind.COMPROMISED_NOS, frozenset({1, 2}), NosMode.RULE_MISMATCH)
    assert nos.matches([Verdict(VerdictKind.COMPROMISED_NOS, frozenset({1, 2}))])
    assert not nos.matches([Verdict(VerdictKind.COMPROMISED_NOS, frozenset({1}))])
    assert not nos.matches([Verdict(VerdictKind.FALSE_POSITIVE)])
    dev = GroundTruth("S6", VerdictKind.MALICIOUS_DEVICE, frozenset({3, 5}))
    split = [Verdict(VerdictKind.MALICIOUS_DEVICE, frozenset({3})),
             Verdict(VerdictKind.FALSE_POSITIVE),
             Verdict(VerdictKind.MALICIOUS_DEVICE, frozenset({5}))]
    assert dev.matches(split)
    assert not dev.matches(split + [Verdict(VerdictKind.COMPROMISED_NOS, frozenset({3}))])


def test_campaign_specs_spread_over_scenarios():
    specs = campaign_specs(25, seed=3)
    assert len(specs) == 25
    assert {s.id for s in specs} == set(SCENARIOS)
    assert [s.id for s in specs].count("S1") == 5
    assert campaign_specs(25, seed=3) == specs


# -- warm-up and metrics -------------------------------------------------------


def test_stabilized():
    spec = WarmupSpec(stable_windows=3, epsilon=0.01, min_windows=4)
    assert not stabilized([0.5, 0.2], spec)
    assert stabilized([0.5, 0.2, 0.0, 0.0, 0.0, 0.0], spec)
    assert not stabilized([0.5, 0.2, 0.0, 0.05, 0.0, 0.0], spec)


records = st.builds(
    AttackRecord,
    st.sampled_from(SCENARIOS), st.integers(0, 10_000), st.one_of(st.none(), st.integers(0, 10_000)),
    st.sampled_from(["malicious_device", "compromised_nos", "none"]),
    st.lists(st.integers(0, 60), max_size=3), st.lists(st.integers(0, 60), max_size=3),
    st.booleans(), st.one_of(st.none(), st.booleans()), st.integers(0, 2**32))


@settings(max_examples=40, deadline=None)
@given(st.lists(records, max_size=6),
       st.lists(st.tuples(st.integers(0, 10_000), st.floats(0, 1).map(lambda x: round(x, 6))), max_size=6))
def test_metrics_csv_roundtrip(tmp_path_factory, attacks, fpr):
    out = tmp_path_factory.mktemp("m")
    files = emit_metrics(ExperimentMetrics(attacks=attacks, fpr_timeline=fpr), out)
    assert read_attacks(files["attacks"]) == attacks
    assert read_fpr(files["fpr_timeline"]) == fpr
    assert files["restore"].read_text().startswith("index,time,tables_equal,findings,ok")


def test_small_campaign():
    topo = generate_topology("random(16,3)", seed=2)
    m = run_campaign(topo, TrafficSpec(seed=2), ExperimentConfig(seed=2), campaign_specs(5, seed=2))
    assert len(m.attacks) == 5
    assert m.detection_rate == 1.0, m.attacks
    assert all(a.latency is not None and a.latency >= 0 for a in m.attacks)
