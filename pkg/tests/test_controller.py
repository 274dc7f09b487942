import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwardar.controller import (
    ATTACK_PRIORITY,
    GWARDAR_PRIORITY,
    CompromiseKind,
    CompromiseMode,
    Controller,
    DisconnectedTopology,
    PriorityClass,
    compile_shortest_paths,
)
from gwardar.dataplane import DataPlane, FlowMod, SouthboundChannel
from gwardar.harness.topology import assign_prefixes, generate_topology, line, ring
from gwardar.netmodel import Drop, FlowRule, Forward, HeaderSpace, Topology

from oracles import Net, bfs, interpret, plain_tables


def wired(topo):
    ch = SouthboundChannel()
    dp = DataPlane(topo, ch)
    return Controller(topo, ch), dp, ch


def port_to(topo, a, b):
    return next(p for p, n, _ in topo.neighbors(a) if n == b)


def test_line_next_hops():
    topo = line(3)
    topo.attach_host("10.3.0.0/16", 2)
    rules = compile_shortest_paths(topo)
    assert rules[0][0].out_ports() == [port_to(topo, 0, 1)]
    assert rules[1][0].out_ports() == [port_to(topo, 1, 2)]
    assert rules[2][0].out_ports() == [topo.hosts[0].port]


def test_square_tie_goes_to_lower_id():
    topo = ring(4)
    topo.attach_host("10.2.0.0/16", 2)
    rules = compile_shortest_paths(topo)
    assert rules[0][0].out_ports() == [port_to(topo, 0, 1)]


def test_disconnected_rejected():
    topo = Topology()
    topo.add_device(0)
    topo.add_device(1)
    with pytest.raises(DisconnectedTopology):
        compile_shortest_paths(topo)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_compiled_paths_are_shortest(seed):
    topo = generate_topology("random(12,2.5)", seed=seed)
    tables = plain_tables(compile_shortest_paths(topo))
    net = Net(topo)
    for prefix, dest, _ in net.hosts:
        dist = bfs(net, dest)
        for src in net.devices:
            hdr = {"src_addr": 0, "dst_addr": int(prefix.network_address), "src_port": 0,
                   "dst_port": 0, "proto": 6, "payload_tag": 0}
            hops, term = interpret(net, tables, hdr, (src, net.first_port(src)))
            assert term == "delivered"
            assert len(hops) - 1 == dist[src]


def test_honest_submit_is_identity():
    topo = assign_prefixes(line(3))
    ctl, dp, ch = wired(topo)
    view0 = ctl.query_view()
    assert view0.version == 0 and all(not t for t in view0.tables.values())
    rule = FlowRule(HeaderSpace.build(dst="10.0.2.0/24"), 7, (Forward(2),))
    before = len(ch.flow_mods())
    ctl.submit_policy([(0, rule)])
    assert len(ch.flow_mods()) - before == 1
    view = ctl.query_view()
    assert view.version == 1
    assert [(r.match, r.priority, r.actions) for r in view.tables[0]] == [(rule.match, 7, rule.actions)]
    assert view.tables == dp.snapshot_tables()


def test_priority_classes():
    topo = assign_prefixes(line(2))
    ctl, dp, _ = wired(topo)
    high = FlowRule(HeaderSpace.build(dst="10.0.1.0/24"), 5, (Forward(1),))
    greedy = FlowRule(HeaderSpace.build(dst="10.0.0.0/24"), 99999, (Forward(2),))
    ctl.submit_policy([(0, high)], PriorityClass.GWARDAR_HIGH)
    ctl.submit_policy([(0, greedy)])
    prios = sorted(r.priority for r in dp.snapshot_tables()[0])
    assert prios == [GWARDAR_PRIORITY - 1, GWARDAR_PRIORITY]


def test_honest_view_matches_live_after_routing():
    topo = generate_topology("random(15,3)", seed=3)
    ctl, dp, _ = wired(topo)
    ctl.install_routing()
    assert ctl.query_view().tables == dp.snapshot_tables()


def attack_rule(topo, dev):
    return FlowRule(HeaderSpace.build(dst=str(topo.hosts[-1].prefix)), ATTACK_PRIORITY, (Drop(),))


def test_concealed_attack_diverges():
    topo = generate_topology("line(5)")
    ctl, dp, _ = wired(topo)
    ctl.install_routing()
    pre = ctl.query_view()
    ctl.compromise(CompromiseMode(CompromiseKind.MALICIOUS_RULES_CONCEALED, frozenset({1}),
                                  ((1, attack_rule(topo, 1)),)))
    view = ctl.query_view()
    live = dp.snapshot_tables()
    assert live[1] != view.tables[1]
    assert view.tables[1] == pre.tables[1]
    assert any(r.priority == ATTACK_PRIORITY for r in live[1])


def test_unconcealed_attack_on_two_devices():
    topo = generate_topology("line(6)")
    ctl, dp, _ = wired(topo)
    ctl.install_routing()
    rules = ((1, attack_rule(topo, 1)), (4, attack_rule(topo, 4)))
    ctl.compromise(CompromiseMode(CompromiseKind.MALICIOUS_RULES, frozenset({1, 4}), rules))
    view = ctl.query_view()
    live = dp.snapshot_tables()
    for dev in (1, 4):
        assert any(r.priority == ATTACK_PRIORITY for r in live[dev])
        assert any(r.priority == ATTACK_PRIORITY for r in view.tables[dev])


def test_malicious_nos_suppresses_overlapping_fix():
    topo = generate_topology("line(4)")
    ctl, dp, ch = wired(topo)
    ctl.install_routing()
    bad = attack_rule(topo, 2)
    ctl.compromise(CompromiseMode(CompromiseKind.MALICIOUS_RULES, frozenset({2}), ((2, bad),)))
    before = len(ch.flow_mods())
    fix = FlowRule(bad.match, 10, (Forward(2),))
    ctl.submit_policy([(2, fix)], PriorityClass.GWARDAR_HIGH)
    assert len(ch.flow_mods()) == before
    assert any(r.priority == GWARDAR_PRIORITY for r in ctl.query_view().tables[2])


def test_version_never_decreases():
    topo = generate_topology("ring(5)")
    ctl, _, _ = wired(topo)
    seen = [ctl.query_view().version]
    ctl.install_routing()
    seen.append(ctl.query_view().version)
    ctl.compromise(CompromiseMode(CompromiseKind.MALICIOUS_RULES_CONCEALED, frozenset({0}),
                                  ((0, attack_rule(topo, 0)),)))
    seen.append(ctl.query_view().version)
    ctl.submit_policy([(0, attack_rule(topo, 0))])
    seen.append(ctl.query_view().version)
    assert seen == sorted(seen)


def test_view_serializes():
    topo = generate_topology("line(3)")
    ctl, _, _ = wired(topo)
    ctl.install_routing()
    d = ctl.query_view().to_dict()
    assert d["version"] == ctl.query_view().version
    assert set(d["tables"]) == {"0", "1", "2"}
