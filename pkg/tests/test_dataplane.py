import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gwardar.dataplane import (
    BehaviorKind,
    DataPlane,
    FlowMod,
    FlowModCommand,
    MaliciousBehavior,
    PacketIn,
    SouthboundChannel,
    Terminal,
    UnknownDevice,
    UnknownIngress,
    load_messages,
)
from gwardar.harness.topology import generate_topology
from gwardar.netmodel import Drop, FlowRule, Forward, HeaderSpace, PacketHeader, Rewrite, parse_addr

from conftest import random_header, routed, small_topologies
from oracles import Net, as_oracle_form, interpret, plain_tables, replay_flow_mods, tables_as_ref


def to_d(net, i=0):
    return PacketHeader(parse_addr("10.0.0.7"), parse_addr("10.0.3.9"), 1234, 80, packet_id=i)


def ingress0(net):
    return (0, net.topology.hosts_on(0)[0].port)


def test_line_delivery(line4):
    traj = line4.dataplane.inject_packet(to_d(line4), ingress0(line4))
    assert traj.devices == [0, 1, 2, 3]
    assert traj.terminal is Terminal.DELIVERED
    times = [h.time for h in traj.hops]
    assert times == sorted(set(times))


def test_drop_truncates(line4):
    line4.implant(1, MaliciousBehavior(BehaviorKind.DROP))
    traj = line4.dataplane.inject_packet(to_d(line4), ingress0(line4))
    assert traj.devices == [0, 1]
    assert traj.terminal is Terminal.DROPPED


def test_misroute_only_hits_selector(ring6):
    dp = ring6.dataplane
    wrong = [p for p, n, _ in ring6.topology.neighbors(1) if n == 0][0]
    ring6.implant(1, MaliciousBehavior(BehaviorKind.MISROUTE, HeaderSpace.build(dst="10.0.2.0/24"),
                                       wrong_port=wrong))
    src = ring6.topology.hosts_on(0)[0]
    hit = dp.inject_packet(PacketHeader(1, parse_addr("10.0.2.1")), (0, src.port))
    miss = dp.inject_packet(PacketHeader(1, parse_addr("10.0.1.1")), (0, src.port))
    assert hit.hops[1].device == 1 and hit.hops[1].out_port == wrong
    assert hit.hops[2].device == 0
    assert miss.devices == [0, 1] and miss.terminal is Terminal.DELIVERED


def test_replay_duplicates_downstream(line4):
    line4.implant(2, MaliciousBehavior(BehaviorKind.REPLAY))
    trajs = line4.dataplane.propagate(to_d(line4, 42), ingress0(line4))
    assert len(trajs) == 2
    assert {t.packet_id for t in trajs} == {42}
    assert trajs[0].devices == [0, 1, 2, 3]
    assert trajs[1].devices == [2, 3]
    assert trajs[1].terminal is Terminal.DELIVERED


def test_modify_changes_only_downstream(line4):
    line4.implant(1, MaliciousBehavior(BehaviorKind.MODIFY, field="dst_port", value=9999))
    traj = line4.dataplane.inject_packet(to_d(line4), ingress0(line4))
    ports = [h.observed_header.dst_port for h in traj.hops]
    assert ports == [80, 80, 9999, 9999]


def test_probability_zero_is_honest(line4):
    line4.implant(1, MaliciousBehavior(BehaviorKind.DROP, probability=0.0))
    assert line4.dataplane.inject_packet(to_d(line4), ingress0(line4)).terminal is Terminal.DELIVERED
    with pytest.raises(ValueError):
        MaliciousBehavior(BehaviorKind.DROP, probability=1.5)
    with pytest.raises(ValueError):
        MaliciousBehavior(BehaviorKind.MISROUTE)


def test_unknown_ingress_and_device(line4):
    with pytest.raises(UnknownIngress):
        line4.dataplane.inject_packet(to_d(line4), (99, 1))
    with pytest.raises(UnknownDevice):
        line4.dataplane.apply_flow_mod(FlowMod.delete_all(99))
    with pytest.raises(UnknownDevice):
        line4.dataplane.implant_behavior(99, None)


def test_no_match_emits_packet_in(line4):
    seen = []
    line4.channel.subscribe(seen.append)
    traj = line4.dataplane.inject_packet(PacketHeader(1, parse_addr("172.16.0.1")), ingress0(line4))
    assert traj.terminal is Terminal.DROPPED and traj.devices == [0]
    assert any(isinstance(m, PacketIn) and m.device == 0 for m in seen)


def test_loop_is_cut():
    topo = generate_topology("ring(4)")
    dp = DataPlane(topo)
    # every device forwards clockwise forever
    for d in topo.devices:
        port = [p for p, n, _ in topo.neighbors(d) if n == (d + 1) % 4][0]
        dp.apply_flow_mod(FlowMod.add(d, FlowRule(HeaderSpace.wildcard(), 1, (Forward(port),))))
    traj = dp.inject_packet(PacketHeader(0, 1), (0, topo.hosts_on(0)[0].port))
    assert traj.terminal is Terminal.LOOPED
    assert len(traj.hops) == 2 * len(topo.devices)


def test_rewrite_action_applies_on_exit(line4):
    rule = FlowRule(HeaderSpace.build(dst="10.0.3.0/24"), 5000, (Rewrite("src_port", 7), Forward(2)))
    line4.dataplane.apply_flow_mod(FlowMod.add(1, rule))
    traj = line4.dataplane.inject_packet(to_d(line4), ingress0(line4))
    assert [h.observed_header.src_port for h in traj.hops] == [1234, 1234, 7, 7]


def test_random_topologies_match_interpreter():
    rng = random.Random(11)
    for topo in small_topologies(6, 10, seed=3):
        net = routed(topo)
        oracle = Net(topo)
        # a few extra higher-priority rules so tie-breaks and drops get exercised
        for _ in range(6):
            dev = rng.choice(sorted(topo.devices))
            host = rng.choice(topo.hosts)
            acts = (Forward(rng.randrange(1, topo.devices[dev] + 1)),) if rng.random() < 0.7 else (Drop(),)
            rule = FlowRule(HeaderSpace.build(dst=str(host.prefix), proto=rng.choice([None, 17])),
                            rng.choice([1024, 2000]), acts, cookie=rng.randrange(3))
            net.dataplane.apply_flow_mod(FlowMod.add(dev, rule))
        tables = plain_tables(net.dataplane.snapshot_tables())
        for i in range(100):
            h = random_header(rng, topo, i)
            src = topo.attachment_for(h.src_addr)
            got = net.dataplane.inject_packet(h, (src.device, src.port))
            assert as_oracle_form(got) == interpret(oracle, tables, h, (src.device, src.port))


def test_add_and_delete_all():
    topo = generate_topology("line(3)")
    dp = DataPlane(topo)
    r = FlowRule(HeaderSpace.build(dst="10.0.0.0/8"), 3, (Forward(1),))
    dp.apply_flow_mod(FlowMod.add(1, r))
    assert dp.snapshot_tables()[1] == (r,)
    dp.apply_flow_mod(FlowMod.delete_all(1))
    assert dp.snapshot_tables()[1] == ()


def random_mod(rng, devices):
    dev = rng.choice(devices)
    cmd = rng.choices(list(FlowModCommand), weights=[5, 2, 1, 2])[0]
    plen = rng.choice([8, 16, 24])
    dst = f"10.{rng.randrange(3)}.{rng.randrange(3)}.0/{plen}"
    if cmd is FlowModCommand.DELETE and rng.random() < 0.2:
        match = HeaderSpace.wildcard()
    else:
        match = HeaderSpace.build(dst=dst, proto=rng.choice([None, 6]))
    return FlowMod(dev, cmd, match, rng.randrange(3), (Forward(rng.randrange(1, 4)),),
                   cookie=rng.randrange(1, 1000))


def test_flow_mod_sequence_matches_replay_map():
    rng = random.Random(5)
    topo = generate_topology("line(4)")
    for trial in range(5):
        dp = DataPlane(topo)
        mods = [random_mod(rng, sorted(topo.devices)) for _ in range(200)]
        for m in mods:
            ack = dp.apply_flow_mod(m)
            assert ack.device == m.device
        assert tables_as_ref(dp.snapshot_tables()) == replay_flow_mods(mods)


def test_snapshot_is_a_copy():
    rng = random.Random(2)
    topo = generate_topology("line(3)")
    dp = DataPlane(topo)
    mods = [random_mod(rng, [0, 1, 2]) for _ in range(60)]
    for m in mods[:30]:
        dp.apply_flow_mod(m)
    snap = dp.snapshot_tables()
    for m in mods[30:]:
        dp.apply_flow_mod(m)
    assert tables_as_ref(snap) == replay_flow_mods(mods[:30])
    assert tables_as_ref(dp.snapshot_tables()) == replay_flow_mods(mods)


def test_channel_log_roundtrip(tmp_path, line4):
    line4.dataplane.inject_packet(PacketHeader(1, parse_addr("172.16.0.1")), ingress0(line4))
    path = tmp_path / "sb.ndjson"
    line4.channel.dump(path)
    msgs = load_messages(path)
    assert msgs == line4.channel.log
    assert any(isinstance(m, PacketIn) for m in msgs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 12))
def test_honest_paths_follow_links_and_rules(seed, n):
    topo = generate_topology(f"random({n},2.5)", seed=seed)
    net = routed(topo)
    rng = random.Random(seed)
    for i in range(20):
        h = random_header(rng, topo, i)
        src = topo.attachment_for(h.src_addr)
        traj = net.dataplane.inject_packet(h, (src.device, src.port))
        assert traj.terminal is Terminal.DELIVERED
        assert len(traj.hops) <= 2 * n
        for a, b in zip(traj.hops, traj.hops[1:]):
            assert topo.links[(a.device, a.out_port)] == (b.device, b.in_port)
        for hop in traj.hops:
            rule = net.dataplane.lookup(hop.device, hop.observed_header)
            assert rule.out_ports()[0] == hop.out_port


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(list(BehaviorKind)))
def test_behavior_does_not_touch_upstream(seed, kind):
    topo = generate_topology("random(10,3)", seed=seed)
    rng = random.Random(seed)
    honest = routed(topo)
    bad = routed(topo)
    dev = rng.choice(sorted(topo.devices))
    port = rng.randrange(1, topo.devices[dev] + 1)
    bad.implant(dev, MaliciousBehavior(kind, wrong_port=port, field="dst_port", value=1))
    for i in range(20):
        h = random_header(rng, topo, i)
        src = topo.attachment_for(h.src_addr)
        a = honest.dataplane.inject_packet(h, (src.device, src.port))
        b = bad.dataplane.inject_packet(h, (src.device, src.port))
        cut = a.devices.index(dev) if dev in a.devices else len(a.hops)
        assert a.hops[:cut] == b.hops[:cut]


def test_loss_probability_drops_packets():
    topo = generate_topology("line(6)")
    net = routed(topo, loss_probability=0.5)
    src = topo.hosts_on(0)[0]
    lost = sum(net.dataplane.inject_packet(PacketHeader(1, parse_addr("10.0.5.1")), (0, src.port)).terminal
               is Terminal.DROPPED for _ in range(200))
    assert 150 < lost < 200
