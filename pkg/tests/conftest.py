import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gwardar.harness.topology import assign_prefixes, generate_topology, line, random_topology, ring
from gwardar.netmodel import PacketHeader
from gwardar.system import Network


def routed(topo, seed=0, **kw):
    net = Network(topo, seed=seed, **kw)
    net.install_routing()
    return net


def small_topologies(count=6, max_devices=10, seed=0):
    """Mixed line, ring and random graphs with one /24 per device."""
    rng = random.Random(seed)
    out = [assign_prefixes(line(4)), assign_prefixes(ring(5))]
    while len(out) < count:
        n = rng.randint(4, max_devices)
        out.append(assign_prefixes(random_topology(n, rng.choice([2, 2.5, 3]), seed=rng.randrange(1 << 16)),
                                   seed=n))
    return out


def random_header(rng, topo, packet_id=0):
    hosts = topo.hosts
    src = rng.choice(hosts)
    dst = rng.choice(hosts)
    return PacketHeader(
        int(src.prefix.network_address) + rng.randrange(1, 255),
        int(dst.prefix.network_address) + rng.randrange(1, 255),
        rng.randrange(1024, 65535), rng.choice([22, 80, 443]),
        rng.choice([6, 17]), rng.getrandbits(32), packet_id)


@pytest.fixture
def line4():
    return routed(generate_topology("line(4)"))


@pytest.fixture
def ring6():
    return routed(generate_topology("ring(6)"))


def rerouted_instance(seed, max_devices=12, packets=120):
    """A routed topology with a recorded store, rerouted part way through."""
    rng = random.Random(seed)
    n = rng.randint(5, max_devices)
    topo = assign_prefixes(random_topology(n, rng.choice([2, 2.5, 3]), seed=seed), seed=seed)
    net = routed(topo, seed=seed)
    from gwardar.controller import PriorityClass
    from gwardar.netmodel import FlowRule, Forward, HeaderSpace

    for i in range(packets):
        if i == packets // 2:
            dev = rng.choice(sorted(topo.devices))
            host = rng.choice(topo.hosts)
            port = rng.choice([p for p, _, _ in topo.neighbors(dev)])
            net.controller.submit_policy([(dev, FlowRule(host.space, 5000, (Forward(port),)))],
                                         PriorityClass.NORMAL)
        h = random_header(rng, topo, i + 1)
        src = topo.attachment_for(h.src_addr)
        net.inject(h, (src.device, src.port), time=i * 2)
    return net


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the verbosity."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py::" not in rep.nodeid or rep.when not in ("call", "setup"):
                continue
            if rep.when == "setup" and rep.passed:
                continue
            name = rep.nodeid.split("::")[-1]
            detail = dict(rep.user_properties).get("detail", "")
            lines.append((name, "PASS" if rep.passed else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, detail in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}  {detail}".rstrip())
