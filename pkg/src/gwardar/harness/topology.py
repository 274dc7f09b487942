"""Seeded topology generators and host prefix assignment."""

from __future__ import annotations

import ipaddress
import random
import re
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from ..netmodel import Topology, TopologyError


class ParseError(TopologyError):
    pass


def _devices(n: int) -> Topology:
    if n < 2:
        raise ValueError("a topology needs at least two devices")
    topo = Topology()
    for d in range(n):
        topo.add_device(d)
    return topo


def line(n: int) -> Topology:
    topo = _devices(n)
    for d in range(n - 1):
        topo.add_link(d, d + 1)
    return topo


def ring(n: int) -> Topology:
    topo = line(n)
    if n > 2:
        topo.add_link(n - 1, 0)
    return topo


def random_topology(n: int, degree: float = 3, seed: int = 0) -> Topology:
    """Connected graph: random spanning tree, then extra edges up to ``degree`` on average."""
    topo = _devices(n)
    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    edges = set()
    for i in range(1, n):
        a, b = order[i], order[rng.randrange(i)]
        edges.add((min(a, b), max(a, b)))
    target = min(int(round(n * degree / 2)), n * (n - 1) // 2)
    while len(edges) < target:
        a, b = rng.sample(range(n), 2)
        edges.add((min(a, b), max(a, b)))
    for a, b in sorted(edges):
        topo.add_link(a, b)
    return topo


def assign_prefixes(topo: Topology, per_device: int = 1, seed: int = 0,
                    prefixes: Optional[Sequence[str]] = None) -> Topology:
    """Attach disjoint /24s (or the given prefix list) to devices.

    Generated prefixes go one block per device first so every device hosts
    something; extra blocks land on uniformly drawn devices.
    """
    devices = sorted(topo.devices)
    rng = random.Random(seed)
    if prefixes is None:
        count = per_device * len(devices)
        base = int(ipaddress.IPv4Address("10.0.0.0"))
        prefixes = [str(ipaddress.IPv4Network((base + (i << 8), 24))) for i in range(count)]
    for i, prefix in enumerate(prefixes):
        dev = devices[i] if i < len(devices) else rng.choice(devices)
        topo.attach_host(prefix, dev)
    return topo


def load_prefix_list(path: Union[str, Path]) -> list[str]:
    out = []
    for line_ in Path(path).read_text().splitlines():
        line_ = line_.split("#", 1)[0].strip()
        if line_:
            try:
                out.append(str(ipaddress.IPv4Network(line_, strict=False)))
            except ValueError as exc:
                raise ParseError(f"{path}: bad prefix {line_!r}") from exc
    return out


_GEN = re.compile(r"^(line|ring|random)[:(]\s*(\d+)(?:\s*[:,]\s*([\d.]+))?\)?$")


def generate_topology(kind: str, seed: int = 0, per_device: int = 1,
                      prefixes: Optional[Iterable[str]] = None) -> Topology:
    """``kind`` is ``line(n)``, ``ring(n)``, ``random(n, degree)`` or a JSON file path.

    The ``gen:`` prefix and colon-separated arguments (``gen:random:54:3``)
    are accepted too. Generated topologies get host prefixes attached;
    file topologies are returned as stored.
    """
    spec = kind[4:] if kind.startswith("gen:") else kind
    m = _GEN.match(spec.strip())
    if m is None:
        if kind.startswith("gen:"):
            raise ParseError(f"unknown generator {kind!r}")
        try:
            return Topology.load(kind)
        except FileNotFoundError:
            raise
        except TopologyError as exc:
            raise ParseError(str(exc)) from exc
    name, n = m.group(1), int(m.group(2))
    if name == "line":
        topo = line(n)
    elif name == "ring":
        topo = ring(n)
    else:
        degree = float(m.group(3)) if m.group(3) else 3.0
        topo = random_topology(n, degree, seed)
    return assign_prefixes(topo, per_device, seed, list(prefixes) if prefixes is not None else None)
