"""Seeded benign traffic.

Traffic is a fixed set of flows (source host prefix, destination prefix,
protocol, ports) sampled uniformly per packet, which keeps it stationary.
With ``flows=0`` every packet draws a fresh source and destination.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from typing import Iterator, Optional, Sequence

from ..netmodel import HostAttachment, Location, PacketHeader, Topology


@dataclass(frozen=True)
class Flow:
    src: HostAttachment
    dst: HostAttachment
    proto: int
    src_port: int
    dst_port: int

    @property
    def ingress(self) -> Location:
        return (self.src.device, self.src.port)


@dataclass
class TrafficSpec:
    rate: float = 4.0  # packets per time unit
    duration: int = 1000
    seed: int = 0
    flows: Optional[int] = None  # None means two flows per device
    protos: Sequence[int] = (6,)
    start: int = 0
    first_packet_id: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["protos"] = list(self.protos)
        return d

    @classmethod
    def from_dict(cls, data) -> "TrafficSpec":
        return cls(**data)


def _pick_pair(rng: random.Random, sources: list, dests: list):
    src = rng.choice(sources)
    choices = [h for h in dests if h.device != src.device] or dests
    return src, rng.choice(choices)


def make_flows(topology: Topology, count: int, rng: random.Random,
               protos: Sequence[int] = (6,), prefixes: Optional[Sequence[str]] = None) -> list[Flow]:
    sources = sorted(topology.hosts, key=lambda h: int(h.prefix.network_address))
    dests = sources if prefixes is None else [h for h in sources if str(h.prefix) in set(prefixes)]
    if not sources or not dests:
        return []
    flows = []
    for _ in range(count):
        src, dst = _pick_pair(rng, sources, dests)
        flows.append(Flow(src, dst, rng.choice(list(protos)), rng.randrange(1024, 65536),
                          rng.choice((22, 53, 80, 443, 8080))))
    return flows


def _addr(rng: random.Random, host: HostAttachment) -> int:
    size = host.prefix.num_addresses
    base = int(host.prefix.network_address)
    return base + (rng.randrange(1, size - 1) if size > 2 else 0)


class TrafficGenerator:
    """Resumable packet stream; ``window`` continues where the last call ended."""

    def __init__(self, topology: Topology, spec: TrafficSpec,
                 prefixes: Optional[Sequence[str]] = None):
        if spec.rate <= 0:
            raise ValueError("rate must be positive")
        self.topology = topology
        self.spec = spec
        self.rng = random.Random(spec.seed)
        count = 2 * len(topology.devices) if spec.flows is None else spec.flows
        self.flows = make_flows(topology, count, self.rng, spec.protos, prefixes)
        hosts = sorted(topology.hosts, key=lambda h: int(h.prefix.network_address))
        self._hosts = hosts
        self._dests = hosts if prefixes is None else [h for h in hosts if str(h.prefix) in set(prefixes)]
        self.next_id = spec.first_packet_id
        self.time = spec.start

    def _flow(self) -> Flow:
        if self.flows:
            return self.rng.choice(self.flows)
        src, dst = _pick_pair(self.rng, self._hosts, self._dests)
        return Flow(src, dst, self.rng.choice(list(self.spec.protos)),
                    self.rng.randrange(1024, 65536), 80)

    def packet(self, flow: Flow, t: int) -> tuple[int, PacketHeader, Location]:
        header = PacketHeader(_addr(self.rng, flow.src), _addr(self.rng, flow.dst), flow.src_port,
                              flow.dst_port, flow.proto, packet_id=self.next_id)
        self.next_id += 1
        return t, header, flow.ingress

    def window(self, duration: int) -> Iterator[tuple[int, PacketHeader, Location]]:
        if not self._hosts or not self._dests:
            self.time += duration
            return
        rate = self.spec.rate
        whole, frac = int(rate), rate - int(rate)
        end = self.time + duration
        while self.time < end:
            t = self.time
            n = whole + (1 if frac and self.rng.random() < frac else 0)
            for _ in range(n):
                yield self.packet(self._flow(), t)
            self.time += 1


def generate_traffic(topology: Topology, spec: TrafficSpec,
                     prefixes: Optional[Sequence[str]] = None) -> Iterator[tuple[int, PacketHeader, Location]]:
    """Yield ``(time, header, ingress)`` for ``spec.duration`` time units."""
    yield from TrafficGenerator(topology, spec, prefixes).window(spec.duration)
