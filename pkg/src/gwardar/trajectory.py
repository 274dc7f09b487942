"""Actual and expected trajectory databases."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .dataplane import Terminal, Trajectory, UnknownIngress, propagate
from .interceptor import VirtualReplica
from .netmodel import DeviceId, HeaderSpace, Location, PacketHeader, Topology, format_addr


class DuplicatePacketId(ValueError):
    def __init__(self, first: Trajectory, duplicate: Trajectory):
        super().__init__(f"packet id {first.packet_id} already recorded")
        self.first = first
        self.duplicate = duplicate


@dataclass(frozen=True, order=True)
class HeaderClass:
    """Headers sharing a destination prefix and protocol."""

    dst_prefix: str
    proto: int

    @classmethod
    def of(cls, header: PacketHeader, topology: Topology) -> "HeaderClass":
        host = topology.attachment_for(header.dst_addr)
        prefix = str(host.prefix) if host is not None else f"{format_addr(header.dst_addr)}/32"
        return cls(prefix, header.proto)

    @property
    def space(self) -> HeaderSpace:
        return HeaderSpace.build(dst=self.dst_prefix, proto=self.proto)

    @property
    def key(self) -> str:
        return f"{self.dst_prefix}|{self.proto}"

    @classmethod
    def from_key(cls, key: str) -> "HeaderClass":
        prefix, proto = key.split("|")
        return cls(prefix, int(proto))

    def __str__(self) -> str:
        return self.key


class StoreRole(str, Enum):
    ACTUAL = "actual"
    EXPECTED = "expected"


@dataclass(frozen=True)
class ReplayEvidence:
    first: Trajectory
    duplicate: Trajectory


class TrajectoryStore:
    """Trajectories indexed by packet id and by header class."""

    def __init__(self, topology: Topology, role: StoreRole = StoreRole.ACTUAL):
        self.topology = topology
        self.role = role
        self.by_packet: dict[int, Trajectory] = {}
        self.by_class: dict[HeaderClass, list[Trajectory]] = defaultdict(list)
        self.ordered: list[Trajectory] = []
        self.replay_evidence: list[ReplayEvidence] = []

    def __len__(self) -> int:
        return len(self.ordered)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.ordered)

    def classify(self, traj: Trajectory) -> HeaderClass:
        return HeaderClass.of(traj.header, self.topology)

    def record_actual(self, traj: Trajectory) -> HeaderClass:
        if traj.terminal is Terminal.IN_FLIGHT or not traj.hops:
            raise ValueError("only complete trajectories can be recorded")
        prior = self.by_packet.get(traj.packet_id)
        if prior is not None:
            if prior.hops != traj.hops:
                self.replay_evidence.append(ReplayEvidence(prior, traj))
            raise DuplicatePacketId(prior, traj)
        cls = self.classify(traj)
        self.by_packet[traj.packet_id] = traj
        self.by_class[cls].append(traj)
        self.ordered.append(traj)
        return cls

    record = record_actual

    def classes(self) -> list[HeaderClass]:
        return sorted(self.by_class)

    def in_window(self, start: int, length: int) -> list[Trajectory]:
        end = start + length
        return [t for t in self.ordered if start <= t.start_time < end]

    def export(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for t in self.ordered:
                rec = t.to_dict()
                rec["class_key"] = self.classify(t).key
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path], topology: Topology,
             role: StoreRole = StoreRole.ACTUAL) -> "TrajectoryStore":
        store = cls(topology, role)
        for line in Path(path).read_text().splitlines():
            if line.strip():
                try:
                    store.record_actual(Trajectory.from_dict(json.loads(line)))
                except DuplicatePacketId:
                    pass
        return store


def expected_trajectory(replica: VirtualReplica, header: PacketHeader, ingress: Location,
                        time: int = 0) -> Trajectory:
    """Propagate ``header`` through the replica's tables, honest semantics."""
    if ingress[0] not in replica.topology.devices:
        raise UnknownIngress(ingress)
    return propagate(replica.topology, replica.lookup, header, ingress, time)[0]


def host_ingress(topology: Topology, device: DeviceId) -> Location:
    hosts = topology.hosts_on(device)
    return (device, hosts[0].port) if hosts else (device, 0)


def find_packet(replica: VirtualReplica, source: DeviceId, destination: DeviceId,
                proto: int = 6) -> Optional[PacketHeader]:
    """Lowest-address header delivered from ``source`` to a prefix on ``destination``."""
    topo = replica.topology
    src_hosts = topo.hosts_on(source)
    src_addr = int(src_hosts[0].prefix.network_address) if src_hosts else 0
    ingress = host_ingress(topo, source)
    for host in topo.hosts_on(destination):
        header = PacketHeader(src_addr, int(host.prefix.network_address), proto=proto)
        traj = expected_trajectory(replica, header, ingress)
        if traj.terminal is Terminal.DELIVERED and traj.hops[-1].device == destination:
            return header
    return None
