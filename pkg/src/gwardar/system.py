"""A simulated SDN with Gwardar attached to its southbound channel."""

from __future__ import annotations

from typing import Iterable, Optional

from .controller import Controller
from .dataplane import DataPlane, MaliciousBehavior, SouthboundChannel, Trajectory
from .engine import Gwardar, GwardarConfig
from .netmodel import DeviceId, Location, PacketHeader, Topology


class Network:
    """Controller, devices and Gwardar sharing one discrete clock."""

    def __init__(self, topology: Topology, seed: int = 0, loss_probability: float = 0.0,
                 config: Optional[GwardarConfig] = None):
        topology.check()
        self.topology = topology
        self.time = 0
        self.channel = SouthboundChannel()
        self.dataplane = DataPlane(topology, self.channel, seed=seed,
                                   loss_probability=loss_probability)
        self.controller = Controller(topology, self.channel, self.now)
        # gwardar must subscribe before any FlowMod crosses the channel
        self.gwardar = Gwardar(
            topology, self.channel, self.controller,
            probe=self.probe,
            send=self.dataplane.apply_flow_mod,
            live_tables=self.dataplane.snapshot_tables,
            clock=self.now,
            config=config,
        )

    def now(self) -> int:
        return self.time

    def advance(self, t: int) -> None:
        self.time = max(self.time, t)

    def install_routing(self) -> int:
        return self.controller.install_routing()

    def probe(self, header: PacketHeader, ingress: Location, time: int) -> list[Trajectory]:
        return self.dataplane.propagate(header, ingress, time)

    def inject(self, header: PacketHeader, ingress: Location,
               time: Optional[int] = None) -> list[Trajectory]:
        t = self.time if time is None else time
        self.advance(t)
        trajs = self.dataplane.propagate(header, ingress, t)
        self.dataplane.observed.extend(trajs)
        self.gwardar.ingest(trajs)
        return trajs

    def inject_many(self, packets: Iterable[tuple[int, PacketHeader, Location]]) -> int:
        n = 0
        for t, header, ingress in packets:
            self.inject(header, ingress, t)
            n += 1
        return n

    def implant(self, device: DeviceId, behavior: Optional[MaliciousBehavior]) -> None:
        self.dataplane.implant_behavior(device, behavior)
