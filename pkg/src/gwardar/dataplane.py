"""Simulated data plane: flow tables, forwarding, trajectories, malicious devices."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Optional, Sequence, Union

from .netmodel import (
    Action,
    ActionKind,
    DeviceId,
    FlowRule,
    HeaderSpace,
    Location,
    PacketHeader,
    Topology,
)


class UnknownDevice(KeyError):
    pass


class UnknownIngress(KeyError):
    pass


# ---------------------------------------------------------------- flow tables


class FlowModCommand(str, Enum):
    ADD = "add"
    MODIFY = "modify"
    DELETE = "delete"
    DELETE_STRICT = "delete_strict"


class Origin(str, Enum):
    CONTROLLER = "controller"
    GWARDAR = "gwardar"


@dataclass(frozen=True)
class FlowMod:
    device: DeviceId
    command: FlowModCommand
    match: HeaderSpace = HeaderSpace()
    priority: int = 0
    actions: tuple[Action, ...] = ()
    cookie: int = 0
    time: int = 0
    origin: Origin = Origin.CONTROLLER

    @classmethod
    def add(cls, device: DeviceId, rule: FlowRule, time: int = 0,
            origin: Origin = Origin.CONTROLLER) -> "FlowMod":
        return cls(device, FlowModCommand.ADD, rule.match, rule.priority, rule.actions,
                   rule.cookie, time, origin)

    @classmethod
    def delete_all(cls, device: DeviceId, time: int = 0,
                   origin: Origin = Origin.CONTROLLER) -> "FlowMod":
        return cls(device, FlowModCommand.DELETE, HeaderSpace.wildcard(), time=time, origin=origin)

    def rule(self) -> FlowRule:
        return FlowRule(self.match, self.priority, self.actions, self.cookie, self.time)

    def to_dict(self) -> dict:
        return {
            "type": "flow_mod",
            "device": self.device,
            "command": self.command.value,
            "match": self.match.to_dict(),
            "priority": self.priority,
            "actions": [a.to_dict() for a in self.actions],
            "cookie": self.cookie,
            "time": self.time,
            "origin": self.origin.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FlowMod":
        return cls(
            device=int(data["device"]),
            command=FlowModCommand(data["command"]),
            match=HeaderSpace.from_dict(data.get("match", {})),
            priority=int(data.get("priority", 0)),
            actions=tuple(Action.from_dict(a) for a in data.get("actions", [])),
            cookie=int(data.get("cookie", 0)),
            time=int(data.get("time", 0)),
            origin=Origin(data.get("origin", "controller")),
        )


@dataclass(frozen=True)
class PacketIn:
    device: DeviceId
    header: PacketHeader
    time: int = 0

    def to_dict(self) -> dict:
        return {"type": "packet_in", "device": self.device, "header": self.header.to_dict(),
                "time": self.time}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PacketIn":
        return cls(int(data["device"]), PacketHeader.from_dict(data["header"]), int(data.get("time", 0)))


Message = Union[FlowMod, PacketIn]


def canonical_rules(rules: Iterable[FlowRule]) -> tuple[FlowRule, ...]:
    """Stable ordering used whenever tables are exported or compared."""
    return tuple(sorted(rules, key=lambda r: (-r.priority, r.match.key(), r.cookie, r.install_time)))


class FlowTable:
    """Single OpenFlow table; duplicate-free on (match, priority)."""

    def __init__(self, rules: Iterable[FlowRule] = ()):
        self._rules: dict[tuple[HeaderSpace, int], FlowRule] = {}
        self._cache: dict[tuple, Optional[FlowRule]] = {}
        self._index: Optional[list[tuple[int, dict[int, list[FlowRule]]]]] = None
        for r in rules:
            self._rules[r.table_key] = r

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self) -> Iterator[FlowRule]:
        return iter(self._rules.values())

    def rules(self) -> tuple[FlowRule, ...]:
        return canonical_rules(self._rules.values())

    def apply(self, mod: FlowMod) -> None:
        self._cache.clear()
        self._index = None
        if mod.command in (FlowModCommand.ADD, FlowModCommand.MODIFY):
            # MODIFY on a missing entry inserts, as OpenFlow 1.0 did
            self._rules[(mod.match, mod.priority)] = mod.rule()
        elif mod.command is FlowModCommand.DELETE_STRICT:
            self._rules.pop((mod.match, mod.priority), None)
        else:
            for key in [k for k, r in self._rules.items() if r.match.is_subset(mod.match)]:
                del self._rules[key]

    def _build_index(self) -> list[tuple[int, dict[int, list[FlowRule]]]]:
        # bucket by destination mask so a lookup only scans candidate rules
        by_mask: dict[int, dict[int, list[FlowRule]]] = {}
        for rule in self._rules.values():
            value, mask = rule.match.fields[1]
            by_mask.setdefault(mask, {}).setdefault(value, []).append(rule)
        return list(by_mask.items())

    def lookup(self, header: PacketHeader) -> Optional[FlowRule]:
        key = header.flow_key()
        try:
            return self._cache[key]
        except KeyError:
            pass
        if self._index is None:
            self._index = self._build_index()
        best = None
        dst = header.dst_addr
        for mask, buckets in self._index:
            for rule in buckets.get(dst & mask, ()):
                if (best is None or rule.order_key > best.order_key) and rule.match.matches(header):
                    best = rule
        self._cache[key] = best
        return best


# ---------------------------------------------------------- southbound channel


class SouthboundChannel:
    """Ordered in-process control channel between controller and devices.

    ``send`` is the controller's entry point and passes through the
    optional ``gate`` (the interception point). Devices ``publish`` each
    message they actually apply; listeners see every published message.
    """

    def __init__(self):
        self.log: list[Message] = []
        self.blocked: list[FlowMod] = []
        self.gate: Optional[Callable[[FlowMod], bool]] = None
        self._sink: Optional[Callable[[FlowMod], object]] = None
        self._listeners: list[Callable[[Message], None]] = []

    def connect(self, sink: Callable[[FlowMod], object]) -> None:
        self._sink = sink

    def subscribe(self, listener: Callable[[Message], None]) -> None:
        self._listeners.append(listener)

    def send(self, mod: FlowMod) -> bool:
        if self.gate is not None and not self.gate(mod):
            self.blocked.append(mod)
            return False
        if self._sink is None:
            raise RuntimeError("southbound channel has no data plane attached")
        self._sink(mod)
        return True

    def publish(self, msg: Message) -> None:
        self.log.append(msg)
        for listener in self._listeners:
            listener(msg)

    def flow_mods(self, since: int = 0) -> list[FlowMod]:
        return [m for m in self.log[since:] if isinstance(m, FlowMod)]

    def dump(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for msg in self.log:
                fh.write(json.dumps(msg.to_dict()) + "\n")


def load_messages(path: Union[str, Path]) -> list[Message]:
    out: list[Message] = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        out.append(FlowMod.from_dict(data) if data["type"] == "flow_mod" else PacketIn.from_dict(data))
    return out


# ---------------------------------------------------------------- trajectories


class Terminal(str, Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"
    LOOPED = "looped"
    IN_FLIGHT = "in_flight"


@dataclass(frozen=True)
class TrajectoryHop:
    device: DeviceId
    in_port: int
    out_port: Optional[int]
    observed_header: PacketHeader
    time: int

    def to_dict(self) -> dict:
        return {"device": self.device, "in_port": self.in_port, "out_port": self.out_port,
                "header": self.observed_header.to_dict(), "time": self.time}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrajectoryHop":
        return cls(int(data["device"]), int(data["in_port"]),
                   None if data["out_port"] is None else int(data["out_port"]),
                   PacketHeader.from_dict(data["header"]), int(data["time"]))


@dataclass(frozen=True)
class Trajectory:
    packet_id: int
    hops: tuple[TrajectoryHop, ...]
    terminal: Terminal

    @property
    def devices(self) -> list[DeviceId]:
        return [h.device for h in self.hops]

    @property
    def ingress(self) -> Location:
        first = self.hops[0]
        return (first.device, first.in_port)

    @property
    def start_time(self) -> int:
        return self.hops[0].time

    @property
    def header(self) -> PacketHeader:
        return self.hops[0].observed_header

    def path(self) -> list[tuple[DeviceId, int, Optional[int]]]:
        return [(h.device, h.in_port, h.out_port) for h in self.hops]

    def same_route(self, other: "Trajectory") -> bool:
        """Equal hops and terminal, ignoring timestamps and packet ids."""
        if self.terminal is not other.terminal or len(self.hops) != len(other.hops):
            return False
        for a, b in zip(self.hops, other.hops):
            if (a.device, a.in_port, a.out_port) != (b.device, b.in_port, b.out_port):
                return False
            if a.observed_header.flow_key() != b.observed_header.flow_key():
                return False
            if a.observed_header.payload_tag != b.observed_header.payload_tag:
                return False
        return True

    def to_dict(self) -> dict:
        return {"packet_id": self.packet_id, "hops": [h.to_dict() for h in self.hops],
                "terminal": self.terminal.value}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Trajectory":
        return cls(int(data["packet_id"]), tuple(TrajectoryHop.from_dict(h) for h in data["hops"]),
                   Terminal(data["terminal"]))


# --------------------------------------------------------- malicious behavior


class BehaviorKind(str, Enum):
    DROP = "drop"
    REPLAY = "replay"
    MISROUTE = "misroute"
    MODIFY = "modify"


@dataclass(frozen=True)
class MaliciousBehavior:
    kind: BehaviorKind
    selector: HeaderSpace = HeaderSpace()
    probability: float = 1.0
    wrong_port: Optional[int] = None
    field: Optional[str] = None
    value: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.kind is BehaviorKind.MISROUTE and self.wrong_port is None:
            raise ValueError("misroute needs wrong_port")
        if self.kind is BehaviorKind.MODIFY and (self.field is None or self.value is None):
            raise ValueError("modify needs field and value")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "selector": self.selector.to_dict(),
                "probability": self.probability, "wrong_port": self.wrong_port,
                "field": self.field, "value": self.value}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MaliciousBehavior":
        return cls(BehaviorKind(data["kind"]), HeaderSpace.from_dict(data.get("selector", {})),
                   float(data.get("probability", 1.0)), data.get("wrong_port"),
                   data.get("field"), data.get("value"))


# ----------------------------------------------------------------- forwarding

Lookup = Callable[[DeviceId, PacketHeader], Optional[FlowRule]]
# behavior hook: (device, arriving header) -> behavior to apply, or None
BehaviorHook = Callable[[DeviceId, PacketHeader], Optional[MaliciousBehavior]]


def propagate(
    topology: Topology,
    lookup: Lookup,
    header: PacketHeader,
    ingress: Location,
    time: int = 0,
    behavior: Optional[BehaviorHook] = None,
    lost: Optional[Callable[[], bool]] = None,
    on_packet_in: Optional[Callable[[DeviceId, PacketHeader, int], None]] = None,
) -> list[Trajectory]:
    """Forward one packet hop by hop.

    Returns the packet's trajectory first, followed by one trajectory per
    replayed copy (same packet id, starting at the replaying device).
    """
    device, port = ingress
    if device not in topology.devices:
        raise UnknownIngress(ingress)
    max_hops = 2 * len(topology.devices)
    host_ports = topology.host_ports()
    results: list[Trajectory] = []
    pending: list[tuple] = [
        ([], device, port, header, time, None)
    ]
    while pending:
        hops, dev, in_port, hdr, t, forced_out = pending.pop(0)
        terminal = Terminal.IN_FLIGHT
        while terminal is Terminal.IN_FLIGHT:
            if len(hops) >= max_hops:
                terminal = Terminal.LOOPED
                break
            if forced_out is not None:
                # replayed copy re-emitted by the previous device
                (out_port, out_hdr), copy = forced_out, None
                forced_out = None
            else:
                out_port, out_hdr, copy = _decide(dev, hdr, lookup, behavior, lost, on_packet_in, t)
            hops.append(TrajectoryHop(dev, in_port, out_port, hdr, t))
            if copy is not None:
                pending.append(([], dev, in_port, hdr, t + 1, (copy, out_hdr)))
            if out_port is None:
                terminal = Terminal.DROPPED
            elif (dev, out_port) in topology.links:
                dev, in_port = topology.links[(dev, out_port)]
                hdr, t = out_hdr, t + 1
            elif (dev, out_port) in host_ports:
                terminal = Terminal.DELIVERED
            else:
                terminal = Terminal.DROPPED
        results.append(Trajectory(header.packet_id, tuple(hops), terminal))
    return results


def _decide(dev, hdr, lookup, behavior, lost, on_packet_in, t):
    """Returns (out_port or None, outgoing header, replay out_port or None)."""
    if lost is not None and lost():
        return None, hdr, None
    rule = lookup(dev, hdr)
    out_port: Optional[int] = None
    out_hdr = hdr
    if rule is None:
        if on_packet_in is not None:
            on_packet_in(dev, hdr, t)
    elif not rule.is_drop():
        for act in rule.actions:
            if act.kind is ActionKind.REWRITE:
                out_hdr = out_hdr.with_field(act.field, act.value)
            elif act.kind is ActionKind.FORWARD and out_port is None:
                out_port = act.port
    mal = behavior(dev, hdr) if behavior is not None else None
    if mal is None:
        return out_port, out_hdr, None
    if mal.kind is BehaviorKind.DROP:
        return None, hdr, None
    if mal.kind is BehaviorKind.MISROUTE:
        return mal.wrong_port, out_hdr, None
    if mal.kind is BehaviorKind.MODIFY:
        return out_port, out_hdr.with_field(mal.field, mal.value), None
    # replay: forward honestly and re-emit a copy on the same port
    return out_port, out_hdr, out_port


@dataclass
class ForwardingDevice:
    id: DeviceId
    table: FlowTable = field(default_factory=FlowTable)
    compromise: Optional[MaliciousBehavior] = None


@dataclass(frozen=True)
class FlowModAck:
    device: DeviceId
    command: FlowModCommand
    table_size: int


class DataPlane:
    """Flow-table driven devices over a topology, single simulation driver."""

    def __init__(self, topology: Topology, channel: Optional[SouthboundChannel] = None,
                 seed: int = 0, loss_probability: float = 0.0):
        self.topology = topology
        self.channel = channel if channel is not None else SouthboundChannel()
        self.channel.connect(self.apply_flow_mod)
        self.devices = {d: ForwardingDevice(d) for d in sorted(topology.devices)}
        self.rng = random.Random(seed)
        self.loss_probability = loss_probability
        self.observed: list[Trajectory] = []

    def _device(self, device: DeviceId) -> ForwardingDevice:
        try:
            return self.devices[device]
        except KeyError:
            raise UnknownDevice(device) from None

    def apply_flow_mod(self, mod: FlowMod) -> FlowModAck:
        dev = self._device(mod.device)
        dev.table.apply(mod)
        self.channel.publish(mod)
        return FlowModAck(mod.device, mod.command, len(dev.table))

    def implant_behavior(self, device: DeviceId, behavior: Optional[MaliciousBehavior]) -> None:
        self._device(device).compromise = behavior

    def lookup(self, device: DeviceId, header: PacketHeader) -> Optional[FlowRule]:
        return self.devices[device].table.lookup(header)

    def _behavior(self, device: DeviceId, header: PacketHeader) -> Optional[MaliciousBehavior]:
        mal = self.devices[device].compromise
        if mal is None or not mal.selector.matches(header):
            return None
        if mal.probability < 1.0 and self.rng.random() >= mal.probability:
            return None
        return mal

    def _lost(self) -> bool:
        return self.loss_probability > 0 and self.rng.random() < self.loss_probability

    def _packet_in(self, device: DeviceId, header: PacketHeader, time: int) -> None:
        self.channel.publish(PacketIn(device, header, time))

    def propagate(self, header: PacketHeader, ingress: Location, time: int = 0) -> list[Trajectory]:
        return propagate(self.topology, self.lookup, header, ingress, time,
                         behavior=self._behavior, lost=self._lost, on_packet_in=self._packet_in)

    def inject_packet(self, header: PacketHeader, ingress: Location, time: int = 0) -> Trajectory:
        """Forward a packet and record every resulting trajectory in ``observed``."""
        trajs = self.propagate(header, ingress, time)
        self.observed.extend(trajs)
        return trajs[0]

    def drain(self) -> list[Trajectory]:
        out, self.observed = self.observed, []
        return out

    def snapshot_tables(self) -> dict[DeviceId, tuple[FlowRule, ...]]:
        return {d: dev.table.rules() for d, dev in self.devices.items()}
