"""Core network types: headers, header spaces, flow rules and topology."""

from __future__ import annotations

import ipaddress
import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

DeviceId = int
Port = int
Location = tuple[DeviceId, Port]

FIELD_WIDTHS: dict[str, int] = {
    "src_addr": 32,
    "dst_addr": 32,
    "src_port": 16,
    "dst_port": 16,
    "proto": 8,
}
ADDRESS_FIELDS = ("src_addr", "dst_addr")

# cookie namespaces live in the top byte of the 64-bit cookie
COOKIE_NS_SHIFT = 56
COOKIE_CONTROLLER = 0x01
COOKIE_GWARDAR = 0x02


def make_cookie(namespace: int, serial: int) -> int:
    return (namespace << COOKIE_NS_SHIFT) | (serial & ((1 << COOKIE_NS_SHIFT) - 1))


def cookie_namespace(cookie: int) -> int:
    return cookie >> COOKIE_NS_SHIFT


def parse_addr(addr: Union[str, int]) -> int:
    if isinstance(addr, int):
        return addr
    return int(ipaddress.IPv4Address(addr))


def format_addr(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


def _full(width: int) -> int:
    return (1 << width) - 1


def prefix_mask(length: int, width: int = 32) -> int:
    return _full(width) ^ _full(width - length) if length else 0


@dataclass(frozen=True, order=True)
class PacketHeader:
    src_addr: int
    dst_addr: int
    src_port: int = 0
    dst_port: int = 0
    proto: int = 6
    payload_tag: int = 0
    packet_id: int = 0

    def field(self, name: str) -> int:
        return getattr(self, name)

    def with_field(self, name: str, value: int) -> "PacketHeader":
        return replace(self, **{name: value})

    def flow_key(self) -> tuple[int, int, int, int, int]:
        """The forwarding-relevant fields (everything a rule can match on)."""
        return (self.src_addr, self.dst_addr, self.src_port, self.dst_port, self.proto)

    def to_dict(self) -> dict:
        return {
            "src_addr": format_addr(self.src_addr),
            "dst_addr": format_addr(self.dst_addr),
            "src_port": self.src_port,
            "dst_port": self.dst_port,
            "proto": self.proto,
            "payload_tag": self.payload_tag,
            "packet_id": self.packet_id,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PacketHeader":
        return cls(
            src_addr=parse_addr(data["src_addr"]),
            dst_addr=parse_addr(data["dst_addr"]),
            src_port=int(data.get("src_port", 0)),
            dst_port=int(data.get("dst_port", 0)),
            proto=int(data.get("proto", 6)),
            payload_tag=int(data.get("payload_tag", 0)),
            packet_id=int(data.get("packet_id", 0)),
        )


@dataclass(frozen=True)
class HeaderSpace:
    """Ternary match over the five header fields.

    Every field is a ``(value, mask)`` pair; bits outside the mask are
    wildcards. Addresses are only ever built as prefixes, ports and
    protocol as exact-or-wildcard, but the algebra is fully ternary.
    """

    fields: tuple[tuple[int, int], ...] = tuple((0, 0) for _ in FIELD_WIDTHS)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple((v & m, m) for v, m in self.fields))

    @classmethod
    def wildcard(cls) -> "HeaderSpace":
        return cls()

    @classmethod
    def build(
        cls,
        src: Optional[str] = None,
        dst: Optional[str] = None,
        src_port: Optional[int] = None,
        dst_port: Optional[int] = None,
        proto: Optional[int] = None,
    ) -> "HeaderSpace":
        parts = []
        for name, spec in zip(FIELD_WIDTHS, (src, dst, src_port, dst_port, proto)):
            width = FIELD_WIDTHS[name]
            if spec is None:
                parts.append((0, 0))
            elif name in ADDRESS_FIELDS:
                net = ipaddress.IPv4Network(spec, strict=False)
                parts.append((int(net.network_address), prefix_mask(net.prefixlen)))
            else:
                parts.append((int(spec) & _full(width), _full(width)))
        return cls(tuple(parts))

    def matches(self, header: PacketHeader) -> bool:
        for (value, mask), name in zip(self.fields, FIELD_WIDTHS):
            if (getattr(header, name) ^ value) & mask:
                return False
        return True

    def intersect(self, other: "HeaderSpace") -> Optional["HeaderSpace"]:
        """Intersection, or ``None`` when the two spaces are disjoint."""
        out = []
        for (v1, m1), (v2, m2) in zip(self.fields, other.fields):
            if (v1 ^ v2) & m1 & m2:
                return None
            out.append(((v1 & m1) | (v2 & m2), m1 | m2))
        return HeaderSpace(tuple(out))

    def subtract(self, other: "HeaderSpace") -> list["HeaderSpace"]:
        """Disjoint list of header spaces covering ``self - other``."""
        if self.intersect(other) is None:
            return [self]
        pieces: list[HeaderSpace] = []
        current = list(self.fields)
        for idx, ((v1, m1), (v2, m2)) in enumerate(zip(self.fields, other.fields)):
            free = m2 & ~m1
            width = list(FIELD_WIDTHS.values())[idx]
            for bit in reversed(range(width)):
                b = 1 << bit
                if not free & b:
                    continue
                value, mask = current[idx]
                flipped = (value & ~b) | (~v2 & b)
                piece = list(current)
                piece[idx] = (flipped, mask | b)
                pieces.append(HeaderSpace(tuple(piece)))
                current[idx] = ((value & ~b) | (v2 & b), mask | b)
        return pieces

    def is_subset(self, other: "HeaderSpace") -> bool:
        for (v1, m1), (v2, m2) in zip(self.fields, other.fields):
            if m2 & ~m1:
                return False
            if (v1 ^ v2) & m2:
                return False
        return True

    def prefix_len(self, name: str) -> int:
        idx = list(FIELD_WIDTHS).index(name)
        return bin(self.fields[idx][1]).count("1")

    def representative(self) -> PacketHeader:
        """Lowest concrete header inside the space."""
        values = [value & mask for value, mask in self.fields]
        return PacketHeader(*values)

    def to_dict(self) -> dict:
        out = {}
        for (value, mask), name in zip(self.fields, FIELD_WIDTHS):
            if not mask:
                continue
            if name in ADDRESS_FIELDS:
                length = bin(mask).count("1")
                if mask != prefix_mask(length):
                    raise ValueError(f"non-prefix mask on {name}")
                out[name] = f"{format_addr(value & mask)}/{length}"
            else:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "HeaderSpace":
        return cls.build(
            src=data.get("src_addr"),
            dst=data.get("dst_addr"),
            src_port=data.get("src_port"),
            dst_port=data.get("dst_port"),
            proto=data.get("proto"),
        )

    def key(self) -> str:
        d = self.to_dict()
        return ",".join(f"{k}={d[k]}" for k in sorted(d)) or "*"

    def __repr__(self) -> str:
        return f"HeaderSpace({self.key()})"


def header_matches(rule_match: HeaderSpace, header: PacketHeader) -> bool:
    return rule_match.matches(header)


class ActionKind(str, Enum):
    FORWARD = "forward"
    DROP = "drop"
    REWRITE = "rewrite"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    port: Optional[int] = None
    field: Optional[str] = None
    value: Optional[int] = None

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is ActionKind.FORWARD:
            d["port"] = self.port
        elif self.kind is ActionKind.REWRITE:
            d["field"] = self.field
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "Action":
        kind = ActionKind(data["kind"])
        if kind is ActionKind.FORWARD:
            return Forward(int(data["port"]))
        if kind is ActionKind.REWRITE:
            return Rewrite(data["field"], int(data["value"]))
        return Drop()


def Forward(port: int) -> Action:
    return Action(ActionKind.FORWARD, port=port)


def Drop() -> Action:
    return Action(ActionKind.DROP)


def Rewrite(field_name: str, value: int) -> Action:
    if field_name not in FIELD_WIDTHS and field_name != "payload_tag":
        raise ValueError(f"unknown header field {field_name!r}")
    return Action(ActionKind.REWRITE, field=field_name, value=value)


@dataclass(frozen=True)
class FlowRule:
    match: HeaderSpace
    priority: int
    actions: tuple[Action, ...]
    cookie: int = 0
    install_time: int = 0

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a flow rule needs at least one action (use Drop())")
        object.__setattr__(self, "actions", tuple(self.actions))

    @property
    def order_key(self) -> tuple[int, int, int]:
        return (self.priority, self.cookie, self.install_time)

    @property
    def table_key(self) -> tuple[HeaderSpace, int]:
        return (self.match, self.priority)

    def is_drop(self) -> bool:
        return any(a.kind is ActionKind.DROP for a in self.actions)

    def out_ports(self) -> list[int]:
        return [a.port for a in self.actions if a.kind is ActionKind.FORWARD]

    def to_dict(self) -> dict:
        return {
            "match": self.match.to_dict(),
            "priority": self.priority,
            "actions": [a.to_dict() for a in self.actions],
            "cookie": self.cookie,
            "install_time": self.install_time,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FlowRule":
        return cls(
            match=HeaderSpace.from_dict(data.get("match", {})),
            priority=int(data["priority"]),
            actions=tuple(Action.from_dict(a) for a in data["actions"]),
            cookie=int(data.get("cookie", 0)),
            install_time=int(data.get("install_time", 0)),
        )


def highest_priority_rule(table: Iterable[FlowRule], header: PacketHeader) -> Optional[FlowRule]:
    best = None
    for rule in table:
        if rule.match.matches(header) and (best is None or rule.order_key > best.order_key):
            best = rule
    return best


@dataclass(frozen=True)
class HostAttachment:
    prefix: ipaddress.IPv4Network
    device: DeviceId
    port: Port

    @property
    def space(self) -> HeaderSpace:
        return HeaderSpace.build(dst=str(self.prefix))


class TopologyError(ValueError):
    pass


@dataclass
class Topology:
    """Devices with port counts, symmetric links and host prefix attachments."""

    devices: dict[DeviceId, int] = field(default_factory=dict)
    links: dict[Location, Location] = field(default_factory=dict)
    hosts: list[HostAttachment] = field(default_factory=list)
    _attach_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def add_device(self, device: DeviceId, port_count: int = 0) -> None:
        if device in self.devices:
            raise TopologyError(f"duplicate device {device}")
        self.devices[device] = port_count

    def _free_port(self, device: DeviceId) -> Port:
        used = {p for (d, p) in self.links if d == device}
        used |= {h.port for h in self.hosts if h.device == device}
        port = 1
        while port in used:
            port += 1
        if port > self.devices[device]:
            self.devices[device] = port
        return port

    def add_link(self, a: DeviceId, b: DeviceId, a_port: Optional[Port] = None,
                 b_port: Optional[Port] = None) -> tuple[Location, Location]:
        for dev in (a, b):
            if dev not in self.devices:
                raise TopologyError(f"unknown device {dev}")
        a_port = self._free_port(a) if a_port is None else a_port
        b_port = self._free_port(b) if b_port is None else b_port
        left, right = (a, a_port), (b, b_port)
        for loc in (left, right):
            if loc in self.links or self.host_at(loc) is not None:
                raise TopologyError(f"port {loc} already in use")
        self.links[left] = right
        self.links[right] = left
        self.devices[a] = max(self.devices[a], a_port)
        self.devices[b] = max(self.devices[b], b_port)
        return left, right

    def attach_host(self, prefix: str, device: DeviceId, port: Optional[Port] = None) -> HostAttachment:
        if device not in self.devices:
            raise TopologyError(f"unknown device {device}")
        net = ipaddress.IPv4Network(prefix, strict=False)
        if any(h.prefix == net for h in self.hosts):
            raise TopologyError(f"prefix {net} already attached")
        port = self._free_port(device) if port is None else port
        if (device, port) in self.links:
            raise TopologyError(f"port {(device, port)} is a link port")
        self.devices[device] = max(self.devices[device], port)
        host = HostAttachment(net, device, port)
        self.hosts.append(host)
        self._attach_cache.clear()
        return host

    def host_at(self, loc: Location) -> Optional[HostAttachment]:
        for h in self.hosts:
            if (h.device, h.port) == loc:
                return h
        return None

    def host_ports(self) -> frozenset[Location]:
        ports = self._attach_cache.get("ports")
        if ports is None:
            ports = self._attach_cache["ports"] = frozenset((h.device, h.port) for h in self.hosts)
        return ports

    def hosts_on(self, device: DeviceId) -> list[HostAttachment]:
        key = ("on", device)
        if key not in self._attach_cache:
            self._attach_cache[key] = self._hosts_on(device)
        return list(self._attach_cache[key])

    def _hosts_on(self, device: DeviceId) -> list[HostAttachment]:
        return sorted((h for h in self.hosts if h.device == device), key=lambda h: int(h.prefix.network_address))

    def attachment_for(self, addr: int) -> Optional[HostAttachment]:
        """Longest-prefix host attachment containing ``addr``."""
        if addr in self._attach_cache:
            return self._attach_cache[addr]
        ip = ipaddress.IPv4Address(addr)
        best = None
        for h in self.hosts:
            if ip in h.prefix and (best is None or h.prefix.prefixlen > best.prefix.prefixlen):
                best = h
        self._attach_cache[addr] = best
        return best

    def neighbors(self, device: DeviceId) -> list[tuple[Port, DeviceId, Port]]:
        """(local port, neighbor, neighbor port), sorted by local port."""
        out = [(p, peer[0], peer[1]) for (d, p), peer in self.links.items() if d == device]
        return sorted(out)

    def adjacency(self) -> dict[DeviceId, list[tuple[Port, DeviceId]]]:
        adj: dict[DeviceId, list[tuple[Port, DeviceId]]] = {d: [] for d in self.devices}
        for (d, p), (peer, _) in self.links.items():
            adj[d].append((p, peer))
        for d in adj:
            adj[d].sort()
        return adj

    def distances_from(self, source: DeviceId) -> dict[DeviceId, int]:
        dist = {source: 0}
        queue = deque([source])
        adj = self.adjacency()
        while queue:
            d = queue.popleft()
            for _, n in adj[d]:
                if n not in dist:
                    dist[n] = dist[d] + 1
                    queue.append(n)
        return dist

    def all_distances(self) -> dict[DeviceId, dict[DeviceId, int]]:
        return {d: self.distances_from(d) for d in self.devices}

    def is_connected(self) -> bool:
        if not self.devices:
            return True
        return len(self.distances_from(next(iter(self.devices)))) == len(self.devices)

    def check(self) -> None:
        for a, b in self.links.items():
            if self.links.get(b) != a:
                raise TopologyError(f"asymmetric link {a} -> {b}")
        seen = set()
        for h in self.hosts:
            loc = (h.device, h.port)
            if loc in self.links or loc in seen:
                raise TopologyError(f"host port {loc} reused")
            seen.add(loc)

    def link_pairs(self) -> list[tuple[Location, Location]]:
        return sorted((a, b) for a, b in self.links.items() if a < b)

    def copy(self) -> "Topology":
        return Topology(dict(self.devices), dict(self.links), list(self.hosts))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        key = lambda hs: sorted((str(h.prefix), h.device, h.port) for h in hs)
        return (self.devices == other.devices and self.links == other.links
                and key(self.hosts) == key(other.hosts))

    def to_dict(self) -> dict:
        return {
            "devices": [{"id": d, "port_count": n} for d, n in sorted(self.devices.items())],
            "links": [[list(a), list(b)] for a, b in self.link_pairs()],
            "hosts": [
                {"prefix": str(h.prefix), "device": h.device, "port": h.port}
                for h in sorted(self.hosts, key=lambda h: (h.device, h.port))
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Topology":
        topo = cls()
        try:
            for dev in data["devices"]:
                topo.add_device(int(dev["id"]), int(dev.get("port_count", 0)))
            for a, b in data.get("links", []):
                topo.add_link(int(a[0]), int(b[0]), int(a[1]), int(b[1]))
            for h in data.get("hosts", []):
                topo.attach_host(h["prefix"], int(h["device"]), int(h["port"]))
        except (KeyError, TypeError, IndexError) as exc:
            raise TopologyError(f"malformed topology document: {exc!r}") from exc
        topo.check()
        return topo

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Topology":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise TopologyError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


def tables_to_dict(tables: Mapping[DeviceId, Sequence[FlowRule]]) -> dict:
    return {str(d): [r.to_dict() for r in rules] for d, rules in sorted(tables.items())}


def tables_from_dict(data: Mapping) -> dict[DeviceId, list[FlowRule]]:
    return {int(d): [FlowRule.from_dict(r) for r in rules] for d, rules in data.items()}


def iter_rules(tables: Mapping[DeviceId, Iterable[FlowRule]]) -> Iterator[tuple[DeviceId, FlowRule]]:
    for d in sorted(tables):
        for r in tables[d]:
            yield d, r
