"""Simulated network operating system with compromise modes."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .dataplane import FlowMod, FlowModCommand, FlowTable, Origin, SouthboundChannel, canonical_rules
from .netmodel import (
    COOKIE_CONTROLLER,
    DeviceId,
    FlowRule,
    Forward,
    HeaderSpace,
    Topology,
    make_cookie,
    tables_to_dict,
)

ROUTE_BASE_PRIORITY = 1000
ATTACK_PRIORITY = 30000
GWARDAR_PRIORITY = 60000


class DisconnectedTopology(ValueError):
    pass


class PriorityClass(str, Enum):
    NORMAL = "normal"
    GWARDAR_HIGH = "gwardar_high"


class CompromiseKind(str, Enum):
    HONEST = "honest"
    MALICIOUS_RULES = "malicious_rules"
    MALICIOUS_RULES_CONCEALED = "malicious_rules_concealed"


@dataclass(frozen=True)
class CompromiseMode:
    kind: CompromiseKind = CompromiseKind.HONEST
    targets: frozenset = frozenset()
    rules: tuple[tuple[DeviceId, FlowRule], ...] = ()

    @property
    def concealed(self) -> bool:
        return self.kind is CompromiseKind.MALICIOUS_RULES_CONCEALED

    @property
    def honest(self) -> bool:
        return self.kind is CompromiseKind.HONEST


@dataclass
class NetworkView:
    topology: Topology
    tables: dict[DeviceId, tuple[FlowRule, ...]]
    version: int = 0

    def to_dict(self) -> dict:
        return {"version": self.version, "topology": self.topology.to_dict(),
                "tables": tables_to_dict(self.tables)}


def compile_shortest_paths(
    topology: Topology, prefixes: Optional[Mapping[str, DeviceId]] = None,
    cookie_base: int = 0,
) -> dict[DeviceId, list[FlowRule]]:
    """One forwarding rule per (device, prefix) along a BFS shortest path.

    Equal-length alternatives resolve to the lowest next-hop device id.
    Prefixes default to every host attachment in the topology.
    """
    if not topology.is_connected():
        raise DisconnectedTopology("topology is not connected")
    hosts = {str(h.prefix): h for h in topology.hosts}
    if prefixes is None:
        prefixes = {p: h.device for p, h in hosts.items()}
    adj = topology.adjacency()
    dist_to = {}
    rules: dict[DeviceId, list[FlowRule]] = {d: [] for d in topology.devices}
    serial = cookie_base
    for prefix, dest in sorted(prefixes.items(), key=lambda kv: (kv[1], kv[0])):
        host = hosts.get(prefix)
        if host is None or host.device != dest:
            raise ValueError(f"prefix {prefix} is not attached at device {dest}")
        if dest not in dist_to:
            dist_to[dest] = topology.distances_from(dest)
        dist = dist_to[dest]
        match = host.space
        prio = ROUTE_BASE_PRIORITY + host.prefix.prefixlen
        for dev in sorted(topology.devices):
            if dev == dest:
                port = host.port
            else:
                # lowest next-hop id, then lowest local port
                port = min(((n, p) for p, n in adj[dev] if dist[n] == dist[dev] - 1))[1]
            serial += 1
            rules[dev].append(FlowRule(match, prio, (Forward(port),),
                                       make_cookie(COOKIE_CONTROLLER, serial)))
    return rules


class Controller:
    """Northbound surface: ``submit_policy`` and ``query_view``.

    Compromise is applied where policy is translated into FlowMods.
    """

    def __init__(self, topology: Topology, channel: SouthboundChannel,
                 clock: Optional[Callable[[], int]] = None):
        self.topology = topology
        self.channel = channel
        self.clock = clock or (lambda: 0)
        self.mode = CompromiseMode()
        self._view = {d: FlowTable() for d in topology.devices}
        self._version = 0
        self._serial = 0
        # rules the attacker protects, per device
        self._protected: dict[DeviceId, list[FlowRule]] = {}

    # -- policy -------------------------------------------------------------

    def _next_cookie(self) -> int:
        self._serial += 1
        return make_cookie(COOKIE_CONTROLLER, 1 << 40 | self._serial)

    def _claim(self, mod: FlowMod) -> None:
        if self.mode.concealed and mod.device in self.mode.targets:
            return
        self._view[mod.device].apply(mod)
        self._version += 1

    def _suppressed(self, mod: FlowMod) -> bool:
        if self.mode.kind is not CompromiseKind.MALICIOUS_RULES:
            return False
        for rule in self._protected.get(mod.device, ()):
            if rule.match.intersect(mod.match) is not None:
                return True
        return False

    def _emit(self, mod: FlowMod) -> None:
        self._claim(mod)
        if not self._suppressed(mod):
            self.channel.send(mod)

    def submit_policy(self, rules: Iterable[tuple[DeviceId, FlowRule]],
                      priority_class: PriorityClass = PriorityClass.NORMAL) -> None:
        now = self.clock()
        for device, rule in rules:
            prio = rule.priority
            if priority_class is PriorityClass.GWARDAR_HIGH:
                prio = max(prio, GWARDAR_PRIORITY)
            else:
                prio = min(prio, GWARDAR_PRIORITY - 1)
            cookie = rule.cookie or self._next_cookie()
            self._emit(FlowMod(device, FlowModCommand.ADD, rule.match, prio, rule.actions,
                               cookie, now, Origin.CONTROLLER))

    def withdraw_policy(self, rules: Iterable[tuple[DeviceId, FlowRule]]) -> None:
        now = self.clock()
        for device, rule in rules:
            self._emit(FlowMod(device, FlowModCommand.DELETE_STRICT, rule.match, rule.priority,
                               time=now, origin=Origin.CONTROLLER))

    def install_routing(self, prefixes: Optional[Mapping[str, DeviceId]] = None) -> int:
        compiled = compile_shortest_paths(self.topology, prefixes)
        pairs = [(d, r) for d in sorted(compiled) for r in compiled[d]]
        self.submit_policy(pairs)
        return len(pairs)

    # -- compromise ---------------------------------------------------------

    def compromise(self, mode: CompromiseMode) -> None:
        """Switch mode and push the attacker's rules southbound."""
        self.mode = mode
        if mode.honest:
            self._protected = {}
            return
        now = self.clock()
        for device, rule in mode.rules:
            cookie = rule.cookie or self._next_cookie()
            mod = FlowMod(device, FlowModCommand.ADD, rule.match, rule.priority, rule.actions,
                          cookie, now, Origin.CONTROLLER)
            self._claim(mod)
            self.channel.send(mod)
            self._protected.setdefault(device, []).append(rule)

    # -- northbound ---------------------------------------------------------

    def query_view(self) -> NetworkView:
        return NetworkView(
            copy.deepcopy(self.topology),
            {d: t.rules() for d, t in self._view.items()},
            self._version,
        )
