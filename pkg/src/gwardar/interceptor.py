"""Southbound tap: the virtual replica and its snapshot history."""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

from .dataplane import FlowMod, FlowTable, Message, Origin, SouthboundChannel
from .netmodel import DeviceId, FlowRule, Topology, tables_from_dict, tables_to_dict


@dataclass
class VirtualReplica:
    topology: Topology
    tables: dict[DeviceId, FlowTable]
    last_update: int = 0

    @classmethod
    def empty(cls, topology: Topology) -> "VirtualReplica":
        return cls(topology, {d: FlowTable() for d in sorted(topology.devices)})

    def apply(self, mod: FlowMod) -> None:
        self.tables.setdefault(mod.device, FlowTable()).apply(mod)
        self.last_update = max(self.last_update, mod.time)

    def clone(self) -> "VirtualReplica":
        # rules are immutable, so sharing them keeps the copy independent
        return VirtualReplica(self.topology.copy(),
                              {d: FlowTable(t) for d, t in self.tables.items()}, self.last_update)

    def lookup(self, device: DeviceId, header):
        table = self.tables.get(device)
        return table.lookup(header) if table is not None else None

    def table_rules(self) -> dict[DeviceId, tuple[FlowRule, ...]]:
        return {d: t.rules() for d, t in self.tables.items()}

    def to_dict(self) -> dict:
        return {"topology": self.topology.to_dict(), "tables": tables_to_dict(self.table_rules()),
                "last_update": self.last_update}

    @classmethod
    def from_dict(cls, data: Mapping) -> "VirtualReplica":
        topo = Topology.from_dict(data["topology"])
        tables = {d: FlowTable(rules) for d, rules in tables_from_dict(data["tables"]).items()}
        for d in topo.devices:
            tables.setdefault(d, FlowTable())
        return cls(topo, tables, int(data.get("last_update", 0)))


@dataclass(frozen=True)
class ReplicaSnapshot:
    replica: VirtualReplica = field(compare=False)
    taken_at: int
    trusted: bool
    tables: tuple = field(repr=False)

    @classmethod
    def of(cls, replica: VirtualReplica, taken_at: int, trusted: bool) -> "ReplicaSnapshot":
        frozen = replica.clone()
        rules = frozen.table_rules()
        return cls(frozen, taken_at, trusted, tuple(sorted(rules.items())))

    def table_rules(self) -> dict[DeviceId, tuple[FlowRule, ...]]:
        return dict(self.tables)

    def to_dict(self) -> dict:
        out = self.replica.to_dict()
        out.update(taken_at=self.taken_at, trusted=self.trusted)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ReplicaSnapshot":
        return cls.of(VirtualReplica.from_dict(data), int(data["taken_at"]), bool(data["trusted"]))


class Interceptor:
    """Maintains the replica purely from intercepted FlowMods.

    Also owns the takeover gate: while ``blocking`` is set, FlowMods sent by
    the controller are stopped before they reach any device.
    """

    def __init__(self, topology: Topology, channel: Optional[SouthboundChannel] = None,
                 history_size: int = 32):
        self.replica = VirtualReplica.empty(topology)
        self.history: deque[ReplicaSnapshot] = deque(maxlen=history_size)
        self.log: list[FlowMod] = []
        self.blocking = False
        self._lock = threading.Lock()
        self.channel = channel
        if channel is not None:
            channel.subscribe(self._on_message)
            channel.gate = self._gate

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def _gate(self, mod: FlowMod) -> bool:
        return not (self.blocking and mod.origin is Origin.CONTROLLER)

    def _on_message(self, msg: Message) -> None:
        if isinstance(msg, FlowMod):
            self.on_flow_mod(msg)

    def on_flow_mod(self, mod: FlowMod) -> None:
        with self._lock:
            self.replica.apply(mod)
            self.log.append(mod)

    def take_snapshot(self, trusted: bool, time: Optional[int] = None) -> ReplicaSnapshot:
        with self._lock:
            taken_at = self.replica.last_update if time is None else time
            snap = ReplicaSnapshot.of(self.replica, taken_at, trusted)
            self.history.append(snap)
        return snap

    def latest_trusted_snapshot(
        self, accept: Optional[Callable[[ReplicaSnapshot], bool]] = None
    ) -> Optional[ReplicaSnapshot]:
        for snap in reversed(self.history):
            if snap.trusted and (accept is None or accept(snap)):
                return snap
        return None

    def distrust_since(self, time: int) -> int:
        """Re-flag snapshots taken at or after ``time`` as untrusted."""
        count = 0
        with self._lock:
            for i, snap in enumerate(self.history):
                if snap.trusted and snap.taken_at >= time:
                    self.history[i] = replace(snap, trusted=False)
                    count += 1
        return count

    def dump_log(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for mod in self.log:
                fh.write(json.dumps(mod.to_dict()) + "\n")


def replay_log(topology: Topology, mods) -> VirtualReplica:
    replica = VirtualReplica.empty(topology)
    for mod in mods:
        replica.apply(mod)
    return replica
