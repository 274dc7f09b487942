"""Protective responses: policies, snapshot restoration and takeover."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

from .dataplane import FlowMod, FlowModAck, FlowTable, Origin, Terminal, propagate
from .detection import DeviceAction, NosMode, Verdict, VerdictKind
from .interceptor import Interceptor, ReplicaSnapshot
from .netmodel import (
    COOKIE_GWARDAR,
    DeviceId,
    FlowRule,
    PacketHeader,
    Topology,
    make_cookie,
)
from .trajectory import host_ingress


class NoTrustedSnapshot(RuntimeError):
    pass


class PartialRestore(RuntimeError):
    def __init__(self, devices):
        super().__init__(f"no acknowledgment from devices {sorted(devices)}")
        self.devices = set(devices)


class ActionKind(str, Enum):
    INSTALL_RULES = "install_rules"
    RESTORE_SNAPSHOT = "restore_snapshot"
    TAKEOVER = "takeover"


@dataclass(frozen=True)
class ResponseAction:
    kind: ActionKind
    rules: tuple[tuple[DeviceId, FlowRule], ...] = ()
    devices: Optional[frozenset] = None  # None restores every device

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.kind is ActionKind.INSTALL_RULES:
            d["rules"] = [{"device": dev, "rule": r.to_dict()} for dev, r in self.rules]
        if self.kind is ActionKind.RESTORE_SNAPSHOT:
            d["scope"] = "full" if self.devices is None else sorted(self.devices)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResponseAction":
        kind = ActionKind(data["kind"])
        rules = tuple((int(r["device"]), FlowRule.from_dict(r["rule"])) for r in data.get("rules", []))
        scope = data.get("scope", "full")
        devices = None if scope == "full" else frozenset(int(d) for d in scope)
        return cls(kind, rules, devices)


@dataclass(frozen=True)
class ResponsePolicy:
    """First-match policy; unset trigger fields match anything."""

    action: ResponseAction
    kind: Optional[VerdictKind] = None
    targets: Optional[frozenset] = None  # fires if the verdict hits any of these
    device_action: Optional[DeviceAction] = None
    nos_mode: Optional[NosMode] = None
    header_class: Optional[str] = None

    def matches(self, verdict: Verdict) -> bool:
        if self.kind is not None and verdict.kind is not self.kind:
            return False
        if self.targets is not None and not (self.targets & verdict.targets):
            return False
        if self.device_action is not None and verdict.action is not self.device_action:
            return False
        if self.nos_mode is not None and verdict.nos_mode is not self.nos_mode:
            return False
        if self.header_class is not None and (
                verdict.header_class is None or verdict.header_class.key != self.header_class):
            return False
        return True

    def to_dict(self) -> dict:
        trig = {}
        if self.kind is not None:
            trig["kind"] = self.kind.value
        if self.targets is not None:
            trig["targets"] = sorted(self.targets)
        if self.device_action is not None:
            trig["action"] = self.device_action.value
        if self.nos_mode is not None:
            trig["nos_mode"] = self.nos_mode.value
        if self.header_class is not None:
            trig["header_class"] = self.header_class
        return {"trigger": trig, "action": self.action.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResponsePolicy":
        trig = data.get("trigger", {})
        return cls(
            ResponseAction.from_dict(data["action"]),
            VerdictKind(trig["kind"]) if "kind" in trig else None,
            frozenset(trig["targets"]) if "targets" in trig else None,
            DeviceAction(trig["action"]) if "action" in trig else None,
            NosMode(trig["nos_mode"]) if "nos_mode" in trig else None,
            trig.get("header_class"),
        )


DEFAULT_POLICY = ResponsePolicy(ResponseAction(ActionKind.RESTORE_SNAPSHOT))


def load_policies(path: Union[str, Path]) -> list[ResponsePolicy]:
    return [ResponsePolicy.from_dict(p) for p in json.loads(Path(path).read_text())]


def dump_policies(policies: Sequence[ResponsePolicy], path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in policies], indent=2))


@dataclass(frozen=True)
class Finding:
    kind: str  # "black_hole" or "grey_hole"
    ingress: DeviceId
    prefix: str
    terminal: str
    last_device: DeviceId

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ingress": self.ingress, "prefix": self.prefix,
                "terminal": self.terminal, "last_device": self.last_device}


def routing_consistency_check(tables: Mapping[DeviceId, Iterable[FlowRule]], topology: Topology,
                              prefixes: Optional[Iterable[str]] = None) -> list[Finding]:
    """Propagate one header per (ingress device, prefix) through ``tables``."""
    flow_tables = {d: FlowTable(tables.get(d, ())) for d in topology.devices}

    def lookup(dev, hdr):
        return flow_tables[dev].lookup(hdr)

    hosts = {str(h.prefix): h for h in topology.hosts}
    wanted = sorted(hosts) if prefixes is None else sorted(prefixes)
    findings = []
    for ingress_dev in sorted(topology.devices):
        ingress = host_ingress(topology, ingress_dev)
        for prefix in wanted:
            host = hosts[prefix]
            header = PacketHeader(0, int(host.prefix.network_address))
            traj = propagate(topology, lookup, header, ingress)[0]
            last = traj.hops[-1]
            if traj.terminal is Terminal.LOOPED:
                findings.append(Finding("grey_hole", ingress_dev, prefix, traj.terminal.value, last.device))
            elif not (traj.terminal is Terminal.DELIVERED and (last.device, last.out_port) == (host.device, host.port)):
                findings.append(Finding("black_hole", ingress_dev, prefix, traj.terminal.value, last.device))
    return findings


@dataclass
class RestorationReport:
    devices: dict[DeviceId, int]
    tables_equal: bool
    mismatched: list[DeviceId]
    findings: list[Finding]
    snapshot_time: int

    def to_dict(self) -> dict:
        return {"devices": {str(d): n for d, n in sorted(self.devices.items())},
                "tables_equal": self.tables_equal, "mismatched": self.mismatched,
                "findings": [f.to_dict() for f in self.findings],
                "snapshot_time": self.snapshot_time}


@dataclass
class TakeoverState:
    active: bool = False
    since: Optional[int] = None
    frozen_from: Optional[ReplicaSnapshot] = None

    def to_dict(self) -> dict:
        return {"active": self.active, "since": self.since,
                "snapshot_time": self.frozen_from.taken_at if self.frozen_from else None}


Sender = Callable[[FlowMod], Optional[FlowModAck]]


class ProtectionEngine:
    """Applies responses by sending FlowMods straight to the devices."""

    def __init__(self, send: Sender, interceptor: Interceptor,
                 live_tables: Callable[[], Mapping[DeviceId, Sequence[FlowRule]]],
                 clock: Optional[Callable[[], int]] = None):
        self.send = send
        self.interceptor = interceptor
        self.live_tables = live_tables
        self.clock = clock or (lambda: 0)
        self.takeover = TakeoverState()
        self.reports: list[dict] = []
        self._serial = 0

    @property
    def topology(self) -> Topology:
        return self.interceptor.replica.topology

    def _send(self, mod: FlowMod) -> bool:
        try:
            ack = self.send(mod)
        except KeyError:
            return False
        return ack is not None

    def respond(self, verdict: Verdict, policies: Sequence[ResponsePolicy] = (),
                snapshot: Optional[ReplicaSnapshot] = None) -> dict:
        if verdict.kind is VerdictKind.FALSE_POSITIVE:
            raise ValueError("false positives do not trigger a response")
        policy = next((p for p in policies if p.matches(verdict)), DEFAULT_POLICY)
        action = policy.action
        report: dict = {"verdict": verdict.to_dict(), "action": action.to_dict(),
                        "default": policy is DEFAULT_POLICY, "time": self.clock()}
        if action.kind is ActionKind.INSTALL_RULES:
            report["installed"] = self.install_rules(action.rules)
        else:
            snap = snapshot or self.interceptor.latest_trusted_snapshot()
            if snap is None:
                raise NoTrustedSnapshot("no trusted snapshot available")
            if action.kind is ActionKind.TAKEOVER:
                report["takeover"] = self.engage_takeover(snap).to_dict()
                report["restoration"] = self.reports[-1]
            else:
                report["restoration"] = self.restore_from_snapshot(snap, action.devices).to_dict()
        return report

    def install_rules(self, rules: Iterable[tuple[DeviceId, FlowRule]]) -> int:
        n = 0
        for dev, rule in rules:
            if not rule.cookie:
                self._serial += 1
                rule = FlowRule(rule.match, rule.priority, rule.actions,
                                make_cookie(COOKIE_GWARDAR, 1 << 32 | self._serial))
            n += self._send(FlowMod.add(dev, rule, self.clock(), Origin.GWARDAR))
        return n

    def restore_from_snapshot(self, snapshot: ReplicaSnapshot,
                              devices: Optional[Iterable[DeviceId]] = None) -> RestorationReport:
        target = snapshot.table_rules()
        scope = sorted(target if devices is None else set(devices))
        counts: dict[DeviceId, int] = {}
        missing = set()
        now = self.clock()
        for dev in scope:
            ok = self._send(FlowMod.delete_all(dev, now, Origin.GWARDAR))
            for rule in target.get(dev, ()):
                ok &= self._send(FlowMod.add(dev, rule, rule.install_time, Origin.GWARDAR))
            counts[dev] = len(target.get(dev, ()))
            if not ok:
                missing.add(dev)
        live = self.live_tables()
        mismatched = [d for d in scope if tuple(live.get(d, ())) != tuple(target.get(d, ()))]
        findings = routing_consistency_check(live, self.topology)
        report = RestorationReport(counts, not mismatched, mismatched, findings, snapshot.taken_at)
        self.reports.append(report.to_dict())
        if missing:
            raise PartialRestore(missing)
        return report

    def engage_takeover(self, snapshot: Optional[ReplicaSnapshot]) -> TakeoverState:
        if snapshot is None or not snapshot.trusted:
            raise NoTrustedSnapshot("takeover needs a trusted snapshot")
        self.restore_from_snapshot(snapshot)
        self.interceptor.blocking = True
        self.takeover = TakeoverState(True, self.clock(), snapshot)
        return self.takeover

    def release_takeover(self) -> TakeoverState:
        self.interceptor.blocking = False
        self.takeover = TakeoverState(False, None, None)
        return self.takeover
