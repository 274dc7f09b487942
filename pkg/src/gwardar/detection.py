"""Anomaly detection, data-plane inspection and NOS inspection."""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .controller import GWARDAR_PRIORITY, Controller, PriorityClass
from .dataplane import (
    FlowMod,
    FlowModCommand,
    SouthboundChannel,
    Terminal,
    Trajectory,
)
from .interceptor import Interceptor, ReplicaSnapshot, VirtualReplica
from .netmodel import (
    COOKIE_CONTROLLER,
    COOKIE_GWARDAR,
    DeviceId,
    FlowRule,
    Forward,
    Location,
    PacketHeader,
    Topology,
    cookie_namespace,
    make_cookie,
)
from .normal import NormalModel, check_normal
from .trajectory import DuplicatePacketId, HeaderClass, TrajectoryStore, expected_trajectory

Probe = Callable[[PacketHeader, Location, int], list[Trajectory]]

PROBE_ID_BASE = 1 << 62


@dataclass
class DetectionConfig:
    recurrence_threshold: int = 2
    inspection_deadline: int = 10
    probe_count: int = 5
    loss_tolerance: float = 0.02
    significance: float = 1e-6
    unknown_is_normal: bool = False
    full_inspection: str = "region"  # "region", "all" or "off"


class AnomalyReason(str, Enum):
    NOT_NORMAL = "not_normal"
    TRUNCATED = "truncated"
    REPLAY = "replay"


@dataclass
class Anomaly:
    id: int
    header_class: HeaderClass
    trajectory: Trajectory
    offending_devices: frozenset
    detected_at: int
    reason: AnomalyReason = AnomalyReason.NOT_NORMAL
    recurrence_count: int = 1

    @property
    def signature(self) -> tuple:
        return (self.header_class, self.offending_devices)


class DeviceAction(str, Enum):
    DROP = "drop"
    REPLAY = "replay"
    MISROUTE = "misroute"
    MODIFY = "modify"


class NosMode(str, Enum):
    RULE_MISMATCH = "rule_mismatch"
    VIEW_MISMATCH = "view_mismatch"
    BOTH = "both"


class VerdictKind(str, Enum):
    MALICIOUS_DEVICE = "malicious_device"
    COMPROMISED_NOS = "compromised_nos"
    FALSE_POSITIVE = "false_positive"


@dataclass
class Verdict:
    kind: VerdictKind
    targets: frozenset = frozenset()
    action: Optional[DeviceAction] = None
    nos_mode: Optional[NosMode] = None
    evidence: list = field(default_factory=list)
    issued_at: int = 0
    anomaly_id: Optional[int] = None
    header_class: Optional[HeaderClass] = None

    @property
    def device(self) -> Optional[DeviceId]:
        return min(self.targets) if self.targets else None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "targets": sorted(self.targets),
            "action": self.action.value if self.action else None,
            "nos_mode": self.nos_mode.value if self.nos_mode else None,
            "evidence": self.evidence,
            "issued_at": self.issued_at,
            "anomaly_id": self.anomaly_id,
            "header_class": self.header_class.key if self.header_class else None,
        }


@dataclass
class Escalate:
    evidence: list = field(default_factory=list)


@dataclass(frozen=True)
class InspectionRule:
    device: DeviceId
    rule: FlowRule
    target_class: HeaderClass
    ttl: int


class InspectionTimeout(Exception):
    pass


# ------------------------------------------------------------------ phase III


class AnomalyTracker:
    """Counts recurrences of equal (class, offending set) anomalies."""

    def __init__(self):
        self.counts: Counter = Counter()
        self._ids = itertools.count(1)

    def register(self, anomaly: Anomaly) -> Anomaly:
        self.counts[anomaly.signature] += 1
        anomaly.recurrence_count = self.counts[anomaly.signature]
        return anomaly

    def resolve(self, signature: tuple) -> None:
        self.counts.pop(signature, None)

    def next_id(self) -> int:
        return next(self._ids)


def deviations(model: NormalModel, cls: HeaderClass, traj: Trajectory,
               unknown_is_normal: bool = False) -> tuple[frozenset, AnomalyReason]:
    bad = []
    for d in traj.devices:
        if not check_normal(model, cls, d, unknown_is_normal).normal and d not in bad:
            bad.append(d)
    if bad:
        return frozenset(bad), AnomalyReason.NOT_NORMAL
    if traj.terminal is not Terminal.DELIVERED:
        # the next expected device never saw the packet
        return frozenset([traj.hops[-1].device]), AnomalyReason.TRUNCATED
    return frozenset(), AnomalyReason.NOT_NORMAL


def detect_anomaly(model: NormalModel, trajectory: Trajectory, topology: Topology,
                   tracker: Optional[AnomalyTracker] = None, now: Optional[int] = None,
                   unknown_is_normal: bool = False) -> Optional[Anomaly]:
    cls = HeaderClass.of(trajectory.header, topology)
    bad, reason = deviations(model, cls, trajectory, unknown_is_normal)
    if not bad:
        return None
    tracker = tracker or AnomalyTracker()
    when = trajectory.hops[-1].time if now is None else now
    anomaly = Anomaly(tracker.next_id(), cls, trajectory, bad, when, reason)
    return tracker.register(anomaly)


# ------------------------------------------------------------------- phase IV


def _same_header(a: PacketHeader, b: PacketHeader) -> bool:
    return a.flow_key() == b.flow_key() and a.payload_tag == b.payload_tag


def classify_divergence(actual: Trajectory, expected: Trajectory) -> Optional[tuple[DeviceId, DeviceAction, dict]]:
    """First point where an observed trajectory leaves the expected one."""
    for i, (a, e) in enumerate(zip(actual.hops, expected.hops)):
        if i > 0 and a.device != e.device:
            prev = actual.hops[i - 1]
            return prev.device, DeviceAction.MISROUTE, {
                "hop": i - 1, "expected_next": e.device, "actual_next": a.device}
        if i > 0 and not _same_header(a.observed_header, e.observed_header):
            prev = actual.hops[i - 1]
            return prev.device, DeviceAction.MODIFY, {
                "hop": i - 1, "expected_header": e.observed_header.to_dict(),
                "actual_header": a.observed_header.to_dict()}
        if a.out_port != e.out_port:
            if a.out_port is None:
                return a.device, DeviceAction.DROP, {"hop": i, "expected_out_port": e.out_port}
            return a.device, DeviceAction.MISROUTE, {
                "hop": i, "expected_out_port": e.out_port, "actual_out_port": a.out_port}
    if len(actual.hops) < len(expected.hops):
        last = actual.hops[-1]
        return last.device, DeviceAction.DROP, {"hop": len(actual.hops) - 1}
    return None


def binomial_tail(k: int, n: int, p: float) -> float:
    """P(X >= k) for X ~ Binomial(n, p)."""
    if k <= 0:
        return 1.0
    return sum(math.comb(n, j) * p ** j * (1 - p) ** (n - j) for j in range(k, n + 1))


class DataPlaneInspector:
    def __init__(self, probe: Probe, config: DetectionConfig, clock: Callable[[], int]):
        self.probe = probe
        self.config = config
        self.clock = clock
        self._probe_ids = itertools.count(PROBE_ID_BASE)

    def _probe_header(self, header: PacketHeader) -> PacketHeader:
        return header.with_field("packet_id", next(self._probe_ids))

    def observe(self, header: PacketHeader, ingress: Location, replica: VirtualReplica,
                counts: Counter, evidence: dict) -> tuple[int, Trajectory]:
        """Send ``probe_count`` probes; returns how many matched the replica."""
        expected = expected_trajectory(replica, header, ingress)
        agree = 0
        for _ in range(self.config.probe_count):
            trajs = self.probe(self._probe_header(header), ingress, self.clock())
            primary, copies = trajs[0], trajs[1:]
            for copy in copies:
                key = (copy.hops[0].device, DeviceAction.REPLAY)
                counts[key] += 1
                evidence.setdefault(key, {"packet_id": copy.packet_id,
                                          "copies": len(copies)})
            div = classify_divergence(primary, expected)
            if div is None:
                if not copies:
                    agree += 1
                continue
            dev, action, info = div
            counts[(dev, action)] += 1
            evidence.setdefault((dev, action), info)
        return agree, expected

    def accused(self, counts: Counter, n: int) -> list[tuple[DeviceId, DeviceAction]]:
        cfg = self.config
        hits = [(key, k) for key, k in counts.items()
                if binomial_tail(k, n, cfg.loss_tolerance) < cfg.significance]
        hits.sort(key=lambda kv: (-kv[1], kv[0][0], kv[0][1].value))
        return [key for key, _ in hits]

    def inspect(self, anomaly: Anomaly, actual: TrajectoryStore, replica: VirtualReplica,
                model: NormalModel, scope: Iterable[DeviceId] = ()) -> Union[Verdict, Escalate]:
        traj = anomaly.trajectory
        header, ingress = traj.header, traj.ingress
        counts: Counter = Counter()
        evidence: dict = {}
        agree, expected = self.observe(header, ingress, replica, counts, evidence)
        found = self.accused(counts, self.config.probe_count)
        if found:
            return self._device_verdict(anomaly, found[0], evidence, expected)

        cls = anomaly.header_class
        exp_bad, _ = deviations(model, cls, expected, self.config.unknown_is_normal)
        if exp_bad and agree * 2 > self.config.probe_count:
            rules = []
            for hop in expected.hops:
                rule = replica.lookup(hop.device, hop.observed_header)
                if rule is not None:
                    rules.append({"device": hop.device, "rule": rule.to_dict(),
                                  "origin": "controller" if cookie_namespace(rule.cookie) == COOKIE_CONTROLLER else "other"})
            return Escalate([{"expected": expected.to_dict(), "deviating_devices": sorted(exp_bad),
                              "explaining_rules": rules}])

        for dev in sorted(set(scope) - set(traj.devices)):
            probe_hdr = self._sweep_header(replica, traj.hops[0].device, dev)
            if probe_hdr is None:
                continue
            sweep_counts: Counter = Counter()
            self.observe(probe_hdr, ingress, replica, sweep_counts, evidence)
            found = self.accused(sweep_counts, self.config.probe_count)
            if found:
                return self._device_verdict(anomaly, found[0], evidence, expected)

        return Verdict(VerdictKind.FALSE_POSITIVE, evidence=[{"reason": "not reproduced by probes",
                                                              "probes": self.config.probe_count,
                                                              "agreeing": agree}],
                       issued_at=self.clock(), anomaly_id=anomaly.id, header_class=cls)

    @staticmethod
    def _sweep_header(replica: VirtualReplica, source: DeviceId, dev: DeviceId) -> Optional[PacketHeader]:
        hosts = replica.topology.hosts_on(dev)
        if not hosts:
            return None
        src_hosts = replica.topology.hosts_on(source)
        src = int(src_hosts[0].prefix.network_address) if src_hosts else 0
        return PacketHeader(src, int(hosts[0].prefix.network_address))

    def _device_verdict(self, anomaly, key, evidence, expected) -> Verdict:
        dev, action = key
        return Verdict(VerdictKind.MALICIOUS_DEVICE, frozenset([dev]), action=action,
                       evidence=[{"divergence": evidence[key], "expected": expected.to_dict(),
                                  "actual": anomaly.trajectory.to_dict()}],
                       issued_at=self.clock(), anomaly_id=anomaly.id,
                       header_class=anomaly.header_class)


# -------------------------------------------------------------------- phase V


def rules_equal(a: FlowRule, b: FlowRule) -> bool:
    return (a.match, a.priority, a.actions, a.cookie) == (b.match, b.priority, b.actions, b.cookie)


def table_diff(current: dict, reference: dict) -> set:
    """Devices whose controller-installed rules differ between two table maps."""
    out = set()
    for d in set(current) | set(reference):
        def ctl(rules):
            return {(r.match, r.priority, r.actions) for r in rules
                    if cookie_namespace(r.cookie) != COOKIE_GWARDAR}
        if ctl(current.get(d, ())) != ctl(reference.get(d, ())):
            out.add(d)
    return out


class NosInspector:
    def __init__(self, controller: Controller, interceptor: Interceptor, probe: Probe,
                 config: DetectionConfig, clock: Callable[[], int],
                 reference: Callable[[HeaderClass, Trajectory], Optional[ReplicaSnapshot]]):
        self.controller = controller
        self.interceptor = interceptor
        self.channel: SouthboundChannel = interceptor.channel
        self.probe = probe
        self.config = config
        self.clock = clock
        self.reference = reference
        self._serial = itertools.count(1)
        self._probe_ids = itertools.count(PROBE_ID_BASE + (1 << 60))

    def inspection_rules(self, anomaly: Anomaly, model: NormalModel) -> list[InspectionRule]:
        cls = anomaly.header_class
        traj = anomaly.trajectory
        snap = self.reference(cls, traj)
        route: list[tuple[DeviceId, int]] = []
        if snap is not None:
            ref = expected_trajectory(snap.replica, traj.header, traj.ingress)
            if ref.terminal is Terminal.DELIVERED:
                route = [(h.device, h.out_port) for h in ref.hops]
        if not route:
            route = self._normal_route(traj, cls, model)
        out = []
        for dev, port in route:
            cookie = make_cookie(COOKIE_GWARDAR, next(self._serial))
            rule = FlowRule(cls.space, GWARDAR_PRIORITY, (Forward(port),), cookie)
            out.append(InspectionRule(dev, rule, cls, self.config.inspection_deadline))
        return out

    def _normal_route(self, traj: Trajectory, cls: HeaderClass, model: NormalModel):
        topo = self.interceptor.replica.topology
        host = topo.attachment_for(traj.header.dst_addr)
        if host is None:
            return []
        allowed = set(model.per_class.get(cls, ())) | {traj.hops[0].device, host.device}
        start = traj.hops[0].device
        prev = {start: None}
        queue = deque([start])
        adj = topo.adjacency()
        while queue:
            d = queue.popleft()
            if d == host.device:
                break
            for port, n in adj[d]:
                if n in allowed and n not in prev:
                    prev[n] = (d, port)
                    queue.append(n)
        if host.device not in prev:
            return []
        route = [(host.device, host.port)]
        cur = host.device
        while prev[cur] is not None:
            d, port = prev[cur]
            route.append((d, port))
            cur = d
        return list(reversed(route))

    def inspect(self, anomaly: Anomaly, model: NormalModel) -> Verdict:
        before = self.interceptor.replica.table_rules()
        fix = self.inspection_rules(anomaly, model)
        mark = len(self.channel.log)
        start = self.clock()
        pairs = [(r.device, r.rule) for r in fix]
        self.controller.submit_policy(pairs, PriorityClass.GWARDAR_HIGH)

        # NOS verifier: every submitted rule must show up southbound in time
        seen = [m for m in self.channel.flow_mods(mark)
                if m.command is FlowModCommand.ADD and m.time <= start + self.config.inspection_deadline]
        rule_problems = []
        for dev, rule in pairs:
            match = [m for m in seen if m.device == dev and m.cookie == rule.cookie]
            if not match:
                rule_problems.append({"device": dev, "rule": rule.to_dict(), "observed": None,
                                      "timeout": True})
            elif not rules_equal(match[-1].rule(), rule):
                rule_problems.append({"device": dev, "rule": rule.to_dict(),
                                      "observed": match[-1].to_dict(), "timeout": False})

        # network view verifier
        view = self.controller.query_view()
        view_problems = []
        for dev, rule in pairs:
            if not any(rules_equal(r, rule) for r in view.tables.get(dev, ())):
                view_problems.append({"device": dev, "rule": rule.to_dict(),
                                      "view_rules": len(view.tables.get(dev, ()))})

        ceased = self._ceased(anomaly, model)

        self.controller.withdraw_policy(pairs)
        self._restore(before, {d for d, _ in pairs})

        evidence = [{"submitted": [{"device": d, "rule": r.to_dict()} for d, r in pairs],
                     "observed_flow_mods": [m.to_dict() for m in seen],
                     "rule_problems": rule_problems, "view_problems": view_problems,
                     "ceased": ceased}]
        if not rule_problems and not view_problems:
            return Verdict(VerdictKind.FALSE_POSITIVE, evidence=evidence, issued_at=self.clock(),
                           anomaly_id=anomaly.id, header_class=anomaly.header_class)
        mode = (NosMode.BOTH if rule_problems and view_problems
                else NosMode.RULE_MISMATCH if rule_problems else NosMode.VIEW_MISMATCH)
        targets = self._culprits(anomaly, rule_problems, view_problems, view)
        evidence[0]["view_diff"] = sorted(table_diff(view.tables, self.interceptor.replica.table_rules()))
        return Verdict(VerdictKind.COMPROMISED_NOS, frozenset(targets), nos_mode=mode,
                       evidence=evidence, issued_at=self.clock(), anomaly_id=anomaly.id,
                       header_class=anomaly.header_class)

    def _ceased(self, anomaly: Anomaly, model: NormalModel) -> bool:
        traj = anomaly.trajectory
        hdr = traj.header.with_field("packet_id", next(self._probe_ids))
        probe = self.probe(hdr, traj.ingress, self.clock())[0]
        bad, _ = deviations(model, anomaly.header_class, probe, self.config.unknown_is_normal)
        return not bad

    def _restore(self, before: dict, devices: set) -> None:
        """Resubmit pre-inspection rules that went missing during the check."""
        after = self.interceptor.replica.table_rules()
        missing = []
        for d in sorted(devices):
            now = {(r.match, r.priority, r.actions, r.cookie) for r in after.get(d, ())}
            for r in before.get(d, ()):
                if (r.match, r.priority, r.actions, r.cookie) not in now:
                    missing.append((d, r))
        if missing:
            self.controller.submit_policy(missing)

    def _culprits(self, anomaly, rule_problems, view_problems, view) -> set:
        snap = self.reference(anomaly.header_class, anomaly.trajectory)
        replica = self.interceptor.replica.table_rules()
        if snap is not None:
            diff = table_diff(replica, snap.table_rules())
            if diff:
                return diff
        diff = table_diff(view.tables, replica)
        if diff:
            return diff
        return {p["device"] for p in rule_problems + view_problems}


# ------------------------------------------------------------- event logging


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def add(self, event: str, time: int, **fields) -> dict:
        rec = {"event": event, "time": time, **fields}
        self.events.append(rec)
        return rec

    def of(self, event: str) -> list[dict]:
        return [e for e in self.events if e["event"] == event]

    def dump(self, path: Union[str, Path]) -> None:
        with open(path, "w") as fh:
            for e in self.events:
                fh.write(json.dumps(e, default=str) + "\n")


def check_phase_order(events: Iterable[dict], recurrence_threshold: int) -> list[dict]:
    """Returns every NOS inspection that was not preceded by an escalation
    or by a recurrence at or above the threshold for the same anomaly."""
    escalated: set = set()
    bad = []
    for e in events:
        if e["event"] == "escalate":
            escalated.add(e["anomaly_id"])
        elif e["event"] == "inspect_nos":
            ok = e["anomaly_id"] in escalated or e.get("recurrence", 0) >= recurrence_threshold
            if not ok:
                bad.append(e)
    return bad
