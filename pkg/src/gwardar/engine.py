"""Gwardar itself: learning, detection cycles, snapshots and responses."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .controller import Controller
from .dataplane import FlowMod, FlowModAck, SouthboundChannel, Trajectory
from .detection import (
    Anomaly,
    AnomalyReason,
    DataPlaneInspector,
    DetectionConfig,
    Escalate,
    EventLog,
    NosInspector,
    Probe,
    Verdict,
    VerdictKind,
    deviations,
    detect_anomaly,
    AnomalyTracker,
)
from .interceptor import Interceptor, ReplicaSnapshot
from .netmodel import DeviceId, FlowRule, Topology
from .normal import (
    DEFAULT_SAMPLE_RATE,
    DEFAULT_THRESHOLD,
    DEFAULT_WINDOW,
    EmptyStore,
    NormalModel,
    ScanningRegion,
    TimeWindow,
    build_normal_model,
    identify_scanning_regions,
    merge_models,
)
from .protection import NoTrustedSnapshot, ProtectionEngine, ResponsePolicy
from .trajectory import DuplicatePacketId, HeaderClass, TrajectoryStore, expected_trajectory

log = logging.getLogger(__name__)


@dataclass
class GwardarConfig:
    window: int = DEFAULT_WINDOW
    region_threshold: float = DEFAULT_THRESHOLD
    sample_rate: float = DEFAULT_SAMPLE_RATE
    region_seed: int = 0
    learn_horizon: Optional[int] = None  # None learns over the whole history
    snapshot_interval: int = 60
    learn_interval: int = DEFAULT_WINDOW
    history_size: int = 32
    auto_respond: bool = True
    detection: DetectionConfig = field(default_factory=DetectionConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "GwardarConfig":
        data = dict(data)
        det = DetectionConfig(**data.pop("detection", {}))
        return cls(detection=det, **data)


@dataclass
class WindowStats:
    end: int
    trajectories: int
    false_positives: int

    @property
    def rate(self) -> float:
        return self.false_positives / self.trajectories if self.trajectories else 0.0


class Gwardar:
    def __init__(self, topology: Topology, channel: SouthboundChannel, controller: Controller,
                 probe: Probe, send: Callable[[FlowMod], Optional[FlowModAck]],
                 live_tables: Callable[[], Mapping[DeviceId, Sequence[FlowRule]]],
                 clock: Callable[[], int], config: Optional[GwardarConfig] = None):
        self.config = config or GwardarConfig()
        self.topology = topology
        self.clock = clock
        self.controller = controller
        self.interceptor = Interceptor(topology, channel, self.config.history_size)
        self.store = TrajectoryStore(topology)
        self.events = EventLog()
        self.tracker = AnomalyTracker()
        self.data_plane = DataPlaneInspector(probe, self.config.detection, clock)
        self.nos = NosInspector(controller, self.interceptor, probe, self.config.detection, clock,
                                self.reference_snapshot)
        self.protection = ProtectionEngine(send, self.interceptor, live_tables, clock)
        self.policies: list[ResponsePolicy] = []
        self.model: Optional[NormalModel] = None
        self.regions: list[ScanningRegion] = []
        self.learning = True
        self.verdicts: list[Verdict] = []
        self.responses: list[dict] = []
        self.windows: list[WindowStats] = []
        self._pending: list[Trajectory] = []
        self._replays: list[tuple[Trajectory, Trajectory]] = []
        self._window_start = 0
        self._window_trajs = 0
        self._window_fp = 0
        self._last_snapshot: Optional[int] = None
        self._last_learn: Optional[int] = None
        self._last_cycle_anomalies = 0
        self._last_incident: Optional[int] = None

    # -- ingestion ----------------------------------------------------------

    def ingest(self, trajectories: Iterable[Trajectory]) -> None:
        for traj in trajectories:
            try:
                self.store.record_actual(traj)
            except DuplicatePacketId as dup:
                if dup.first.hops != dup.duplicate.hops:
                    self._replays.append((dup.first, dup.duplicate))
                continue
            self._pending.append(traj)

    # -- phase I ------------------------------------------------------------

    def learn(self, now: Optional[int] = None) -> Optional[NormalModel]:
        now = self.clock() if now is None else now
        try:
            self.regions = identify_scanning_regions(
                self.store, self.config.region_threshold, self.config.sample_rate,
                self.config.region_seed)
        except EmptyStore:
            return None
        horizon = self.config.learn_horizon
        start = 0 if horizon is None else max(0, now - horizon)
        window = TimeWindow(start, max(1, now - start + 1))
        replica = self.interceptor.replica
        models = [build_normal_model(r, self.store, window, replica, now) for r in self.regions]
        self.model = merge_models(models)
        self.events.add("model_built", now, regions=len(self.regions),
                        classes=len(self.model.per_class))
        return self.model

    def finish_learning(self) -> None:
        self.learning = False

    # -- snapshots ----------------------------------------------------------

    def snapshot_trusted(self) -> bool:
        return self._last_cycle_anomalies == 0 and self._last_incident is None

    def maybe_snapshot(self, now: int, force: bool = False) -> Optional[ReplicaSnapshot]:
        due = self._last_snapshot is None or now - self._last_snapshot >= self.config.snapshot_interval
        if not (due or force):
            return None
        self._last_snapshot = now
        snap = self.interceptor.take_snapshot(self.snapshot_trusted(), now)
        self.events.add("snapshot", now, trusted=snap.trusted)
        return snap

    def reference_snapshot(self, cls: HeaderClass, traj: Trajectory) -> Optional[ReplicaSnapshot]:
        """Latest trusted snapshot under which ``traj``'s header behaves normally."""
        model = self.model

        def valid(snap: ReplicaSnapshot) -> bool:
            if model is None:
                return True
            exp = expected_trajectory(snap.replica, traj.header, traj.ingress)
            bad, _ = deviations(model, cls, exp, self.config.detection.unknown_is_normal)
            return not bad

        return self.interceptor.latest_trusted_snapshot(valid)

    # -- phases III-V -------------------------------------------------------

    def _roll_window(self, now: int) -> None:
        while now >= self._window_start + self.config.window:
            end = self._window_start + self.config.window
            self.windows.append(WindowStats(end, self._window_trajs, self._window_fp))
            self._window_start = end
            self._window_trajs = 0
            self._window_fp = 0

    def _replay_anomalies(self, now: int) -> list[Anomaly]:
        out = []
        for first, dup in self._replays:
            cls = HeaderClass.of(dup.header, self.topology)
            a = Anomaly(self.tracker.next_id(), cls, dup, frozenset([dup.hops[0].device]), now,
                        AnomalyReason.REPLAY)
            out.append(self.tracker.register(a))
        self._replays = []
        return out

    def run_detection_cycle(self, now: Optional[int] = None) -> list[Verdict]:
        now = self.clock() if now is None else now
        pending, self._pending = self._pending, []
        pending = [t for t in pending if self.monitored(t)]
        anomalies: list[Anomaly] = []
        if self.model is not None:
            for traj in pending:
                a = detect_anomaly(self.model, traj, self.topology, self.tracker, now,
                                   self.config.detection.unknown_is_normal)
                if a is not None:
                    anomalies.append(a)
        anomalies.extend(self._replay_anomalies(now))
        for a in anomalies:
            self.events.add("anomaly", now, anomaly_id=a.id, header_class=a.header_class.key,
                            offending=sorted(a.offending_devices), reason=a.reason.value,
                            recurrence=a.recurrence_count)
        self._last_cycle_anomalies = len(anomalies)

        if self.model is None:
            # fail-closed: with nothing learned every trajectory is unknown
            self._count(pending, len(pending), now)
            return []
        if self.learning:
            self._count(pending, len(anomalies), now)
            return []

        groups: dict[tuple, list[Anomaly]] = {}
        for a in anomalies:
            groups.setdefault(a.signature, []).append(a)
        emitted: list[Verdict] = []
        false_positives = 0
        for members in groups.values():
            a = max(members, key=lambda m: m.recurrence_count)
            verdict = self._inspect(a, now)
            if verdict.kind is VerdictKind.FALSE_POSITIVE:
                false_positives += len(members)
            else:
                self.tracker.resolve(a.signature)
            if self._is_new(verdict):
                self.verdicts.append(verdict)
                emitted.append(verdict)
                self.events.add("verdict", now, anomaly_id=a.id, **_verdict_fields(verdict))
                if verdict.kind is not VerdictKind.FALSE_POSITIVE:
                    self._incident(a, verdict, now)
        self._count(pending, false_positives, now)
        return emitted

    def monitored(self, traj: Trajectory) -> bool:
        """Only trajectories crossing a scanning region are checked."""
        return not self.regions or any(r.covers(traj) for r in self.regions)

    def cycle(self, now: Optional[int] = None) -> list[Verdict]:
        """One periodic step: detect against the current model, relearn, snapshot."""
        now = self.clock() if now is None else now
        verdicts = self.run_detection_cycle(now)
        due = self._last_learn is None or now - self._last_learn >= self.config.learn_interval
        if self.learning and due:
            self._last_learn = now
            self.learn(now)
        self.maybe_snapshot(now)
        return verdicts

    def _count(self, pending: list[Trajectory], fps: int, now: int) -> None:
        self._roll_window(now)
        self._window_trajs += len(pending)
        self._window_fp += fps

    def _inspect(self, a: Anomaly, now: int) -> Verdict:
        scope_cfg = self.config.detection.full_inspection
        if scope_cfg == "all":
            scope = set(self.topology.devices)
        elif scope_cfg == "region":
            scope = set().union(*(r.devices for r in self.regions)) if self.regions else set()
        else:
            scope = set()
        result = self.data_plane.inspect(a, self.store, self.interceptor.replica, self.model, scope)
        self.events.add("inspect_data_plane", now, anomaly_id=a.id,
                        result="escalate" if isinstance(result, Escalate) else result.kind.value)
        if isinstance(result, Escalate):
            self.events.add("escalate", now, anomaly_id=a.id)
            return self._inspect_nos(a, now, "escalate")
        if (result.kind is VerdictKind.FALSE_POSITIVE
                and a.recurrence_count >= self.config.detection.recurrence_threshold):
            return self._inspect_nos(a, now, "recurrence")
        return result

    def _inspect_nos(self, a: Anomaly, now: int, trigger: str) -> Verdict:
        self.events.add("inspect_nos", now, anomaly_id=a.id, trigger=trigger,
                        recurrence=a.recurrence_count)
        return self.nos.inspect(a, self.model)

    def _is_new(self, verdict: Verdict) -> bool:
        if verdict.kind is VerdictKind.FALSE_POSITIVE:
            return True
        key = (verdict.kind, verdict.targets, verdict.action, verdict.nos_mode)
        return all((v.kind, v.targets, v.action, v.nos_mode) != key for v in self.verdicts)

    def _incident(self, a: Anomaly, verdict: Verdict, now: int) -> None:
        self._last_incident = now
        self.interceptor.distrust_since(a.trajectory.start_time)
        if not self.config.auto_respond:
            return
        snap = self.reference_snapshot(a.header_class, a.trajectory)
        try:
            report = self.protection.respond(verdict, self.policies, snap)
        except NoTrustedSnapshot as exc:
            report = {"verdict": verdict.to_dict(), "error": str(exc)}
        self.responses.append(report)
        self.events.add("response", now, anomaly_id=a.id,
                        action=report.get("action", {}).get("kind"), error=report.get("error"))

    def clear_incident(self) -> None:
        """Operator acknowledgment: snapshots may be trusted again."""
        self._last_incident = None

    def fpr_timeline(self) -> list[tuple[int, float]]:
        return [(w.end, w.rate) for w in self.windows]


def _verdict_fields(v: Verdict) -> dict:
    d = v.to_dict()
    d.pop("evidence", None)
    d.pop("anomaly_id", None)
    d["verdict"] = d.pop("kind")
    return d
