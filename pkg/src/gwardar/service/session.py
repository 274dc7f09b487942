"""Long-lived simulation sessions driven by the HTTP service."""

from __future__ import annotations

import copy
import itertools
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..detection import VerdictKind
from ..harness.experiment import ExperimentConfig, _step, warm_up
from ..harness.scenario import GroundTruth, ScenarioSpec, implant
from ..harness.traffic import TrafficGenerator, TrafficSpec
from ..netmodel import Topology, tables_to_dict
from ..protection import NoTrustedSnapshot
from ..system import Network


class SessionError(RuntimeError):
    pass


@dataclass
class Session:
    id: str
    network: Network
    traffic: TrafficGenerator
    config: ExperimentConfig
    truths: list[GroundTruth] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @classmethod
    def create(cls, sid: str, topology: Topology, traffic: TrafficSpec,
               config: ExperimentConfig) -> "Session":
        net = Network(topology, config.seed, config.loss_probability, copy.deepcopy(config.gwardar))
        net.install_routing()
        return cls(sid, net, TrafficGenerator(topology, traffic), config)

    @property
    def gwardar(self):
        return self.network.gwardar

    @property
    def time(self) -> int:
        return self.traffic.time

    def warm_up(self) -> int:
        with self.lock:
            return warm_up(self.network, self.traffic, self.config)

    def advance(self, duration: int) -> list:
        out = []
        with self.lock:
            end = self.traffic.time + duration
            while self.traffic.time < end:
                period = min(self.config.cycle_period, end - self.traffic.time)
                out.extend(_step(self.network, self.traffic, period))
        return out

    def implant(self, spec: ScenarioSpec) -> GroundTruth:
        with self.lock:
            truth = implant(spec, self.network, self.traffic)
            self.truths.append(truth)
            return truth

    def verify_replica(self) -> dict:
        """Compare the intercepted replica with the live device tables."""
        with self.lock:
            replica = self.gwardar.interceptor.replica.table_rules()
            live = self.network.dataplane.snapshot_tables()
            bad = sorted(d for d in live if tuple(live[d]) != tuple(replica.get(d, ())))
            return {"equal": not bad, "mismatched": bad,
                    "rules": sum(len(r) for r in live.values())}

    def restore(self, force: bool = False, devices: Optional[Iterable[int]] = None) -> dict:
        """Operator-triggered restore; without ``force`` it needs an open incident."""
        with self.lock:
            g = self.gwardar
            incident = any(v.kind is not VerdictKind.FALSE_POSITIVE for v in g.verdicts)
            if not force and not incident:
                raise SessionError("no verdict calls for a restore; pass force to override")
            snap = g.interceptor.latest_trusted_snapshot()
            if snap is None:
                raise NoTrustedSnapshot("no trusted snapshot available")
            report = g.protection.restore_from_snapshot(snap, devices)
            return report.to_dict()

    def takeover(self) -> dict:
        with self.lock:
            g = self.gwardar
            return g.protection.engage_takeover(g.interceptor.latest_trusted_snapshot()).to_dict()

    def release_takeover(self) -> dict:
        with self.lock:
            state = self.gwardar.protection.release_takeover().to_dict()
            self.gwardar.clear_incident()
            return state

    def view(self) -> dict:
        with self.lock:
            v = self.network.controller.query_view()
            return {"version": v.version, "tables": tables_to_dict(v.tables)}

    def summary(self) -> dict:
        g = self.gwardar
        return {"id": self.id, "time": self.time, "devices": len(self.network.topology.devices),
                "learning": g.learning, "takeover": g.protection.takeover.active,
                "verdicts": len(g.verdicts), "snapshots": len(g.interceptor.history)}


class SessionStore:
    def __init__(self):
        self._sessions: dict[str, Session] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def new(self, topology: Topology, traffic: TrafficSpec, config: ExperimentConfig) -> Session:
        with self._lock:
            sid = f"s{next(self._ids)}"
        s = Session.create(sid, topology, traffic, config)
        with self._lock:
            self._sessions[sid] = s
        return s

    def get(self, sid: str) -> Session:
        try:
            return self._sessions[sid]
        except KeyError:
            raise SessionError(f"unknown session {sid}") from None

    def drop(self, sid: str) -> None:
        with self._lock:
            self._sessions.pop(sid, None)

    def ids(self) -> list[str]:
        return sorted(self._sessions)
