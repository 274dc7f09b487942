"""Attack scenarios and their implantation into a running network.

S1/S2 plant attacker rules through the NOS on one/several devices, S3/S4
additionally hide them from the network view, S6 turns devices malicious
under an honest NOS. There is no S5.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from ..controller import ATTACK_PRIORITY, CompromiseKind, CompromiseMode
from ..dataplane import BehaviorKind, MaliciousBehavior, Terminal, Trajectory, propagate
from ..detection import DeviceAction, NosMode, Verdict, VerdictKind
from ..netmodel import DeviceId, Drop, FlowRule, Forward, HeaderSpace, PacketHeader, parse_addr
from ..system import Network
from ..trajectory import HeaderClass
from .traffic import Flow, TrafficGenerator

SCENARIOS = ("S1", "S2", "S3", "S4", "S6")
NOS_ACTIONS = ("drop", "misroute")
DEVICE_ACTIONS = ("drop", "replay", "misroute", "modify")
# outside every generated prefix, so a rewritten packet finds no route
MODIFY_TARGET = "192.0.2.1"


class ScenarioError(ValueError):
    pass


@dataclass
class ScenarioSpec:
    id: str
    targets: Union[list, str] = "random(1)"
    action: str = "random"
    start_time: int = 40  # offset after warm-up
    seed: int = 0
    probability: float = 1.0

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {self.id!r}; expected one of {SCENARIOS}")
        allowed = NOS_ACTIONS if self.nos else DEVICE_ACTIONS
        if self.action != "random" and self.action not in allowed:
            raise ScenarioError(f"{self.id} does not support action {self.action!r}")
        if isinstance(self.targets, str):
            self.target_count()
        if self.start_time < 0:
            raise ScenarioError("start_time must be non-negative")

    @property
    def nos(self) -> bool:
        return self.id != "S6"

    @property
    def concealed(self) -> bool:
        return self.id in ("S3", "S4")

    def target_count(self) -> int:
        if not isinstance(self.targets, str):
            return len(self.targets)
        m = re.fullmatch(r"random\((\d+)\)", self.targets.strip())
        if not m or int(m.group(1)) < 1:
            raise ScenarioError(f"bad target spec {self.targets!r}")
        return int(m.group(1))

    @classmethod
    def default(cls, sid: str, seed: int = 0) -> "ScenarioSpec":
        k = 2 if sid in ("S2", "S4") else 1
        return cls(sid, f"random({k})", seed=seed)

    def to_dict(self) -> dict:
        return {"id": self.id, "targets": self.targets, "action": self.action,
                "start_time": self.start_time, "seed": self.seed,
                "probability": self.probability}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioSpec":
        known = {"id", "targets", "action", "start_time", "seed", "probability"}
        extra = set(data) - known
        if extra:
            raise ScenarioError(f"unknown scenario fields {sorted(extra)}")
        return cls(**dict(data))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class GroundTruth:
    scenario: str
    kind: VerdictKind
    targets: frozenset
    nos_mode: Optional[NosMode] = None
    actions: dict = field(default_factory=dict)  # device -> action name
    victims: dict = field(default_factory=dict)  # device -> header class key

    def matches(self, verdicts: Sequence[Verdict]) -> bool:
        """Kind and target set equal the implant; device verdicts are unioned."""
        real = [v for v in verdicts if v.kind is not VerdictKind.FALSE_POSITIVE]
        if not real or any(v.kind is not self.kind for v in real):
            return False
        if self.kind is VerdictKind.MALICIOUS_DEVICE:
            return frozenset().union(*(v.targets for v in real)) == self.targets
        return real[0].targets == self.targets

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "kind": self.kind.value, "targets": sorted(self.targets),
                "nos_mode": self.nos_mode.value if self.nos_mode else None,
                "actions": {str(k): v for k, v in sorted(self.actions.items())},
                "victims": {str(k): v for k, v in sorted(self.victims.items())}}


def _route(net: Network, flow: Flow) -> Trajectory:
    header = PacketHeader(int(flow.src.prefix.network_address) + 1,
                          int(flow.dst.prefix.network_address) + 1, flow.src_port, flow.dst_port,
                          flow.proto)
    return propagate(net.topology, net.dataplane.lookup, header, flow.ingress)[0]


def _link_ports(net: Network, dev: DeviceId) -> list[int]:
    return sorted(p for (d, p) in net.topology.links if d == dev)


def _outcome(net: Network, traj: Trajectory, dev: DeviceId, override) -> Terminal:
    """Terminal of ``traj``'s header when ``dev`` behaves per ``override``."""

    def lookup(d, h):
        if d == dev:
            r = override(h)
            if r is not None:
                return r
        return net.dataplane.lookup(d, h)

    return propagate(net.topology, lookup, traj.header, traj.ingress)[0].terminal


def _wrong_port(net: Network, traj: Trajectory, dev: DeviceId, space: HeaderSpace,
                rng: random.Random) -> Optional[int]:
    """A link port other than the honest one; prefer ports that break delivery."""
    honest = next(h.out_port for h in traj.hops if h.device == dev)
    ports = [p for p in _link_ports(net, dev) if p != honest]
    rng.shuffle(ports)
    for p in ports:
        rule = FlowRule(space, ATTACK_PRIORITY, (Forward(p),))
        if _outcome(net, traj, dev, lambda h, r=rule: r if space.matches(h) else None) \
                is not Terminal.DELIVERED:
            return p
    return ports[0] if ports else None


def _candidates(net: Network, flows: Sequence[Flow], monitored) -> list[tuple[Flow, Trajectory]]:
    out = []
    for f in flows:
        traj = _route(net, f)
        if traj.terminal is Terminal.DELIVERED and len(traj.hops) >= 2 and monitored(traj):
            out.append((f, traj))
    return out


def _choose(spec: ScenarioSpec, net: Network, traffic: TrafficGenerator,
            rng: random.Random) -> list[tuple[DeviceId, Flow, Trajectory]]:
    """Pick (device, victim flow) pairs; each device sits on its victim's route."""
    monitored = net.gwardar.monitored
    cands = _candidates(net, traffic.flows, monitored)
    if not cands:
        raise ScenarioError("no monitored flow to attack")
    # replay at the ingress device would copy the packet onto its own route
    first_ok = spec.nos or spec.action != "replay"
    # a rewrite at the delivering device leaves the path untouched
    last_ok = spec.nos or spec.action != "modify"
    chosen: list[tuple[DeviceId, Flow, Trajectory]] = []
    used_devices: set = set()
    used_classes: set = set()

    def usable(traj: Trajectory, dev: DeviceId) -> bool:
        i = traj.devices.index(dev)
        if i == 0 and not first_ok:
            return False
        if i == len(traj.hops) - 1 and not last_ok:
            return False
        # the part of the route up to dev must stay inside the monitored area
        head = Trajectory(traj.packet_id, traj.hops[: i + 1], traj.terminal)
        return monitored(head)

    if isinstance(spec.targets, str):
        rng.shuffle(cands)
        for f, traj in cands:
            if len(chosen) == spec.target_count():
                break
            cls = (str(f.dst.prefix), f.proto)
            if cls in used_classes:
                continue
            devs = [d for d in traj.devices if d not in used_devices and usable(traj, d)]
            if not devs:
                continue
            d = rng.choice(devs)
            chosen.append((d, f, traj))
            used_devices.add(d)
            used_classes.add(cls)
        if len(chosen) < spec.target_count():
            raise ScenarioError(f"could only place {len(chosen)} of {spec.target_count()} targets")
        return chosen
    for d in spec.targets:
        d = int(d)
        if d not in net.topology.devices:
            raise ScenarioError(f"target {d} is not a device")
        opts = [(f, t) for f, t in cands if d in t.devices and usable(t, d)
                and (str(f.dst.prefix), f.proto) not in used_classes]
        if not opts:
            raise ScenarioError(f"no monitored flow crosses target {d}")
        f, traj = rng.choice(opts)
        chosen.append((d, f, traj))
        used_classes.add((str(f.dst.prefix), f.proto))
    return chosen


def implant(spec: ScenarioSpec, net: Network, traffic: TrafficGenerator) -> GroundTruth:
    """Install the scenario's attack into ``net`` and return the ground truth."""
    rng = random.Random(spec.seed)
    picks = _choose(spec, net, traffic, rng)
    actions, victims = {}, {}
    if spec.nos:
        rules = []
        for dev, flow, traj in picks:
            space = HeaderClass(str(flow.dst.prefix), flow.proto).space
            action = rng.choice(NOS_ACTIONS) if spec.action == "random" else spec.action
            port = _wrong_port(net, traj, dev, space, rng) if action == "misroute" else None
            if port is None:
                action = "drop"
            acts = (Forward(port),) if action == "misroute" else (Drop(),)
            rules.append((dev, FlowRule(space, ATTACK_PRIORITY, acts)))
            actions[dev], victims[dev] = action, f"{flow.dst.prefix}|{flow.proto}"
        kind = (CompromiseKind.MALICIOUS_RULES_CONCEALED if spec.concealed
                else CompromiseKind.MALICIOUS_RULES)
        targets = frozenset(d for d, _, _ in picks)
        net.controller.compromise(CompromiseMode(kind, targets, tuple(rules)))
        mode = NosMode.VIEW_MISMATCH if spec.concealed else NosMode.RULE_MISMATCH
        return GroundTruth(spec.id, VerdictKind.COMPROMISED_NOS, targets, mode, actions, victims)

    for dev, flow, traj in picks:
        space = HeaderClass(str(flow.dst.prefix), flow.proto).space
        i = traj.devices.index(dev)
        options = [a for a in DEVICE_ACTIONS
                   if not (a == "replay" and i == 0) and not (a == "modify" and i == len(traj.hops) - 1)]
        action = rng.choice(options) if spec.action == "random" else spec.action
        kw: dict = {}
        if action == "misroute":
            port = _wrong_port(net, traj, dev, space, rng)
            if port is None:
                action = "drop"
            kw["wrong_port"] = port
        if action == "modify":
            kw.update(field="dst_addr", value=parse_addr(MODIFY_TARGET))
        if action != "misroute":
            kw.pop("wrong_port", None)
        net.implant(dev, MaliciousBehavior(BehaviorKind(action), space, spec.probability, **kw))
        actions[dev], victims[dev] = action, f"{flow.dst.prefix}|{flow.proto}"
    return GroundTruth("S6", VerdictKind.MALICIOUS_DEVICE, frozenset(actions), None, actions, victims)


def expected_action(truth: GroundTruth, device: DeviceId) -> Optional[DeviceAction]:
    name = truth.actions.get(device)
    return DeviceAction(name) if name and truth.kind is VerdictKind.MALICIOUS_DEVICE else None
