"""End-to-end experiments: warm-up, implant, detect, respond, measure."""

from __future__ import annotations

import copy
import logging
import random
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from ..detection import VerdictKind
from ..engine import GwardarConfig
from ..netmodel import Topology
from ..system import Network
from .scenario import SCENARIOS, GroundTruth, ScenarioSpec, implant
from .traffic import TrafficGenerator, TrafficSpec

log = logging.getLogger(__name__)


@dataclass
class WarmupSpec:
    stable_windows: int = 5  # K
    epsilon: float = 0.01
    min_windows: int = 8
    max_time: int = 5000


@dataclass
class ExperimentConfig:
    gwardar: GwardarConfig = field(default_factory=GwardarConfig)
    warmup: WarmupSpec = field(default_factory=WarmupSpec)
    cycle_period: int = 20
    horizon: int = 400  # how long to wait for a verdict after the implant
    loss_probability: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentConfig":
        data = dict(data)
        g = GwardarConfig.from_dict(data.pop("gwardar", {}))
        w = WarmupSpec(**data.pop("warmup", {}))
        return cls(gwardar=g, warmup=w, **data)


@dataclass
class AttackRecord:
    scenario: str
    implanted_at: int
    detected_at: Optional[int]
    verdict: str
    targets: list
    truth_targets: list
    correct: bool
    action_correct: Optional[bool] = None
    seed: int = 0

    @property
    def latency(self) -> Optional[int]:
        return None if self.detected_at is None else self.detected_at - self.implanted_at


@dataclass
class ExperimentMetrics:
    attacks: list[AttackRecord] = field(default_factory=list)
    fpr_timeline: list[tuple[int, float]] = field(default_factory=list)
    restore_checks: list[dict] = field(default_factory=list)
    warmup_end: Optional[int] = None
    honest_verdicts: int = 0

    @property
    def detection_rate(self) -> float:
        return sum(a.correct for a in self.attacks) / len(self.attacks) if self.attacks else 0.0

    def extend(self, other: "ExperimentMetrics") -> None:
        self.attacks.extend(other.attacks)
        self.restore_checks.extend(other.restore_checks)


def _step(net: Network, traffic: TrafficGenerator, period: int) -> list:
    start = traffic.time
    net.inject_many(traffic.window(period))
    now = start + period - 1
    net.advance(now)
    return net.gwardar.cycle(now)


def stabilized(rates: Sequence[float], spec: WarmupSpec) -> bool:
    """K consecutive window-to-window FPR changes below epsilon."""
    if len(rates) < max(spec.min_windows, spec.stable_windows + 1):
        return False
    tail = rates[-(spec.stable_windows + 1):]
    return all(abs(b - a) < spec.epsilon for a, b in zip(tail, tail[1:]))


def warm_up(net: Network, traffic: TrafficGenerator, config: ExperimentConfig) -> int:
    """Learn until the windowed FPR settles; returns the stabilization time."""
    while traffic.time < config.warmup.max_time:
        _step(net, traffic, config.cycle_period)
        rates = [r for _, r in net.gwardar.fpr_timeline()]
        if stabilized(rates, config.warmup):
            break
    net.gwardar.finish_learning()
    return traffic.time


def build_baseline(topology: Topology, traffic: TrafficSpec,
                   config: ExperimentConfig) -> tuple[Network, TrafficGenerator, int]:
    net = Network(topology, config.seed, config.loss_probability, copy.deepcopy(config.gwardar))
    net.install_routing()
    gen = TrafficGenerator(topology, traffic)
    end = warm_up(net, gen, config)
    return net, gen, end


def _restore_checks(net: Network) -> list[dict]:
    out = []
    for resp in net.gwardar.responses:
        rest = resp.get("restoration")
        if rest is not None:
            out.append({"time": resp.get("time"), "tables_equal": rest["tables_equal"],
                        "findings": len(rest["findings"]), "ok": rest["tables_equal"] and not rest["findings"]})
        elif "error" in resp:
            out.append({"time": None, "tables_equal": False, "findings": 0, "ok": False})
    return out


def attack(net: Network, traffic: TrafficGenerator, spec: ScenarioSpec,
           config: ExperimentConfig) -> tuple[AttackRecord, GroundTruth]:
    """Run honest traffic to the implant time, implant, then wait for verdicts."""
    target = traffic.time + spec.start_time
    while traffic.time + config.cycle_period <= target:
        _step(net, traffic, config.cycle_period)
    implanted_at = traffic.time
    net.advance(implanted_at)
    truth = implant(spec, net, traffic)
    before = len(net.gwardar.verdicts)
    found: list = []
    detected_at = None
    deadline = implanted_at + config.horizon
    while traffic.time < deadline:
        _step(net, traffic, config.cycle_period)
        fresh = [v for v in net.gwardar.verdicts[before:] if v.kind is not VerdictKind.FALSE_POSITIVE]
        if fresh and detected_at is None:
            detected_at = fresh[0].issued_at
        found = fresh
        if truth.kind is VerdictKind.COMPROMISED_NOS and fresh:
            break
        if fresh and frozenset().union(*(v.targets for v in fresh)) >= truth.targets:
            break
    correct = truth.matches(found)
    action_ok = None
    if truth.kind is VerdictKind.MALICIOUS_DEVICE and found:
        action_ok = all(v.action is not None and truth.actions.get(d) == v.action.value
                        for v in found for d in v.targets)
    elif found:
        action_ok = found[0].nos_mode is truth.nos_mode
    rec = AttackRecord(
        spec.id, implanted_at, detected_at,
        found[0].kind.value if found else "none",
        sorted(set().union(*(v.targets for v in found))) if found else [],
        sorted(truth.targets), correct, action_ok, spec.seed)
    return rec, truth


def run_experiment(spec: Optional[ScenarioSpec], topology: Topology, traffic: TrafficSpec,
                   config: Optional[ExperimentConfig] = None,
                   baseline: Optional[tuple[Network, TrafficGenerator, int]] = None) -> ExperimentMetrics:
    """One scenario (or an honest run when ``spec`` is None) on a fresh or cloned baseline."""
    config = config or ExperimentConfig()
    if baseline is None:
        baseline = build_baseline(topology, traffic, config)
    net, gen, end = copy.deepcopy(baseline)
    metrics = ExperimentMetrics(warmup_end=end)
    if spec is None:
        before = len(net.gwardar.verdicts)
        deadline = gen.time + config.horizon
        while gen.time < deadline:
            _step(net, gen, config.cycle_period)
        metrics.honest_verdicts = sum(v.kind is not VerdictKind.FALSE_POSITIVE
                                      for v in net.gwardar.verdicts[before:])
    else:
        rec, _ = attack(net, gen, spec, config)
        metrics.attacks.append(rec)
    metrics.fpr_timeline = net.gwardar.fpr_timeline()
    metrics.restore_checks = _restore_checks(net)
    metrics.network = net  # type: ignore[attr-defined]
    return metrics


def campaign_specs(count: int = 25, scenarios: Iterable[str] = SCENARIOS,
                   seed: int = 0) -> list[ScenarioSpec]:
    """Uniform allocation over the scenarios, seeded per attack."""
    scenarios = list(scenarios)
    rng = random.Random(seed)
    return [ScenarioSpec.default(scenarios[i % len(scenarios)], rng.getrandbits(32))
            for i in range(count)]


def run_campaign(topology: Topology, traffic: TrafficSpec, config: Optional[ExperimentConfig] = None,
                 specs: Optional[Sequence[ScenarioSpec]] = None) -> ExperimentMetrics:
    """Many attacks, each on its own copy of one learned baseline."""
    config = config or ExperimentConfig()
    specs = list(specs) if specs is not None else campaign_specs(seed=config.seed)
    baseline = build_baseline(topology, traffic, config)
    total = ExperimentMetrics(warmup_end=baseline[2])
    total.fpr_timeline = baseline[0].gwardar.fpr_timeline()
    for spec in specs:
        m = run_experiment(spec, topology, traffic, config, baseline)
        total.extend(m)
        log.info("%s seed=%s correct=%s", spec.id, spec.seed, m.attacks[0].correct)
    return total
