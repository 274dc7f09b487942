"""Scanning regions and time-windowed normal models of packet trajectories.

For every trajectory in a region, the devices it crosses are broken into
sub-trajectories between device pairs at least two hops apart; the devices
seen on those sub-trajectories form the trajectory's normal set, and the
sets are unioned per header class.
"""

from __future__ import annotations

import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .dataplane import Trajectory
from .interceptor import VirtualReplica
from .netmodel import DeviceId, Topology
from .trajectory import (
    HeaderClass,
    StoreRole,
    TrajectoryStore,
    expected_trajectory,
    find_packet,
)

DEFAULT_WINDOW = 100
DEFAULT_THRESHOLD = 0.5
DEFAULT_SAMPLE_RATE = 0.25
MIN_HOPS = 2


class EmptyStore(ValueError):
    pass


@dataclass(frozen=True)
class TimeWindow:
    start: int
    length: int = DEFAULT_WINDOW

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("window length must be positive")

    @property
    def end(self) -> int:
        return self.start + self.length

    def contains(self, t: int) -> bool:
        return self.start <= t < self.end

    def halves(self) -> tuple["TimeWindow", "TimeWindow"]:
        first = self.length // 2
        return TimeWindow(self.start, first), TimeWindow(self.start + first, self.length - first)


@dataclass(frozen=True)
class ScanningRegion:
    id: int
    devices: frozenset
    member_trajectories: frozenset
    density_score: float

    def __post_init__(self):
        if not self.devices:
            raise ValueError("a scanning region needs at least one device")

    def covers(self, traj: Trajectory) -> bool:
        return any(d in self.devices for d in traj.devices)


@dataclass(frozen=True)
class NormalModel:
    region: int
    per_class: Mapping[HeaderClass, frozenset]
    window: TimeWindow
    built_at: int = 0

    def classes(self) -> list[HeaderClass]:
        return sorted(self.per_class)

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "window": {"start": self.window.start, "length": self.window.length},
            "built_at": self.built_at,
            "per_class": {c.key: sorted(devs) for c, devs in sorted(self.per_class.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "NormalModel":
        w = data["window"]
        return cls(
            int(data["region"]),
            {HeaderClass.from_key(k): frozenset(int(d) for d in v) for k, v in data["per_class"].items()},
            TimeWindow(int(w["start"]), int(w["length"])),
            int(data.get("built_at", 0)),
        )

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "NormalModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def merge_models(models: Iterable[NormalModel], region: int = -1) -> NormalModel:
    models = list(models)
    merged: dict[HeaderClass, set] = defaultdict(set)
    for m in models:
        for c, devs in m.per_class.items():
            merged[c] |= devs
    window = models[0].window if models else TimeWindow(0)
    built = max((m.built_at for m in models), default=0)
    return NormalModel(region, {c: frozenset(v) for c, v in merged.items()}, window, built)


@dataclass(frozen=True)
class NormalVerdict:
    normal: bool
    unknown_class: bool = False

    def __bool__(self) -> bool:
        return self.normal


def check_normal(model: NormalModel, cls: HeaderClass, device: DeviceId,
                 unknown_is_normal: bool = False) -> NormalVerdict:
    devs = model.per_class.get(cls)
    if devs is None:
        return NormalVerdict(unknown_is_normal, unknown_class=True)
    return NormalVerdict(device in devs)


def is_normal(model: NormalModel, cls: HeaderClass, device: DeviceId,
              unknown_is_normal: bool = False) -> bool:
    return check_normal(model, cls, device, unknown_is_normal).normal


# ------------------------------------------------------------------ regions


def identify_scanning_regions(
    store: TrajectoryStore,
    threshold: float = DEFAULT_THRESHOLD,
    sample_rate: float = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
) -> list[ScanningRegion]:
    """Dense regions: connected groups of frequently traversed devices."""
    if len(store) == 0:
        raise EmptyStore("no trajectories recorded")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not 0 < sample_rate <= 1:
        raise ValueError("sample_rate must lie in (0, 1]")
    rng = random.Random(seed)
    trajs = list(store)
    sample = trajs if sample_rate >= 1 else [t for t in trajs if rng.random() < sample_rate]
    if not sample:
        sample = trajs[:1]
    freq: dict[DeviceId, int] = defaultdict(int)
    for t in sample:
        for d in set(t.devices):
            freq[d] += 1
    peak = max(freq.values())
    dense = {d for d, f in freq.items() if f >= threshold * peak}
    topo = store.topology
    adj = topo.adjacency()
    regions = []
    seen: set = set()
    for start in sorted(dense):
        if start in seen:
            continue
        comp, stack = set(), [start]
        while stack:
            d = stack.pop()
            if d in comp:
                continue
            comp.add(d)
            stack.extend(n for _, n in adj.get(d, ()) if n in dense and n not in comp)
        seen |= comp
        members = frozenset(t.packet_id for t in trajs if any(d in comp for d in t.devices))
        density = sum(freq[d] for d in comp) / len(comp) / peak
        regions.append(ScanningRegion(len(regions), frozenset(comp), members, density))
    return regions


# ------------------------------------------------------------- normal models


class _SubTrajectoryIndex:
    """Memoised sub-trajectory lookups shared across one model build."""

    def __init__(self, store: TrajectoryStore, replica: VirtualReplica):
        self.store = store
        self.replica = replica
        self.topology = replica.topology
        self._dist = replica.topology.all_distances()
        self._pair: dict[tuple[DeviceId, DeviceId], frozenset] = {}
        self._routes: dict[HeaderClass, set] = {}

    def distance(self, x: DeviceId, y: DeviceId) -> float:
        return self._dist.get(x, {}).get(y, float("inf"))

    def segment_devices(self, x: DeviceId, y: DeviceId) -> frozenset:
        key = (x, y)
        if key not in self._pair:
            self._pair[key] = self._lookup(x, y)
        return self._pair[key]

    def _lookup(self, x: DeviceId, y: DeviceId) -> frozenset:
        pck = find_packet(self.replica, x, y)
        if pck is None:
            return frozenset()
        cls = HeaderClass.of(pck, self.topology)
        routes = self._routes.get(cls)
        if routes is None:
            routes = self._routes[cls] = {tuple(t.devices) for t in self.store.by_class.get(cls, ())}
        found: set = set()
        for route in routes:
            found |= sub_trajectory(route, x, y)
        return frozenset(found)


def sub_trajectory(devices: Sequence[DeviceId], x: DeviceId, y: DeviceId) -> set:
    """Devices between the first ``x`` and the next ``y`` after it."""
    try:
        i = devices.index(x)
        j = devices.index(y, i + 1)
    except ValueError:
        return set()
    return set(devices[i:j + 1])


def trajectory_normal(devices: Sequence[DeviceId], index: _SubTrajectoryIndex) -> set:
    normal = set(devices)
    order = list(dict.fromkeys(devices))
    for x in order:
        far = [y for y in order if index.distance(x, y) >= MIN_HOPS]
        for y in far:
            normal |= index.segment_devices(x, y)
    return normal


def _build(region: ScanningRegion, store: TrajectoryStore, replica: VirtualReplica,
           window: TimeWindow, built_at: int) -> NormalModel:
    index = _SubTrajectoryIndex(store, replica)
    per_class: dict[HeaderClass, set] = defaultdict(set)
    by_route: dict[tuple, set] = {}
    for traj in store.in_window(window.start, window.length):
        if not region.covers(traj):
            continue
        route = tuple(traj.devices)
        if route not in by_route:
            by_route[route] = trajectory_normal(route, index)
        per_class[store.classify(traj)] |= by_route[route]
    return NormalModel(region.id, {c: frozenset(v) for c, v in per_class.items()}, window, built_at)


def build_normal_model(region: ScanningRegion, store: TrajectoryStore, window: TimeWindow,
                       replica: VirtualReplica, built_at: Optional[int] = None) -> NormalModel:
    """Normal model from the actual trajectory database."""
    return _build(region, store, replica, window, window.end if built_at is None else built_at)


def expected_store(actual: TrajectoryStore, replica: VirtualReplica) -> TrajectoryStore:
    """Expected counterpart of every actual trajectory, computed over the replica."""
    out = TrajectoryStore(actual.topology, StoreRole.EXPECTED)
    for traj in actual:
        if traj.packet_id in out.by_packet:
            continue
        out.record(expected_trajectory(replica, traj.header, traj.ingress, traj.start_time))
    return out


def build_expected_normal(region: ScanningRegion, replica: VirtualReplica, window: TimeWindow,
                          actual: TrajectoryStore, built_at: Optional[int] = None) -> NormalModel:
    """Normal model from the expected trajectory database."""
    return build_normal_model(region, expected_store(actual, replica), window, replica, built_at)
