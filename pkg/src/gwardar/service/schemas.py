from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field


class DetectionSettings(BaseModel):
    recurrence_threshold: int = Field(2, ge=1)
    inspection_deadline: int = Field(10, ge=0)
    probe_count: int = Field(5, ge=1)
    loss_tolerance: float = Field(0.02, ge=0, le=1)
    significance: float = Field(1e-6, gt=0, lt=1)
    unknown_is_normal: bool = False
    full_inspection: Literal["region", "all", "off"] = "region"


class GwardarSettings(BaseModel):
    window: int = Field(100, gt=0)
    region_threshold: float = Field(0.5, gt=0)
    sample_rate: float = Field(0.25, gt=0, le=1)
    region_seed: int = 0
    learn_horizon: Optional[int] = None
    snapshot_interval: int = Field(60, gt=0)
    learn_interval: int = Field(100, gt=0)
    history_size: int = Field(32, gt=0)
    auto_respond: bool = True
    detection: DetectionSettings = DetectionSettings()


class WarmupSettings(BaseModel):
    stable_windows: int = Field(5, ge=1)
    epsilon: float = Field(0.01, gt=0)
    min_windows: int = Field(8, ge=1)
    max_time: int = Field(5000, gt=0)


class ExperimentSettings(BaseModel):
    gwardar: GwardarSettings = GwardarSettings()
    warmup: WarmupSettings = WarmupSettings()
    cycle_period: int = Field(20, gt=0)
    horizon: int = Field(400, gt=0)
    loss_probability: float = Field(0.0, ge=0, le=1)
    seed: int = 0


class TrafficSettings(BaseModel):
    rate: float = Field(4.0, gt=0)
    duration: int = Field(1000, ge=0)
    seed: int = 0
    flows: Optional[int] = Field(None, ge=0)
    protos: list[int] = [6]
    start: int = 0
    first_packet_id: int = 1


class ScenarioIn(BaseModel):
    id: Literal["S1", "S2", "S3", "S4", "S6"]
    targets: Union[list[int], str] = "random(1)"
    action: str = "random"
    start_time: int = Field(40, ge=0)
    seed: int = 0
    probability: float = Field(1.0, ge=0, le=1)


# a generator string ("gen:random(54,3)"), a server-side path, or a topology document
TopologyIn = Union[str, dict[str, Any]]


class SessionCreate(BaseModel):
    topology: TopologyIn
    seed: int = 0
    traffic: TrafficSettings = TrafficSettings()
    config: ExperimentSettings = ExperimentSettings()
    warm_up: bool = True


class SessionOut(BaseModel):
    id: str
    time: int
    devices: int
    learning: bool
    takeover: bool
    verdicts: int
    snapshots: int


class VerdictOut(BaseModel):
    kind: str
    targets: list[int]
    action: Optional[str] = None
    nos_mode: Optional[str] = None
    issued_at: int
    anomaly_id: Optional[int] = None
    header_class: Optional[str] = None
    evidence: list[Any] = []


class AdvanceRequest(BaseModel):
    duration: int = Field(100, gt=0)


class AdvanceOut(BaseModel):
    time: int
    verdicts: list[VerdictOut]


class GroundTruthOut(BaseModel):
    scenario: str
    kind: str
    targets: list[int]
    nos_mode: Optional[str] = None
    actions: dict[str, str] = {}
    victims: dict[str, str] = {}


class ReplicaCheckOut(BaseModel):
    equal: bool
    mismatched: list[int]
    rules: int


class RestoreRequest(BaseModel):
    force: bool = False
    devices: Optional[list[int]] = None


class RestoreOut(BaseModel):
    devices: dict[str, int]
    tables_equal: bool
    mismatched: list[int]
    findings: list[dict[str, Any]]
    snapshot_time: int


class TakeoverOut(BaseModel):
    active: bool
    since: Optional[int] = None
    snapshot_time: Optional[int] = None


class ExperimentRequest(BaseModel):
    topology: TopologyIn
    scenario: Optional[ScenarioIn] = None
    campaign: Optional[int] = Field(None, ge=1)
    seed: int = 0
    traffic: TrafficSettings = TrafficSettings()
    config: ExperimentSettings = ExperimentSettings()


class AttackOut(BaseModel):
    scenario: str
    seed: int
    implanted_at: int
    detected_at: Optional[int] = None
    latency: Optional[int] = None
    verdict: str
    targets: list[int]
    truth_targets: list[int]
    correct: bool
    action_correct: Optional[bool] = None


class RestoreCheckOut(BaseModel):
    time: Optional[int] = None
    tables_equal: bool
    findings: int
    ok: bool


class ExperimentOut(BaseModel):
    warmup_end: Optional[int] = None
    detection_rate: float
    honest_verdicts: int
    attacks: list[AttackOut]
    fpr_timeline: list[tuple[int, float]]
    restore_checks: list[RestoreCheckOut]
    verdicts: list[VerdictOut] = []


class ErrorOut(BaseModel):
    detail: str
