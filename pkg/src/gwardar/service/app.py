"""HTTP front end over simulation sessions and one-shot experiments."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException

from ..detection import Verdict
from ..harness.experiment import (
    ExperimentConfig,
    ExperimentMetrics,
    campaign_specs,
    run_campaign,
    run_experiment,
)
from ..harness.scenario import ScenarioError, ScenarioSpec
from ..harness.topology import ParseError, generate_topology
from ..harness.traffic import TrafficSpec
from ..netmodel import Topology, TopologyError
from ..protection import NoTrustedSnapshot, PartialRestore
from .schemas import (
    AdvanceOut,
    AdvanceRequest,
    ExperimentOut,
    ExperimentRequest,
    ExperimentSettings,
    GroundTruthOut,
    ReplicaCheckOut,
    RestoreOut,
    RestoreRequest,
    ScenarioIn,
    SessionCreate,
    SessionOut,
    TakeoverOut,
    TopologyIn,
    TrafficSettings,
    VerdictOut,
)
from .session import SessionError, SessionStore


def build_topology(spec: TopologyIn, seed: int) -> Topology:
    try:
        if isinstance(spec, dict):
            return Topology.from_dict(spec)
        return generate_topology(spec, seed=seed)
    except FileNotFoundError as exc:
        raise HTTPException(404, f"topology file not found: {exc.filename}")
    except (ParseError, TopologyError, ValueError) as exc:
        raise HTTPException(422, str(exc))


def build_config(settings: ExperimentSettings, seed: int) -> ExperimentConfig:
    data = settings.model_dump()
    data["seed"] = seed
    return ExperimentConfig.from_dict(data)


def build_traffic(settings: TrafficSettings, seed: int) -> TrafficSpec:
    data = settings.model_dump()
    data["seed"] = data["seed"] or seed
    return TrafficSpec.from_dict(data)


def verdict_out(v: Verdict, evidence: bool = False) -> VerdictOut:
    d = v.to_dict()
    if not evidence:
        d["evidence"] = []
    return VerdictOut(**d)


def metrics_out(m: ExperimentMetrics, verdicts=()) -> ExperimentOut:
    return ExperimentOut(
        warmup_end=m.warmup_end,
        detection_rate=m.detection_rate,
        honest_verdicts=m.honest_verdicts,
        attacks=[dict(vars(a), latency=a.latency) for a in m.attacks],
        fpr_timeline=m.fpr_timeline,
        restore_checks=m.restore_checks,
        verdicts=[verdict_out(v) for v in verdicts],
    )


def create_app(store: Optional[SessionStore] = None) -> FastAPI:
    app = FastAPI(title="gwardar", version="0.1.0")
    sessions = store or SessionStore()
    app.state.sessions = sessions

    def session(sid: str):
        try:
            return sessions.get(sid)
        except SessionError as exc:
            raise HTTPException(404, str(exc))

    @app.get("/health")
    def health():
        return {"status": "ok", "sessions": len(sessions.ids())}

    @app.post("/experiments", response_model=ExperimentOut)
    def experiment(req: ExperimentRequest):
        topo = build_topology(req.topology, req.seed)
        config = build_config(req.config, req.seed)
        traffic = build_traffic(req.traffic, req.seed)
        try:
            if req.campaign:
                m = run_campaign(topo, traffic, config, campaign_specs(req.campaign, seed=req.seed))
                return metrics_out(m)
            spec = ScenarioSpec.from_dict(req.scenario.model_dump()) if req.scenario else None
            m = run_experiment(spec, topo, traffic, config)
        except ScenarioError as exc:
            raise HTTPException(422, str(exc))
        return metrics_out(m, m.network.gwardar.verdicts)

    @app.post("/sessions", response_model=SessionOut, status_code=201)
    def create_session(req: SessionCreate):
        topo = build_topology(req.topology, req.seed)
        s = sessions.new(topo, build_traffic(req.traffic, req.seed), build_config(req.config, req.seed))
        if req.warm_up:
            s.warm_up()
        return s.summary()

    @app.get("/sessions")
    def list_sessions():
        return sessions.ids()

    @app.get("/sessions/{sid}", response_model=SessionOut)
    def get_session(sid: str):
        return session(sid).summary()

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        session(sid)
        sessions.drop(sid)

    @app.post("/sessions/{sid}/advance", response_model=AdvanceOut)
    def advance(sid: str, req: AdvanceRequest):
        s = session(sid)
        verdicts = s.advance(req.duration)
        return AdvanceOut(time=s.time, verdicts=[verdict_out(v) for v in verdicts])

    @app.post("/sessions/{sid}/scenario", response_model=GroundTruthOut)
    def implant(sid: str, req: ScenarioIn):
        try:
            truth = session(sid).implant(ScenarioSpec.from_dict(req.model_dump()))
        except ScenarioError as exc:
            raise HTTPException(422, str(exc))
        return truth.to_dict()

    @app.get("/sessions/{sid}/verdicts", response_model=list[VerdictOut])
    def verdicts(sid: str, evidence: bool = False):
        return [verdict_out(v, evidence) for v in session(sid).gwardar.verdicts]

    @app.get("/sessions/{sid}/events")
    def events(sid: str, event: Optional[str] = None):
        log = session(sid).gwardar.events
        return log.of(event) if event else log.events

    @app.get("/sessions/{sid}/view")
    def view(sid: str):
        return session(sid).view()

    @app.post("/sessions/{sid}/verify-replica", response_model=ReplicaCheckOut)
    def verify_replica(sid: str):
        return session(sid).verify_replica()

    @app.post("/sessions/{sid}/restore", response_model=RestoreOut)
    def restore(sid: str, req: RestoreRequest):
        try:
            return session(sid).restore(req.force, req.devices)
        except SessionError as exc:
            raise HTTPException(409, str(exc))
        except NoTrustedSnapshot as exc:
            raise HTTPException(409, str(exc))
        except PartialRestore as exc:
            raise HTTPException(502, str(exc))

    @app.post("/sessions/{sid}/takeover", response_model=TakeoverOut)
    def takeover(sid: str):
        try:
            return session(sid).takeover()
        except NoTrustedSnapshot as exc:
            raise HTTPException(409, str(exc))

    @app.post("/sessions/{sid}/release-takeover", response_model=TakeoverOut)
    def release_takeover(sid: str):
        return session(sid).release_takeover()

    return app


app = create_app()
