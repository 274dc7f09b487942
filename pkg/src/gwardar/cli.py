"""Command line client for the gwardar service.

Commands talk HTTP to ``$GWARDAR_URL`` (default http://127.0.0.1:8000).
``--local`` runs the same app in-process instead, so no server is needed.
"""

from __future__ import annotations

import json
import os
import warnings
from pathlib import Path
from typing import Any, Optional

import click
import httpx

from .harness.experiment import AttackRecord, ExperimentMetrics
from .harness.metrics import emit_metrics

DEFAULT_URL = "http://127.0.0.1:8000"
OUT_ENV = "GWARDAR_OUT"
URL_ENV = "GWARDAR_URL"
SESSION_ENV = "GWARDAR_SESSION"


class Client:
    def __init__(self, http: httpx.Client):
        self.http = http

    @classmethod
    def connect(cls, url: Optional[str], local: bool) -> "Client":
        if local:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service.app import create_app
            return cls(TestClient(create_app()))
        return cls(httpx.Client(base_url=url or os.environ.get(URL_ENV, DEFAULT_URL), timeout=None))

    def call(self, method: str, path: str, body: Optional[dict] = None) -> Any:
        try:
            resp = self.http.request(method, path, json=body)
        except httpx.TransportError as exc:
            raise click.ClickException(f"cannot reach gwardar service: {exc}") from exc
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise click.ClickException(f"{resp.status_code}: {detail}")
        return resp.json() if resp.content else None


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}") from exc


def _scenario(value: Any) -> Optional[dict]:
    """Scenario from a JSON file, an inline mapping or a bare id like ``S3``."""
    if value in (None, "", "none"):
        return None
    if isinstance(value, dict):
        return value
    if value in ("S1", "S2", "S3", "S4", "S6"):
        k = 2 if value in ("S2", "S4") else 1
        return {"id": value, "targets": f"random({k})"}
    try:
        return json.loads(Path(value).read_text())
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read scenario {value}: {exc}") from exc


def _topology(value: str) -> Any:
    # files are read client side so the server need not share a filesystem
    if value.startswith("gen:") or not Path(value).is_file():
        return value
    try:
        return json.loads(Path(value).read_text())
    except ValueError as exc:
        raise click.ClickException(f"cannot parse topology {value}: {exc}") from exc


def _pick(flag, cfg: dict, key: str, default=None):
    return flag if flag is not None else cfg.get(key, default)


def _echo(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
@click.option("--url", default=None, help=f"service URL (env {URL_ENV})")
@click.option("--local", is_flag=True, help="run the service in-process")
@click.pass_context
def main(ctx, url, local):
    """Gwardar SDN intrusion prevention simulator."""
    ctx.obj = {"url": url, "local": local}


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("gwardar.service.app:app", host=host, port=port)


@main.command()
@click.option("--topology", help="topology JSON file or gen:line(n) / gen:ring(n) / gen:random(n,d)")
@click.option("--scenario", help="scenario JSON file, or S1..S4/S6; omit for an honest run")
@click.option("--campaign", type=int, help="run N attacks spread over all scenarios instead")
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False), help=f"output directory (env {OUT_ENV})")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file")
@click.pass_context
def run(ctx, topology, scenario, campaign, seed, out, config_path):
    """Run one experiment and write CSV metrics."""
    cfg = _load_config(config_path)
    topology = _pick(topology, cfg, "topology")
    if not topology:
        raise click.UsageError("--topology is required (flag or config file)")
    seed = int(_pick(seed, cfg, "seed", 0))
    out = Path(_pick(out, cfg, "out") or os.environ.get(OUT_ENV, "gwardar-out"))
    body = {"topology": _topology(topology), "seed": seed,
            "traffic": cfg.get("traffic", {}), "config": cfg.get("config", {})}
    campaign = _pick(campaign, cfg, "campaign")
    if campaign:
        body["campaign"] = int(campaign)
    else:
        spec = _scenario(_pick(scenario, cfg, "scenario"))
        if spec is not None:
            spec.setdefault("seed", seed)
            body["scenario"] = spec
    client = Client.connect(ctx.obj["url"] or cfg.get("url"), ctx.obj["local"])
    result = client.call("POST", "/experiments", body)
    metrics = ExperimentMetrics(
        attacks=[AttackRecord(**{k: v for k, v in a.items() if k != "latency"}) for a in result["attacks"]],
        fpr_timeline=[tuple(x) for x in result["fpr_timeline"]],
        restore_checks=result["restore_checks"],
        warmup_end=result["warmup_end"],
        honest_verdicts=result["honest_verdicts"])
    emit_metrics(metrics, out)
    (out / "verdicts.json").write_text(json.dumps(result["verdicts"], indent=2))
    summary = {"out": str(out), "warmup_end": result["warmup_end"],
               "attacks": len(result["attacks"]),
               "correct": sum(a["correct"] for a in result["attacks"]),
               "honest_verdicts": result["honest_verdicts"]}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _echo(summary)


def _session_client(ctx, session, topology, seed):
    """Client plus session id; in local mode a fresh session is built first."""
    client = Client.connect(ctx.obj["url"], ctx.obj["local"])
    if ctx.obj["local"]:
        if not topology:
            raise click.UsageError("--local needs --topology to build a session")
        made = client.call("POST", "/sessions", {"topology": _topology(topology), "seed": seed})
        return client, made["id"]
    sid = session or os.environ.get(SESSION_ENV)
    if not sid:
        raise click.UsageError(f"--session is required (or set {SESSION_ENV})")
    return client, sid


_session_opts = [
    click.option("--session", help=f"session id (env {SESSION_ENV})"),
    click.option("--topology", help="with --local: topology for a throwaway session"),
    click.option("--seed", type=int, default=0),
]


def _with_session(f):
    for opt in reversed(_session_opts):
        f = opt(f)
    return f


@main.command("new-session")
@click.option("--topology", required=True)
@click.option("--seed", type=int, default=0)
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.pass_context
def new_session(ctx, topology, seed, config_path):
    """Create a warmed-up session on the service and print its id."""
    cfg = _load_config(config_path)
    client = Client.connect(ctx.obj["url"] or cfg.get("url"), ctx.obj["local"])
    _echo(client.call("POST", "/sessions", {"topology": _topology(topology), "seed": seed,
                                            "traffic": cfg.get("traffic", {}),
                                            "config": cfg.get("config", {})}))


@main.command()
@click.option("--duration", type=int, default=100)
@_with_session
@click.pass_context
def advance(ctx, duration, session, topology, seed):
    """Let traffic flow for DURATION time units and print new verdicts."""
    client, sid = _session_client(ctx, session, topology, seed)
    _echo(client.call("POST", f"/sessions/{sid}/advance", {"duration": duration}))


@main.command("verify-replica")
@_with_session
@click.pass_context
def verify_replica(ctx, session, topology, seed):
    """Check the virtual replica against the live device tables."""
    client, sid = _session_client(ctx, session, topology, seed)
    result = client.call("POST", f"/sessions/{sid}/verify-replica")
    _echo(result)
    if not result["equal"]:
        ctx.exit(1)


@main.command()
@click.option("--force", is_flag=True, help="restore even without a compromise verdict")
@click.option("--devices", help="comma-separated device ids; default restores all")
@_with_session
@click.pass_context
def restore(ctx, force, devices, session, topology, seed):
    """Restore device tables from the latest trusted snapshot."""
    client, sid = _session_client(ctx, session, topology, seed)
    body: dict = {"force": force}
    if devices:
        body["devices"] = [int(d) for d in devices.split(",")]
    _echo(client.call("POST", f"/sessions/{sid}/restore", body))


@main.command()
@_with_session
@click.pass_context
def takeover(ctx, session, topology, seed):
    """Restore the trusted snapshot and block the controller."""
    client, sid = _session_client(ctx, session, topology, seed)
    _echo(client.call("POST", f"/sessions/{sid}/takeover"))


@main.command("release-takeover")
@_with_session
@click.pass_context
def release_takeover(ctx, session, topology, seed):
    """Give control of the data plane back to the controller."""
    client, sid = _session_client(ctx, session, topology, seed)
    _echo(client.call("POST", f"/sessions/{sid}/release-takeover"))


if __name__ == "__main__":
    main()
