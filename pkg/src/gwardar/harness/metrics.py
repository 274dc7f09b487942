"""CSV output for experiment metrics.

attacks.csv       scenario,seed,implanted_at,detected_at,latency,verdict,targets,truth_targets,correct,action_correct
fpr_timeline.csv  time,fpr
restore.csv       index,time,tables_equal,findings,ok

Target lists are space-separated device ids; booleans are ``true``/``false``;
missing values are empty cells.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Union

from .experiment import AttackRecord, ExperimentMetrics

ATTACK_COLUMNS = ["scenario", "seed", "implanted_at", "detected_at", "latency", "verdict",
                  "targets", "truth_targets", "correct", "action_correct"]
FPR_COLUMNS = ["time", "fpr"]
RESTORE_COLUMNS = ["index", "time", "tables_equal", "findings", "ok"]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def _write(path: Path, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(x) for x in row])


def emit_metrics(metrics: ExperimentMetrics, path: Union[str, Path]) -> dict[str, Path]:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {name: out / f"{name}.csv" for name in ("attacks", "fpr_timeline", "restore")}
    _write(files["attacks"], ATTACK_COLUMNS, (
        [a.scenario, a.seed, a.implanted_at, a.detected_at, a.latency, a.verdict, a.targets,
         a.truth_targets, a.correct, a.action_correct] for a in metrics.attacks))
    _write(files["fpr_timeline"], FPR_COLUMNS, metrics.fpr_timeline)
    _write(files["restore"], RESTORE_COLUMNS, (
        [i, r.get("time"), r.get("tables_equal"), r.get("findings"), r.get("ok")]
        for i, r in enumerate(metrics.restore_checks)))
    return files


def _parse(v: str, kind: str):
    if v == "":
        return None
    if kind == "bool":
        return v == "true"
    if kind == "int":
        return int(v)
    if kind == "float":
        return float(v)
    if kind == "ints":
        return [int(x) for x in v.split()]
    return v


def read_attacks(path: Union[str, Path]) -> list[AttackRecord]:
    kinds = {"seed": "int", "implanted_at": "int", "detected_at": "int", "targets": "ints",
             "truth_targets": "ints", "correct": "bool", "action_correct": "bool"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: _parse(v, kinds.get(k, "str")) for k, v in row.items() if k != "latency"}
            vals["targets"] = vals["targets"] or []
            vals["truth_targets"] = vals["truth_targets"] or []
            out.append(AttackRecord(**vals))
    return out


def read_fpr(path: Union[str, Path]) -> list[tuple[int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["time"]), float(r["fpr"])) for r in csv.DictReader(fh)]
