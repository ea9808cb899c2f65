"""Versioned file formats: scenarios, traces, checkpoints, reports.

JSON carries all human-facing data; checkpoint tensors travel as base64 of
their raw little-endian 64-bit values for bit-exact round-trips.  Floats in
JSON use Python's shortest round-trip representation, which is never lossy.
Readers reject unsupported major versions outright rather than guessing.
"""

from __future__ import annotations

import base64
import csv
import json
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import FormatVersionError
from .nn.model import PolicyConfig, PolicyParams
from .nn.autodiff import Tensor
from .rng import RNG_ALGORITHM
from .scenario import FuelModel, RoadNetwork, Scenario, TaskPoint, TeamConfig

FORMAT_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def _check_version(doc: dict, expected_kind: str):
    version = doc.get("version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported {expected_kind} version {version!r}; this build reads {FORMAT_VERSION}"
        )
    if doc.get("kind", expected_kind) != expected_kind:
        raise FormatVersionError(f"expected a {expected_kind} file, got {doc.get('kind')!r}")


# -- scenarios -------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "scenario",
        "rng": RNG_ALGORITHM,
        "area_side_m": scenario.area_side_m,
        "seed": scenario.seed,
        "depot": scenario.depot_road_node,
        "fuel": {
            "c3": scenario.fuel.c3,
            "c2": scenario.fuel.c2,
            "c1": scenario.fuel.c1,
            "c0": scenario.fuel.c0,
            "capacity_kj": scenario.fuel.capacity_kj,
        },
        "team": {
            "num_uavs": scenario.team.num_uavs,
            "num_ugvs": scenario.team.num_ugvs,
            "v_a": scenario.team.v_a,
            "v_g": scenario.team.v_g,
            "recharge_time_s": scenario.team.recharge_time_s,
        },
        "road": {
            "nodes": [[float(x), float(y)] for x, y in scenario.road.nodes],
            "edges": [[int(i), int(j)] for i, j in scenario.road.edges],
        },
        "tasks": [
            {"id": t.id, "x": t.x, "y": t.y, "kind": t.kind} for t in scenario.task_points
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    _check_version(doc, "scenario")
    road = RoadNetwork(
        [(x, y) for x, y in doc["road"]["nodes"]],
        [(i, j) for i, j in doc["road"]["edges"]],
    )
    fuel = FuelModel(**doc["fuel"])
    team = TeamConfig(**doc["team"])
    tasks = [TaskPoint(t["id"], t["x"], t["y"], t["kind"]) for t in doc["tasks"]]
    return Scenario(
        doc["area_side_m"], doc["depot"], tasks, road, fuel, team, doc["seed"]
    )


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(_dumps(scenario_to_dict(scenario)))


def load_scenario(path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))


# -- traces ----------------------------------------------------------------------


def save_trace(records: Sequence[dict], meta: dict, path) -> None:
    header = {
        "version": FORMAT_VERSION,
        "kind": "trace",
        **{k: meta[k] for k in sorted(meta)},
    }
    lines = [_dumps(header)]
    lines += [_dumps(r) for r in records]
    Path(path).write_text("".join(lines))


def load_trace(path) -> Tuple[dict, List[dict]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatVersionError("empty trace file")
    header = json.loads(lines[0])
    _check_version(header, "trace")
    records = [json.loads(line) for line in lines[1:] if line.strip()]
    return header, records


def trace_actions(records: Sequence[dict]) -> List[Tuple[str, int]]:
    return [(r["action_kind"], int(r["action_node"])) for r in records]


# -- checkpoints -----------------------------------------------------------------


def checkpoint_to_dict(params: PolicyParams, meta: Optional[dict] = None) -> dict:
    cfg = params.config
    tensors = []
    for name in params.names():
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        tensors.append(
            {
                "name": name,
                "shape": list(data.shape),
                "dtype": "<f8",
                "data": base64.b64encode(data.tobytes()).decode("ascii"),
            }
        )
    return {
        "version": FORMAT_VERSION,
        "kind": "checkpoint",
        "rng": RNG_ALGORITHM,
        "config": {
            "d_h": cfg.d_h,
            "n_heads": cfg.n_heads,
            "n_layers": cfg.n_layers,
            "c_p": cfg.c_p,
            "d_ff": cfg.d_ff,
            "t_norm_s": cfg.t_norm_s,
            "leaky_slope": cfg.leaky_slope,
        },
        "meta": meta or {},
        "tensors": tensors,
    }


def checkpoint_from_dict(doc: dict) -> PolicyParams:
    _check_version(doc, "checkpoint")
    cfg = PolicyConfig(**doc["config"])
    tensors = {}
    for entry in doc["tensors"]:
        if entry["dtype"] != "<f8":
            raise FormatVersionError(f"unsupported tensor dtype {entry['dtype']!r}")
        raw = base64.b64decode(entry["data"])
        data = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        tensors[entry["name"]] = Tensor(data, requires_grad=True)
    return PolicyParams(cfg, tensors)


def save_checkpoint(params: PolicyParams, path, meta: Optional[dict] = None) -> None:
    Path(path).write_text(_dumps(checkpoint_to_dict(params, meta)))


def load_checkpoint(path) -> PolicyParams:
    return checkpoint_from_dict(json.loads(Path(path).read_text()))


# -- reports and logs ------------------------------------------------------------

REPORT_COLUMNS = [
    "name",
    "kind",
    "obj_mean_min",
    "obj_std_min",
    "gap_pct",
    "time_mean_s",
    "win_rate_pct",
    "crashes",
]


def save_report_json(report, path) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "eval_report",
        "methods": report.methods,
        "matrix": report.matrix,
        "instance_seeds": report.instance_seeds,
        "crashes": report.crashes,
    }
    Path(path).write_text(_dumps(doc))


def save_report_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report.methods:
            writer.writerow({k: row[k] for k in REPORT_COLUMNS})


TRAINING_LOG_COLUMNS = [
    "epoch",
    "batch",
    "mean_return_min",
    "failure_rate",
    "lr",
    "p_value",
    "wall_ms",
]


def save_training_log(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAINING_LOG_COLUMNS)
        writer.writeheader()
        for row in history:
            out = dict(row)
            if out.get("p_value") is not None and np.isnan(out["p_value"]):
                out["p_value"] = ""
            writer.writerow({k: out[k] for k in TRAINING_LOG_COLUMNS})
