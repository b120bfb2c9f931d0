#!/usr/bin/env python3
"""
Report Artifacts

Serializers and readers for everything the analysis writes: kinematics and
heatmap CSV, leadership and network JSON, DOT graphs and aggregate tables.
Floats are written with 9 significant digits and no artifact carries a
timestamp, so identical runs produce identical bytes. Files are written to a
temporary sibling and renamed into place.
"""

import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from jsonschema import Draft7Validator
from jsonschema.exceptions import ValidationError as SchemaValidationError

from errors import ReportError
from lagcorr import CorrelationMap
from leadership import AggregateReport, LeadershipScore
from network import InfluenceNetwork, WindowNetworks
from preprocess import KinematicSeries
from trajectory_io import Trial

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
FLOAT_FORMAT = "%.9g"
KINEMATICS_COLUMNS = ["time", "id", "x", "y", "heading_x", "heading_y", "speed"]
HEATMAP_COLUMNS = ["t", "tau", "value"]
AGGREGATE_COLUMNS = ["group", "mean", "sem", "n"]

_EDGE = {
    "type": "object",
    "required": ["from", "to", "weight"],
    "properties": {
        "from": {"type": "string"},
        "to": {"type": "string"},
        "weight": {"type": "number", "minimum": 0, "maximum": 1},
    },
}

LEADERSHIP_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "trial", "mode", "agents", "meta", "params", "scores"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "trial": {"type": "string"},
        "mode": {"enum": ["heading", "speed"]},
        "agents": {"type": "array", "items": {"type": "string"}},
        "meta": {
            "type": "object",
            "required": ["formation", "ipd_m", "condition", "sequence_tag"],
        },
        "params": {"type": "object"},
        "scores": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["index_percent", "per_pair_fractions", "defined_samples", "partial"],
                "properties": {
                    "index_percent": {"type": "number", "minimum": 0, "maximum": 100},
                    "per_pair_fractions": {
                        "type": "object",
                        "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                    "defined_samples": {"type": "integer", "minimum": 0},
                    "partial": {"type": "boolean"},
                    "undefined_partners": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "unscored": {"type": "array", "items": {"type": "string"}},
    },
}

NETWORK_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "trial", "mode", "agents", "params", "windows"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "trial": {"type": "string"},
        "mode": {"enum": ["heading", "speed"]},
        "agents": {"type": "array", "items": {"type": "string"}},
        "params": {"type": "object"},
        "windows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["index", "start", "end", "nodes", "edges", "raw_edges", "removed_by_dpi"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "start": {"type": "integer", "minimum": 0},
                    "end": {"type": "integer", "minimum": 0},
                    "nodes": {"type": "array", "items": {"type": "string"}},
                    "edges": {"type": "array", "items": _EDGE},
                    "raw_edges": {"type": "array", "items": _EDGE},
                    "removed_by_dpi": {"type": "array"},
                    "undefined_pairs": {"type": "array"},
                },
            },
        },
    },
}


def round_sig(value: float, digits: int = 9) -> Optional[float]:
    """Round to significant digits; non-finite values become None."""
    value = float(value)
    if not math.isfinite(value):
        return None
    return float(f"{value:.{digits}g}")


def _rounded(obj):
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return round_sig(obj)
    if isinstance(obj, Mapping):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_rounded(obj), indent=2, allow_nan=False) + "\n"


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write via a temporary file in the same directory, then rename over path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return path


def header_lines(params: Mapping) -> List[str]:
    return [f"# {key}={_header_value(value)}" for key, value in params.items()]


def _header_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value
    return str(value)


def _csv_text(comments: Sequence[str], table: pd.DataFrame) -> str:
    buffer = io.StringIO()
    for line in comments:
        buffer.write(line + "\n")
    table.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, na_rep="", lineterminator="\n")
    return buffer.getvalue()


def kinematics_csv(trial: Trial, kinematics: Mapping[str, KinematicSeries], params: Mapping) -> str:
    """Long table of positions, heading unit vectors and speeds; undefined headings are empty."""
    frames = []
    times = trial.times()
    for agent in trial.agents:
        series = kinematics[agent]
        pos = trial.position_of(agent)
        frames.append(pd.DataFrame({
            "time": times,
            "id": agent,
            "x": pos[:, 0],
            "y": pos[:, 1],
            "heading_x": series.heading[:, 0],
            "heading_y": series.heading[:, 1],
            "speed": series.speed,
        }))
    table = pd.concat(frames, ignore_index=True).sort_values(["time"], kind="stable")
    return _csv_text([f"# trial={trial.name}"] + header_lines(params), table[KINEMATICS_COLUMNS])


def heatmap_csv(cmap: CorrelationMap, params: Mapping) -> str:
    """Defined (t, tau) cells, t and tau in samples."""
    rows, cols = np.nonzero(cmap.defined)
    table = pd.DataFrame({
        "t": rows,
        "tau": cmap.taus[cols],
        "value": cmap.values[rows, cols],
    })
    comments = [
        f"# from={cmap.pair[0]}",
        f"# to={cmap.pair[1]}",
        f"# mode={cmap.mode}",
        f"# fs={_header_value(cmap.sample_rate_hz)}",
        f"# omega={cmap.omega}",
        f"# max_lag={int(cmap.taus[-1])}",
        f"# n_samples={cmap.values.shape[0]}",
    ] + header_lines(params)
    return _csv_text(comments, table[HEATMAP_COLUMNS])


def read_commented_csv(path: Union[str, Path]) -> Tuple[Dict[str, str], pd.DataFrame]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportError(f"cannot read {path}: {e}") from e
    header: Dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line.lstrip("#").strip().partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise ReportError(f"{path} has no table")
    return header, pd.read_csv(io.StringIO("\n".join(body)), keep_default_na=True)


def read_heatmap_csv(path: Union[str, Path]) -> CorrelationMap:
    """Rebuild a CorrelationMap from heatmap CSV; cells absent from the file are undefined."""
    header, table = read_commented_csv(path)
    try:
        max_lag = int(header["max_lag"])
        n = int(header["n_samples"])
        taus = np.arange(-max_lag, max_lag + 1)
        values = np.full((n, taus.size), np.nan)
        values[table["t"].to_numpy(dtype=int), table["tau"].to_numpy(dtype=int) + max_lag] = table["value"].to_numpy(dtype=float)
        values.setflags(write=False)
        return CorrelationMap(
            pair=(header["from"], header["to"]),
            mode=header["mode"],
            taus=taus,
            values=values,
            omega=int(header["omega"]),
            sample_rate_hz=float(header["fs"]),
        )
    except (KeyError, ValueError, IndexError) as e:
        raise ReportError(f"malformed heatmap file {path}: {e}") from e


def read_kinematics_csv(path: Union[str, Path]) -> Tuple[Dict[str, str], pd.DataFrame]:
    header, table = read_commented_csv(path)
    missing = set(KINEMATICS_COLUMNS) - set(table.columns)
    if missing:
        raise ReportError(f"{path} lacks columns {sorted(missing)}")
    table["id"] = table["id"].astype(str)
    return header, table


def _score_entry(score: LeadershipScore) -> dict:
    return {
        "index_percent": score.index_percent,
        "per_pair_fractions": dict(score.per_pair_fractions),
        "defined_samples": score.defined_samples,
        "partial": score.partial,
        "undefined_partners": list(score.undefined_partners),
    }


def _validated(report: dict, schema: dict, what: str) -> dict:
    try:
        Draft7Validator(schema).validate(report)
    except SchemaValidationError as e:
        raise ReportError(f"{what} report does not match schema {SCHEMA_VERSION}: {e.message}") from e
    return report


def leadership_report(trial: Trial, mode: str, scores: Mapping[str, LeadershipScore],
                      params: Mapping) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "trial": trial.name,
        "mode": mode,
        "agents": list(trial.agents),
        "meta": trial.meta.as_dict(),
        "params": dict(params),
        "scores": {agent: _score_entry(scores[agent]) for agent in trial.agents if agent in scores},
        "unscored": [agent for agent in trial.agents if agent not in scores],
    }
    return _validated(_rounded(report), LEADERSHIP_SCHEMA, "leadership")


def _edge_list(edges: Mapping[Tuple[str, str], float]) -> List[dict]:
    return [{"from": i, "to": j, "weight": w} for (i, j), w in edges.items()]


def network_report(trial: Trial, mode: str, windows: Sequence[WindowNetworks], params: Mapping) -> dict:
    entries = []
    for index, stage in enumerate(windows):
        start, end = stage.final.window
        entries.append({
            "index": index,
            "start": start,
            "end": end,
            "nodes": list(stage.final.nodes),
            "edges": _edge_list(stage.final.edges),
            "dpi_edges": _edge_list(stage.pruned.edges),
            "raw_edges": _edge_list(stage.raw.edges),
            "removed_by_dpi": [list(pair) for pair in stage.removed_by_dpi],
            "undefined_pairs": [list(pair) for pair in stage.raw.undefined],
        })
    report = {
        "schema_version": SCHEMA_VERSION,
        "trial": trial.name,
        "mode": mode,
        "agents": list(trial.agents),
        "params": dict(params),
        "windows": entries,
    }
    return _validated(_rounded(report), NETWORK_SCHEMA, "network")


def network_dot(trial_name: str, mode: str, windows: Sequence[WindowNetworks],
                params: Optional[Mapping] = None) -> str:
    """One digraph with a cluster per window; edge labels and pen widths follow weight."""
    lines = [f'digraph "{trial_name} {mode}" {{']
    if params:
        record = "; ".join(f"{key}={_header_value(value)}" for key, value in params.items())
        lines.append(f'    comment="{record}";')
    lines.append('    rankdir=TB;')
    lines.append('    node [shape=circle, style=filled, fillcolor=lightgray];')
    for index, stage in enumerate(windows):
        net = stage.final
        start, end = net.window
        lines.append(f'    subgraph cluster_w{index} {{')
        lines.append(f'        label="window {index + 1} [{start}, {end})";')
        for node in net.nodes:
            lines.append(f'        "w{index}_{node}" [label="{node}"];')
        for (i, j), w in net.edges.items():
            weight = FLOAT_FORMAT % w
            width = FLOAT_FORMAT % (0.5 + 4.0 * w)
            lines.append(f'        "w{index}_{i}" -> "w{index}_{j}" [label="{weight}", penwidth={width}];')
        lines.append('    }')
    lines.append('}')
    return "\n".join(lines) + "\n"


def aggregate_csv(report: AggregateReport, params: Mapping) -> str:
    table = pd.DataFrame(
        [(group, cell.mean_percent, cell.sem_percent, cell.n_trials) for group, cell in report.cells.items()],
        columns=AGGREGATE_COLUMNS,
    )
    comments = [f"# grouping={report.grouping}", f"# skipped={report.skipped}"] + header_lines(params)
    return _csv_text(comments, table)


def _read_json(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ReportError(f"cannot read {path}: {e}") from e


def read_leadership_report(path: Union[str, Path]) -> dict:
    return _validated(_read_json(path), LEADERSHIP_SCHEMA, f"leadership ({path})")


def read_network_report(path: Union[str, Path]) -> dict:
    return _validated(_read_json(path), NETWORK_SCHEMA, f"network ({path})")


def scores_from_report(report: Mapping) -> List[Tuple[dict, LeadershipScore]]:
    """(meta, score) pairs ready for leadership.aggregate()."""
    meta = dict(report["meta"])
    pairs = []
    for agent, entry in report["scores"].items():
        pairs.append((meta, LeadershipScore(
            agent=agent,
            index_percent=float(entry["index_percent"]),
            per_pair_fractions={k: float(v) for k, v in entry["per_pair_fractions"].items()},
            defined_samples=int(entry["defined_samples"]),
            partial=bool(entry["partial"]),
            undefined_partners=tuple(entry.get("undefined_partners", ())),
        )))
    return pairs


def networks_from_report(report: Mapping, stage: str = "edges") -> List[InfluenceNetwork]:
    """Networks of one stage (edges, dpi_edges or raw_edges) from a network report."""
    networks = []
    for entry in report["windows"]:
        edges = entry.get(stage)
        if edges is None:
            raise ReportError(f"network report has no {stage!r} stage")
        networks.append(InfluenceNetwork(
            window=(int(entry["start"]), int(entry["end"])),
            nodes=tuple(entry["nodes"]),
            edges={(e["from"], e["to"]): float(e["weight"]) for e in edges},
            undefined=tuple(tuple(p) for p in entry.get("undefined_pairs", ())),
        ))
    return networks
