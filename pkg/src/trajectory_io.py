#!/usr/bin/env python3
"""
Trajectory Loading Service

Reads multi-agent 2D head trajectories from long CSV files, checks them against
the Trial invariants and trims endpoint samples. Every later stage assumes a
Trial that passed through here.
"""

import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import (
    TrialParseError,
    TrialRangeError,
    TrialStructureError,
    TrialTimingError,
)
from settings import REFERENCE_OMEGA, default_omega

logger = logging.getLogger(__name__)

POSITIONS = ("FL", "FR", "BL", "BR")
CONDITIONS = ("heading", "speed", "control")
CSV_HEADER = "time,id,x,y"
TIME_TOLERANCE_S = 1e-6
MAX_PLAUSIBLE_SPEED_MPS = 10.0

# Two full windows (2*omega+1 samples each) at the largest omega, at 60 Hz.
MIN_SAMPLES = 2 * (2 * max(REFERENCE_OMEGA.values()) + 1)


def min_samples(sample_rate_hz: float) -> int:
    """Shortest usable trial at this rate; omega scales with fs."""
    if not (sample_rate_hz > 0 and math.isfinite(sample_rate_hz)):
        return MIN_SAMPLES
    return 2 * (2 * max(default_omega(mode, sample_rate_hz) for mode in REFERENCE_OMEGA) + 1)


@dataclass(frozen=True)
class TrialMeta:
    """Formation and task labels attached to a trial."""
    formation: Dict[str, str] = field(default_factory=dict)
    ipd_m: Optional[float] = None
    condition: Optional[str] = None
    sequence_tag: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "formation": dict(self.formation),
            "ipd_m": self.ipd_m,
            "condition": self.condition,
            "sequence_tag": self.sequence_tag,
        }


@dataclass(frozen=True)
class Trial:
    """Per-agent (x, y) positions in metres sampled at a fixed rate."""
    agents: Tuple[str, ...]
    sample_rate_hz: float
    positions: Tuple[np.ndarray, ...]
    meta: TrialMeta = field(default_factory=TrialMeta)
    name: str = "trial"
    start_time_s: float = 0.0

    @property
    def n_samples(self) -> int:
        return int(self.positions[0].shape[0]) if self.positions else 0

    def position_of(self, agent: str) -> np.ndarray:
        return self.positions[self.agents.index(agent)]

    def times(self) -> np.ndarray:
        return self.start_time_s + np.arange(self.n_samples) / self.sample_rate_hz


@dataclass(frozen=True)
class Violation:
    """One diagnostic finding from validate()."""
    kind: str
    message: str
    agent: Optional[str] = None
    index: Optional[int] = None
    severity: str = "error"


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def make_trial(agents, sample_rate_hz: float, positions, meta: Optional[TrialMeta] = None,
               name: str = "trial", start_time_s: float = 0.0) -> Trial:
    """Build a Trial from array-likes, copying and freezing the coordinates."""
    return Trial(
        agents=tuple(str(a) for a in agents),
        sample_rate_hz=float(sample_rate_hz),
        positions=tuple(_frozen(p) for p in positions),
        meta=meta or TrialMeta(),
        name=name,
        start_time_s=float(start_time_s),
    )


def validate(trial: Trial) -> List[Violation]:
    """
    Check a trial against its invariants.

    Returns an empty list when the trial is usable. Implausible speed bursts
    are reported with severity ``warning``; everything else is an error.
    """
    found: List[Violation] = []

    if not (trial.sample_rate_hz > 0 and math.isfinite(trial.sample_rate_hz)):
        found.append(Violation("sample_rate", f"sample rate must be positive, got {trial.sample_rate_hz}"))

    seen = set()
    for agent in trial.agents:
        if agent in seen:
            found.append(Violation("duplicate_agent", f"agent id {agent!r} appears more than once", agent=agent))
        seen.add(agent)

    if len(trial.positions) != len(trial.agents):
        found.append(Violation("structure", f"{len(trial.agents)} agents but {len(trial.positions)} position series"))
        return found

    needed = min_samples(trial.sample_rate_hz)
    lengths = {agent: int(np.shape(pos)[0]) for agent, pos in zip(trial.agents, trial.positions)}
    if len(set(lengths.values())) > 1:
        found.append(Violation("ragged", f"agent series lengths differ: {lengths}"))

    for agent, pos in zip(trial.agents, trial.positions):
        pos = np.asarray(pos, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            found.append(Violation("structure", f"positions must be (n, 2), got {pos.shape}", agent=agent))
            continue
        if pos.shape[0] < needed:
            found.append(Violation("too_short", f"{pos.shape[0]} samples, need at least {needed}", agent=agent))
        bad = np.flatnonzero(~np.isfinite(pos).all(axis=1))
        for index in bad:
            found.append(Violation("non_finite", f"non-finite coordinate at sample {index}", agent=agent, index=int(index)))

        if trial.sample_rate_hz > 0 and pos.shape[0] > 1:
            step_speed = np.linalg.norm(np.diff(pos, axis=0), axis=1) * trial.sample_rate_hz
            burst = np.isfinite(step_speed) & (step_speed > MAX_PLAUSIBLE_SPEED_MPS)
            starts = np.flatnonzero(burst & ~np.concatenate([[False], burst[:-1]]))
            for index in starts:
                found.append(Violation(
                    "speed_burst",
                    f"implausible speed {step_speed[index]:.1f} m/s at sample {index}",
                    agent=agent, index=int(index), severity="warning",
                ))

    formation = trial.meta.formation
    if formation:
        unknown = sorted(set(formation) - set(trial.agents))
        if unknown:
            found.append(Violation("formation", f"formation names unknown agents {unknown}"))
        labels = [formation.get(a) for a in trial.agents if a in formation]
        if any(label not in POSITIONS for label in labels):
            found.append(Violation("formation", f"formation labels must be in {POSITIONS}, got {labels}"))
        if len(trial.agents) == 4 and sorted(formation.get(a, "") for a in trial.agents) != sorted(POSITIONS):
            found.append(Violation("formation", "4-agent formation must map onto FL, FR, BL, BR exactly once"))

    if trial.meta.condition is not None and trial.meta.condition not in CONDITIONS:
        found.append(Violation("condition", f"condition must be one of {CONDITIONS}"))

    return found


_ERROR_TYPES = {
    "sample_rate": TrialTimingError,
    "too_short": TrialRangeError,
}


def ensure_valid(trial: Trial) -> Trial:
    """Raise on the first error-severity violation, log warnings, return the trial."""
    for violation in validate(trial):
        where = f" ({violation.agent})" if violation.agent else ""
        if violation.severity == "warning":
            logger.warning(f"{trial.name}{where}: {violation.message}")
            continue
        error_type = _ERROR_TYPES.get(violation.kind, TrialStructureError)
        raise error_type(f"{trial.name}{where}: {violation.message}")
    return trial


def _parse_comment(text: str, line_number: int, header: dict):
    body = text.lstrip("#").strip()
    if "=" not in body:
        return
    key, _, value = body.partition("=")
    key, value = key.strip(), value.strip()
    try:
        if key == "fs":
            header["fs"] = float(value)
        elif key.startswith("position:"):
            if value not in POSITIONS:
                raise ValueError(f"position must be one of {POSITIONS}")
            header["formation"][key.split(":", 1)[1].strip()] = value
        elif key == "ipd":
            header["ipd_m"] = float(value)
        elif key == "condition":
            if value not in CONDITIONS:
                raise ValueError(f"condition must be one of {CONDITIONS}")
            header["condition"] = value
        elif key == "sequence":
            header["sequence_tag"] = value
        elif key == "name":
            header["name"] = value
        else:
            logger.debug(f"Ignoring unknown header key {key!r} on line {line_number}")
    except ValueError as e:
        raise TrialParseError(f"bad header comment {text!r}: {e}", line_number) from e


def load_trial(source: Union[bytes, str, IO], format: str = "long_csv",
               name: Optional[str] = None) -> Trial:
    """
    Parse a long CSV trajectory stream into a validated Trial.

    Args:
        source: UTF-8 bytes, text, or a readable binary/text stream
        format: only ``long_csv`` is supported
        name: trial name; defaults to a ``# name=`` comment or ``trial``

    Raises:
        TrialParseError: malformed row (with its line number)
        TrialStructureError: ragged agents or duplicate samples
        TrialTimingError: non-uniform time base or rate mismatch
    """
    if format != "long_csv":
        raise TrialParseError(f"unsupported trajectory format {format!r}")

    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8-sig")
        except UnicodeDecodeError as e:
            raise TrialParseError(f"input is not UTF-8: {e}") from e
    source = source.removeprefix("\ufeff")

    header = {"formation": {}}
    rows: List[List[str]] = []
    line_numbers: List[int] = []
    header_seen = False

    for line_number, raw in enumerate(source.splitlines(), start=1):
        text = raw.strip()
        if not text:
            continue
        if text.startswith("#"):
            _parse_comment(text, line_number, header)
            continue
        if not header_seen:
            if text.replace(" ", "") != CSV_HEADER:
                raise TrialParseError(f"expected header {CSV_HEADER!r}, got {text!r}", line_number)
            header_seen = True
            continue
        fields = [f.strip() for f in text.split(",")]
        if len(fields) != 4:
            raise TrialParseError(f"expected 4 fields, got {len(fields)}", line_number)
        if not fields[1]:
            raise TrialParseError("empty agent id", line_number)
        rows.append(fields)
        line_numbers.append(line_number)

    if not header_seen:
        raise TrialParseError(f"missing header {CSV_HEADER!r}")
    if not rows:
        raise TrialStructureError("trajectory file has no samples")

    table = pd.DataFrame(rows, columns=["time", "id", "x", "y"])
    table["line"] = line_numbers
    for column in ("time", "x", "y"):
        numeric = pd.to_numeric(table[column], errors="coerce")
        bad = ~np.isfinite(numeric.to_numpy(dtype=float))
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            raise TrialParseError(
                f"{column} value {table[column].iloc[first]!r} is not a finite number",
                int(table["line"].iloc[first]),
            )
        table[column] = numeric.astype(float)

    agents = list(dict.fromkeys(table["id"]))
    per_agent = {
        agent: group.sort_values("time", kind="stable")
        for agent, group in table.groupby("id", sort=False)
    }

    lengths = {agent: len(per_agent[agent]) for agent in agents}
    if len(set(lengths.values())) > 1:
        raise TrialStructureError(f"ragged agent series: {lengths}")

    reference = per_agent[agents[0]]["time"].to_numpy()
    for agent in agents:
        times = per_agent[agent]["time"].to_numpy()
        duplicated = np.flatnonzero(np.diff(times) == 0)
        if duplicated.size:
            line = int(per_agent[agent]["line"].iloc[duplicated[0] + 1])
            raise TrialStructureError(f"duplicate time stamp for agent {agent!r} (line {line})")
        mismatch = np.abs(times - reference) > TIME_TOLERANCE_S
        if mismatch.any():
            raise TrialTimingError(f"agent {agent!r} time stamps do not match agent {agents[0]!r}")

    if len(reference) < 2:
        raise TrialRangeError("need at least two samples per agent")

    steps = np.diff(reference)
    dt = float(np.median(steps))
    worst = float(np.max(np.abs(steps - dt)))
    if worst > TIME_TOLERANCE_S:
        raise TrialTimingError(f"non-uniform time base: step deviates from {dt:.6g}s by {worst:.3g}s")

    if "fs" in header:
        sample_rate = header["fs"]
        if not sample_rate > 0:
            raise TrialTimingError(f"declared fs must be positive, got {sample_rate}")
        if abs(dt - 1.0 / sample_rate) > TIME_TOLERANCE_S:
            raise TrialTimingError(f"declared fs={sample_rate:g} Hz but samples are {dt:.6g}s apart")
    else:
        sample_rate = round(1.0 / dt, 6)

    meta = TrialMeta(
        formation=dict(header["formation"]),
        ipd_m=header.get("ipd_m"),
        condition=header.get("condition"),
        sequence_tag=header.get("sequence_tag"),
    )
    trial = make_trial(
        agents=agents,
        sample_rate_hz=sample_rate,
        positions=[per_agent[a][["x", "y"]].to_numpy() for a in agents],
        meta=meta,
        name=name or header.get("name", "trial"),
        start_time_s=float(reference[0]),
    )
    logger.info(f"Loaded {trial.name}: {len(agents)} agents x {trial.n_samples} samples at {sample_rate:g} Hz")
    return ensure_valid(trial)


def load_trial_file(path: Union[str, Path]) -> Trial:
    """Load a trial from disk, naming it after the file stem."""
    path = Path(path)
    with open(path, "rb") as f:
        return load_trial(f, name=path.stem)


def write_trial(trial: Trial) -> str:
    """Serialize a trial to long CSV text; load_trial() reads it back unchanged."""
    lines = [f"# name={trial.name}", f"# fs={trial.sample_rate_hz!r}"]
    for agent in trial.agents:
        if agent in trial.meta.formation:
            lines.append(f"# position:{agent}={trial.meta.formation[agent]}")
    if trial.meta.ipd_m is not None:
        lines.append(f"# ipd={trial.meta.ipd_m!r}")
    if trial.meta.condition is not None:
        lines.append(f"# condition={trial.meta.condition}")
    if trial.meta.sequence_tag is not None:
        lines.append(f"# sequence={trial.meta.sequence_tag}")

    n = trial.n_samples
    times = trial.times()
    table = pd.DataFrame({
        "time": np.repeat(times, len(trial.agents)),
        "id": np.tile(np.array(trial.agents, dtype=object), n),
        "x": np.stack([p[:, 0] for p in trial.positions], axis=1).ravel(),
        "y": np.stack([p[:, 1] for p in trial.positions], axis=1).ravel(),
    })
    buffer = io.StringIO()
    buffer.write("\n".join(lines) + "\n")
    table.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return buffer.getvalue()


def truncate(trial: Trial, head_s: float, tail_s: float) -> Trial:
    """
    Drop round(head_s*fs) samples from the start and round(tail_s*fs) from the end.

    Raises:
        TrialRangeError: negative durations or fewer than min_samples(fs) left
    """
    if head_s < 0 or tail_s < 0:
        raise TrialRangeError(f"truncation must be non-negative, got head={head_s}, tail={tail_s}")
    head = int(round(head_s * trial.sample_rate_hz))
    tail = int(round(tail_s * trial.sample_rate_hz))
    remaining = trial.n_samples - head - tail
    needed = min_samples(trial.sample_rate_hz)
    if remaining < needed:
        raise TrialRangeError(
            f"truncating {head}+{tail} samples leaves {max(remaining, 0)}, need at least {needed}"
        )
    if head == 0 and tail == 0:
        return trial

    stop = trial.n_samples - tail
    logger.debug(f"Truncated {trial.name}: -{head} head, -{tail} tail samples")
    return replace(
        trial,
        positions=tuple(_frozen(p[head:stop]) for p in trial.positions),
        start_time_s=trial.start_time_s + head / trial.sample_rate_hz,
    )
