#!/usr/bin/env python3
"""
Synthetic Group-Walk Simulator

Generates trials with a known leader-follower structure. Initiators execute
scripted heading or speed ramps; every follower relaxes its heading and speed
toward the weighted mean of its influencers' states as they were delay_s ago.
Positions are integrated with forward Euler at the sample rate. The coupling
delays are exactly what the correlation analysis should recover.
"""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import CorpusError, SimConfigError
from reports import SCHEMA_VERSION, atomic_write_text, dumps_json
from trajectory_io import POSITIONS, Trial, TrialMeta, ensure_valid, make_trial, write_trial

logger = logging.getLogger(__name__)

PositionLabel = Literal["FL", "FR", "BL", "BR"]
EventKind = Literal["turn_left", "turn_right", "speed_up", "slow_down"]

ALLOWED_IPD_M = (1.0, 2.0, 4.0)
DEFAULT_TURN_DEG = 30.0
DEFAULT_SPEED_STEP_MPS = 0.3

# Sequence instructions: two changes per trial, or none for controls.
SEQUENCE_EVENTS = {
    "L": "turn_left",
    "R": "turn_right",
    "F": "speed_up",
    "S": "slow_down",
}
HEADING_SEQUENCES = ("LL", "RR", "LR", "RL")
SPEED_SEQUENCES = ("SS", "FF", "SF", "FS")
CONTROL_SEQUENCE = "CC"

# Body-frame offsets (forward, left) in units of IPD/2.
_FORMATION_OFFSETS = {"FL": (1.0, 1.0), "FR": (1.0, -1.0), "BL": (-1.0, 1.0), "BR": (-1.0, -1.0)}


class CouplingEdge(BaseModel):
    """Target follows source with a visual-locomotor delay."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    source: str
    target: str
    delay_s: float = Field(0.5, ge=0)
    weight: float = Field(1.0, gt=0)
    gain: Optional[float] = Field(None, gt=0, description="relaxation rate 1/s; None tracks perfectly")


class ScriptEvent(BaseModel):
    """A heading turn (degrees) or speed step (m/s) started by one agent."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    time_s: float = Field(ge=0)
    agent: str
    kind: EventKind
    magnitude: Optional[float] = Field(None, ge=0)

    def signed_amount(self) -> float:
        if self.kind in ("turn_left", "turn_right"):
            amount = math.radians(self.magnitude if self.magnitude is not None else DEFAULT_TURN_DEG)
            return amount if self.kind == "turn_left" else -amount
        amount = self.magnitude if self.magnitude is not None else DEFAULT_SPEED_STEP_MPS
        return amount if self.kind == "speed_up" else -amount

    @property
    def is_turn(self) -> bool:
        return self.kind in ("turn_left", "turn_right")


class SimConfig(BaseModel):
    """Everything needed to reproduce one synthetic trial."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "sim"
    n_agents: int = Field(4, ge=1)
    agents: List[str] = Field(default_factory=list)
    formation: Dict[str, PositionLabel] = Field(default_factory=dict)
    ipd_m: float = 2.0
    coupling: List[CouplingEdge] = Field(default_factory=list)
    script: List[ScriptEvent] = Field(default_factory=list)
    heading_noise_deg: float = Field(0.0, ge=0)
    speed_noise_mps: float = Field(0.0, ge=0)
    initial_speed_mps: float = Field(1.3, gt=0)
    initial_heading_deg: float = 0.0
    ramp_s: float = Field(1.0, gt=0)
    duration_s: float = Field(30.0, gt=0)
    fs_hz: float = Field(60.0, gt=0)
    seed: int = 0
    condition: Optional[Literal["heading", "speed", "control"]] = None
    sequence_tag: Optional[str] = None

    @model_validator(mode="before")
    @classmethod
    def _fill_agents(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        n = int(data.get("n_agents", 4))
        if not data.get("agents"):
            data["agents"] = [f"P{k + 1}" for k in range(n)]
        data.setdefault("n_agents", len(data["agents"]))
        if not data.get("formation") and len(data["agents"]) == 4:
            data["formation"] = dict(zip(data["agents"], POSITIONS))
        return data

    @model_validator(mode="after")
    def _check(self):
        agents = self.agents
        if len(agents) != self.n_agents:
            raise ValueError(f"n_agents={self.n_agents} but {len(agents)} agent ids given")
        if len(set(agents)) != len(agents):
            raise ValueError("agent ids must be unique")
        if set(self.formation) - set(agents):
            raise ValueError(f"formation names unknown agents {sorted(set(self.formation) - set(agents))}")
        if len(agents) == 4 and self.formation and sorted(self.formation.values()) != sorted(POSITIONS):
            raise ValueError("4-agent formation must use FL, FR, BL, BR exactly once")
        if self.ipd_m not in ALLOWED_IPD_M:
            raise ValueError(f"ipd_m must be one of {ALLOWED_IPD_M}, got {self.ipd_m}")

        graph = nx.DiGraph()
        graph.add_nodes_from(agents)
        for edge in self.coupling:
            for agent in (edge.source, edge.target):
                if agent not in agents:
                    raise ValueError(f"coupling names unknown agent {agent!r}")
            if edge.source == edge.target:
                raise ValueError(f"self-coupling on {edge.source!r}")
            graph.add_edge(edge.source, edge.target)
        if not nx.is_directed_acyclic_graph(graph):
            raise ValueError(f"coupling graph has a cycle: {nx.find_cycle(graph)}")

        for event in self.script:
            if event.agent not in agents:
                raise ValueError(f"script event names unknown agent {event.agent!r}")
            if event.time_s >= self.duration_s:
                raise ValueError(f"event at {event.time_s}s is outside the {self.duration_s}s trial")
        return self

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.fs_hz))

    def initiators(self) -> List[str]:
        return sorted({event.agent for event in self.script})


def build_config(data: Union[SimConfig, dict, None] = None, **overrides) -> SimConfig:
    """Validate a config mapping, reporting problems as SimConfigError."""
    if isinstance(data, SimConfig) and not overrides:
        return data
    payload = data.model_dump() if isinstance(data, SimConfig) else dict(data or {})
    payload.update(overrides)
    try:
        return SimConfig.model_validate(payload)
    except ValidationError as e:
        raise SimConfigError(f"invalid simulation config: {e}") from e


def load_sim_configs(path: Union[str, Path]) -> List[SimConfig]:
    """Read one config, a list of configs, or {"configs": [...]} from JSON or YAML."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) if path.suffix in (".yaml", ".yml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise SimConfigError(f"cannot parse {path}: {e}") from e
    if isinstance(data, dict) and "configs" in data:
        data = data["configs"]
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise SimConfigError(f"{path}: expected a config object or a list of configs")
    return [build_config(item) for item in data]


def _ramp(t: np.ndarray, start_s: float, ramp_s: float) -> np.ndarray:
    """Raised-cosine step from 0 to 1 over [start_s, start_s + ramp_s]."""
    u = np.clip((t - start_s) / ramp_s, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


def _script_offsets(config: SimConfig, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, m = len(t), len(config.agents)
    heading = np.zeros((n, m))
    speed = np.zeros((n, m))
    for event in config.script:
        column = config.agents.index(event.agent)
        target = heading if event.is_turn else speed
        target[:, column] += event.signed_amount() * _ramp(t, event.time_s, config.ramp_s)
    return heading, speed


def _start_positions(config: SimConfig) -> np.ndarray:
    half = config.ipd_m / 2.0
    theta0 = math.radians(config.initial_heading_deg)
    forward = np.array([math.cos(theta0), math.sin(theta0)])
    left = np.array([-math.sin(theta0), math.cos(theta0)])
    starts = []
    for k, agent in enumerate(config.agents):
        if agent in config.formation:
            f, l = _FORMATION_OFFSETS[config.formation[agent]]
        else:
            f, l = 0.0, (k - (len(config.agents) - 1) / 2.0) * 2.0
        starts.append(half * (f * forward + l * left))
    return np.array(starts)


def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


def simulate_states(config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Heading (rad) and speed (m/s) of every agent at every sample, shape (n, m).

    Noise is white per sample on top of each agent's own state, and followers
    react to the noisy state they see.
    """
    n, m = config.n_samples, len(config.agents)
    dt = 1.0 / config.fs_hz
    t = np.arange(n) * dt
    index = {agent: k for k, agent in enumerate(config.agents)}

    heading_offset, speed_offset = _script_offsets(config, t)
    rng = np.random.default_rng(config.seed)
    heading_noise = rng.normal(0.0, math.radians(config.heading_noise_deg), size=(n, m))
    speed_noise = rng.normal(0.0, config.speed_noise_mps, size=(n, m))

    influencers: Dict[int, List[Tuple[int, int, float, float]]] = {k: [] for k in range(m)}
    graph = nx.DiGraph()
    graph.add_nodes_from(config.agents)
    for edge in config.coupling:
        delay = int(round(edge.delay_s * config.fs_hz))
        alpha = 1.0 if edge.gain is None else 1.0 - math.exp(-edge.gain * dt)
        influencers[index[edge.target]].append((index[edge.source], delay, edge.weight, alpha))
        graph.add_edge(edge.source, edge.target)
    order = [index[a] for a in nx.lexicographical_topological_sort(graph, key=index.get)]

    theta0 = math.radians(config.initial_heading_deg)
    v0 = config.initial_speed_mps
    clean_heading = np.zeros((n, m))
    clean_speed = np.zeros((n, m))
    heading = np.zeros((n, m))
    speed = np.zeros((n, m))

    for step in range(n):
        for k in order:
            sources = influencers[k]
            if not sources or step == 0:
                clean_heading[step, k] = theta0 + heading_offset[step, k]
                clean_speed[step, k] = v0 + speed_offset[step, k]
            else:
                weights = np.array([w for _, _, w, _ in sources])
                seen = [max(step - delay, 0) for _, delay, _, _ in sources]
                seen_heading = np.array([heading[s, src] for (src, _, _, _), s in zip(sources, seen)])
                seen_speed = np.array([speed[s, src] for (src, _, _, _), s in zip(sources, seen)])
                target_heading = math.atan2(weights @ np.sin(seen_heading), weights @ np.cos(seen_heading))
                target_speed = float(weights @ seen_speed / weights.sum())
                alpha = float(np.mean([a for _, _, _, a in sources]))

                prev = clean_heading[step - 1, k]
                goal = target_heading + heading_offset[step, k]
                clean_heading[step, k] = prev + alpha * _wrap(goal - prev)
                prev_speed = clean_speed[step - 1, k]
                clean_speed[step, k] = prev_speed + alpha * (target_speed + speed_offset[step, k] - prev_speed)

            heading[step, k] = clean_heading[step, k] + heading_noise[step, k]
            speed[step, k] = max(0.0, clean_speed[step, k] + speed_noise[step, k])

    return heading, speed


def simulate_trial(config: Union[SimConfig, dict]) -> Trial:
    """
    Simulate one trial; identical configs (seed included) give identical trials.

    Raises:
        SimConfigError: config fails validation
    """
    config = build_config(config)
    heading, speed = simulate_states(config)
    dt = 1.0 / config.fs_hz

    step = np.stack([speed * np.cos(heading), speed * np.sin(heading)], axis=-1) * dt
    starts = _start_positions(config)
    positions = np.concatenate([starts[None], starts[None] + np.cumsum(step[:-1], axis=0)], axis=0)

    meta = TrialMeta(
        formation=dict(config.formation),
        ipd_m=config.ipd_m,
        condition=config.condition,
        sequence_tag=config.sequence_tag,
    )
    trial = make_trial(
        agents=config.agents,
        sample_rate_hz=config.fs_hz,
        positions=[positions[:, k, :] for k in range(len(config.agents))],
        meta=meta,
        name=config.name,
    )
    logger.debug(f"Simulated {config.name}: {config.n_samples} samples, {len(config.coupling)} couplings")
    return ensure_valid(trial)


def script_for_sequence(tag: str, initiators: Sequence[str], duration_s: float,
                        rng: Optional[np.random.Generator] = None,
                        turn_deg: float = DEFAULT_TURN_DEG,
                        speed_step_mps: float = DEFAULT_SPEED_STEP_MPS) -> List[ScriptEvent]:
    """
    Two changes at self-selected times for a sequence tag such as "LR" or "FS".

    Changes fall near one third and two thirds of the trial, jittered by up to
    a tenth of the duration when rng is given. Initiators take turns.
    """
    tag = tag.upper()
    if tag == CONTROL_SEQUENCE:
        return []
    if len(tag) != 2 or any(c not in SEQUENCE_EVENTS for c in tag):
        raise SimConfigError(f"unknown sequence tag {tag!r}")
    if not initiators:
        raise SimConfigError("a change sequence needs at least one initiator")

    events = []
    for k, code in enumerate(tag):
        time_s = duration_s * (k + 1) / 3.0
        if rng is not None:
            time_s += rng.uniform(-0.1, 0.1) * duration_s
        kind = SEQUENCE_EVENTS[code]
        magnitude = turn_deg if kind in ("turn_left", "turn_right") else speed_step_mps
        events.append(ScriptEvent(time_s=round(time_s, 3), agent=initiators[k % len(initiators)],
                                  kind=kind, magnitude=magnitude))
    return events


def visual_coupling(formation: Dict[str, str], initiator: str, delay_s: float) -> List[CouplingEdge]:
    """
    Couplings where the back row watches the front row.

    A front-row initiator is followed by its row neighbour; the back row
    follows both front agents. A back-row initiator has moved into everyone's
    view: all others follow it, and the other back agent still follows the
    front row as well.
    """
    front = [a for a, p in formation.items() if p in ("FL", "FR")]
    back = [a for a, p in formation.items() if p in ("BL", "BR")]
    edges = []
    if initiator in front:
        for agent in front:
            if agent != initiator:
                edges.append(CouplingEdge(source=initiator, target=agent, delay_s=delay_s))
        for agent in back:
            for leader in front:
                edges.append(CouplingEdge(source=leader, target=agent, delay_s=delay_s))
    else:
        for agent in front:
            edges.append(CouplingEdge(source=initiator, target=agent, delay_s=delay_s))
        for agent in back:
            if agent == initiator:
                continue
            edges.append(CouplingEdge(source=initiator, target=agent, delay_s=delay_s))
            for leader in front:
                edges.append(CouplingEdge(source=leader, target=agent, delay_s=delay_s))
    return edges


def experiment_block(condition: str, seed: int = 0, delay_s: Optional[float] = None,
                     heading_noise_deg: float = 0.5, speed_noise_mps: float = 0.005,
                     duration_s: float = 30.0, initiator_position: Optional[str] = None) -> List[SimConfig]:
    """
    A block of 4 sequences x 3 IPDs (12 trials); the speed block adds 3 controls.

    Formations are shuffled between trials. The initiator sits in the front
    row unless initiator_position pins it.
    """
    if condition not in ("heading", "speed"):
        raise SimConfigError(f"condition must be heading or speed, got {condition!r}")
    rng = np.random.default_rng(seed)
    sequences = HEADING_SEQUENCES if condition == "heading" else SPEED_SEQUENCES
    if delay_s is None:
        delay_s = 1.0 if condition == "heading" else 0.5
    agents = ["P1", "P2", "P3", "P4"]

    plan = [(tag, ipd) for tag in sequences for ipd in ALLOWED_IPD_M]
    if condition == "speed":
        plan += [(CONTROL_SEQUENCE, ipd) for ipd in ALLOWED_IPD_M]

    configs = []
    for k, (tag, ipd) in enumerate(plan):
        shuffled = list(rng.permutation(agents))
        formation = dict(zip(shuffled, POSITIONS))
        if initiator_position is not None:
            initiator = next(a for a, p in formation.items() if p == initiator_position)
        else:
            initiator = next(a for a, p in formation.items() if p == ("FL", "FR")[k % 2])
        control = tag == CONTROL_SEQUENCE
        configs.append(build_config(
            name=f"{condition}_{k + 1:02d}_{tag}_ipd{ipd:g}",
            agents=agents,
            formation=formation,
            ipd_m=ipd,
            coupling=[] if control else [e.model_dump() for e in visual_coupling(formation, initiator, delay_s)],
            script=[e.model_dump() for e in script_for_sequence(tag, [initiator], duration_s, rng)],
            heading_noise_deg=heading_noise_deg,
            speed_noise_mps=speed_noise_mps,
            duration_s=duration_s,
            seed=int(rng.integers(0, 2**31 - 1)),
            condition="control" if control else condition,
            sequence_tag=tag,
        ))
    return configs


def _manifest_entry(config: SimConfig) -> dict:
    return {
        "name": config.name,
        "seed": config.seed,
        "fs_hz": config.fs_hz,
        "formation": dict(config.formation),
        "ipd_m": config.ipd_m,
        "condition": config.condition,
        "sequence_tag": config.sequence_tag,
        "initiators": config.initiators(),
        "coupling": [
            {
                "from": e.source,
                "to": e.target,
                "delay_s": e.delay_s,
                "delay_samples": int(round(e.delay_s * config.fs_hz)),
                "weight": e.weight,
                "gain": e.gain,
            }
            for e in config.coupling
        ],
        "script": [e.model_dump() for e in config.script],
    }


def corpus(configs: Sequence[Union[SimConfig, dict]],
           out_dir: Union[str, Path]) -> Tuple[List[Trial], dict]:
    """
    Simulate every config and write <name>.csv files plus manifest.json.

    Raises:
        CorpusError: duplicate trial names or a failed write
    """
    configs = [build_config(c) for c in configs]
    names = [c.name for c in configs]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise CorpusError(f"duplicate trial names in corpus: {duplicates}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusError(f"cannot create {out_dir}: {e}") from e

    trials = []
    manifest = {"schema_version": SCHEMA_VERSION, "trials": {}}
    for config in configs:
        trial = simulate_trial(config)
        file_name = f"{config.name}.csv"
        try:
            atomic_write_text(out_dir / file_name, write_trial(trial))
        except OSError as e:
            raise CorpusError(f"cannot write {out_dir / file_name}: {e}") from e
        manifest["trials"][file_name] = _manifest_entry(config)
        trials.append(trial)

    try:
        atomic_write_text(out_dir / "manifest.json", dumps_json(manifest))
    except OSError as e:
        raise CorpusError(f"cannot write manifest in {out_dir}: {e}") from e
    logger.info(f"Wrote {len(trials)} simulated trials to {out_dir}")
    return trials, manifest


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')

    demo = build_config(
        name="demo_lead",
        coupling=[{"source": "P1", "target": "P4", "delay_s": 0.5}],
        script=[{"time_s": 10.0, "agent": "P1", "kind": "turn_left"}],
        duration_s=20.0,
    )
    heading, _ = simulate_states(demo)
    shift = int(round(0.5 * demo.fs_hz))
    gap = np.max(np.abs(heading[shift:, 3] - heading[:-shift, 0]))
    print("\n=== Simulator self-check ===")
    print(f"P4 heading vs P1 shifted by {shift} samples: max difference {gap:.3e} rad")
