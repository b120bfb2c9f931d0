#!/usr/bin/env python3
"""
Leadership Scoring Service

Turns delay profiles into pairwise lead fractions and the individual
leadership index (percent of time an agent leads, averaged over partners),
and aggregates indices across trials into mean and SEM tables.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import UndefinedScoreError
from lagcorr import DelayProfile, Pair, pair_profile

logger = logging.getLogger(__name__)

GROUPINGS = ("by_position", "by_agent", "by_ipd", "by_sequence")


@dataclass(frozen=True)
class LeadershipScore:
    """Individual leadership index of one agent in one trial."""
    agent: str
    index_percent: float
    per_pair_fractions: Dict[str, float]
    defined_samples: int
    partial: bool = False
    undefined_partners: Tuple[str, ...] = ()


@dataclass(frozen=True)
class AggregateCell:
    mean_percent: float
    sem_percent: float
    n_trials: int


@dataclass
class AggregateReport:
    """Per-group mean and standard error of the leadership index."""
    grouping: str
    cells: Dict[str, AggregateCell] = field(default_factory=dict)
    skipped: int = 0
    warnings: List[str] = field(default_factory=list)


def lead_fraction(profile: DelayProfile) -> float:
    """
    Share of non-zero defined tau* samples that are positive.

    Zero lags are unassigned and excluded; a profile of only zeros scores 0.

    Raises:
        UndefinedScoreError: profile has no defined sample
    """
    if profile.defined_count == 0:
        raise UndefinedScoreError(f"delay profile {profile.pair[0]}->{profile.pair[1]} has no defined sample")
    taus = profile.tau_star[profile.defined_mask]
    assigned = int(np.count_nonzero(taus))
    if assigned == 0:
        return 0.0
    return float(np.count_nonzero(taus > 0)) / assigned


def leadership_index(profiles: Mapping[Pair, DelayProfile], agent: str,
                     agents: Optional[Sequence[str]] = None) -> LeadershipScore:
    """
    Mean lead fraction of ``agent`` over every partner, as a percentage.

    Partners whose profile is missing or empty are left out of the mean and
    flag the score as partial.

    Raises:
        UndefinedScoreError: no partner could be scored
    """
    if agents is None:
        agents = sorted({a for pair in profiles for a in pair})
    partners = [other for other in agents if other != agent]

    fractions: Dict[str, float] = {}
    undefined: List[str] = []
    defined_samples = 0
    for other in partners:
        profile = pair_profile(profiles, agent, other)
        try:
            if profile is None:
                raise UndefinedScoreError(f"no delay profile for {agent}->{other}")
            fractions[other] = lead_fraction(profile)
            defined_samples += profile.defined_count
        except UndefinedScoreError as e:
            logger.warning(f"Partial leadership score for {agent}: {e}")
            undefined.append(other)

    if not fractions:
        raise UndefinedScoreError(f"no scorable partner for agent {agent}")

    index = 100.0 * float(np.mean(list(fractions.values())))
    return LeadershipScore(
        agent=agent,
        index_percent=index,
        per_pair_fractions=fractions,
        defined_samples=defined_samples,
        partial=bool(undefined),
        undefined_partners=tuple(undefined),
    )


def score_trial(profiles: Mapping[Pair, DelayProfile], agents: Sequence[str]) -> Dict[str, LeadershipScore]:
    """Leadership scores for every agent that has at least one scorable partner."""
    scores = {}
    for agent in agents:
        try:
            scores[agent] = leadership_index(profiles, agent, agents)
        except UndefinedScoreError as e:
            logger.warning(f"No leadership score for {agent}: {e}")
    return scores


def _group_key(meta: Mapping, agent: str, grouping: str) -> Optional[str]:
    if grouping == "by_position":
        return (meta.get("formation") or {}).get(agent)
    if grouping == "by_agent":
        return agent
    if grouping == "by_ipd":
        ipd = meta.get("ipd_m")
        return None if ipd is None else f"{float(ipd):g}"
    if grouping == "by_sequence":
        return meta.get("sequence_tag")
    raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")


def aggregate(scores: Sequence[Tuple[Mapping, LeadershipScore]], grouping: str) -> AggregateReport:
    """
    Mean and SEM (sample std / sqrt(n)) of index_percent per group.

    Args:
        scores: (trial meta dict, score) pairs; meta uses TrialMeta.as_dict() keys
        grouping: one of GROUPINGS

    Scores whose meta lacks the grouping key are skipped and counted.
    """
    if grouping not in GROUPINGS:
        raise ValueError(f"grouping must be one of {GROUPINGS}, got {grouping!r}")

    report = AggregateReport(grouping=grouping)
    buckets: Dict[str, List[float]] = defaultdict(list)
    for meta, score in scores:
        key = _group_key(meta, score.agent, grouping)
        if key is None:
            report.skipped += 1
            report.warnings.append(f"{score.agent}: no {grouping} key in trial meta")
            continue
        buckets[key].append(score.index_percent)

    for key in sorted(buckets):
        values = np.asarray(buckets[key], dtype=float)
        n = len(values)
        sem = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        report.cells[key] = AggregateCell(mean_percent=float(values.mean()), sem_percent=sem, n_trials=n)

    if report.skipped:
        logger.warning(f"Aggregate {grouping}: skipped {report.skipped} scores without a group key")
    return report
