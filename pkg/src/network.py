#!/usr/bin/env python3
"""
Influence Network Reconstruction

Builds a weighted directed graph per time window, where w_ij is the fraction
of the window's defined samples in which agent i leads agent j, then removes
indirect links by the data processing inequality (DPI) rule and drops weak
links by thresholding.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from errors import TrialRangeError
from lagcorr import DelayProfile, Pair, pair_profile

logger = logging.getLogger(__name__)

Window = Tuple[int, int]


@dataclass(frozen=True)
class InfluenceNetwork:
    """Edges map (i, j) to w_ij in [0, 1] over the half-open window [start, end)."""
    window: Window
    nodes: Tuple[str, ...]
    edges: Dict[Pair, float]
    undefined: Tuple[Pair, ...] = ()

    def to_digraph(self) -> nx.DiGraph:
        graph = nx.DiGraph(window=self.window)
        graph.add_nodes_from(self.nodes)
        graph.add_weighted_edges_from((i, j, w) for (i, j), w in self.edges.items())
        return graph

    def weight(self, i: str, j: str) -> float:
        return self.edges.get((i, j), 0.0)


@dataclass(frozen=True)
class WindowNetworks:
    """The three stages of one window, kept for auditing."""
    raw: InfluenceNetwork
    pruned: InfluenceNetwork
    final: InfluenceNetwork
    removed_by_dpi: Tuple[Pair, ...] = field(default=())


def window_partition(trial_length: int, n_windows: int = 5, start: int = 0) -> List[Window]:
    """
    Split [start, start + trial_length) into n contiguous windows.

    Lengths differ by at most one; the remainder goes to the earliest windows.

    Raises:
        TrialRangeError: fewer samples than windows
    """
    if n_windows < 1:
        raise TrialRangeError(f"need at least one window, got {n_windows}")
    if trial_length < n_windows:
        raise TrialRangeError(f"{trial_length} samples cannot fill {n_windows} windows")
    base, extra = divmod(trial_length, n_windows)
    windows = []
    cursor = start
    for k in range(n_windows):
        length = base + (1 if k < extra else 0)
        windows.append((cursor, cursor + length))
        cursor += length
    return windows


def common_defined_mask(profiles: Mapping[Pair, DelayProfile]) -> np.ndarray:
    """Samples where every profile is defined."""
    if not profiles:
        raise TrialRangeError("no delay profiles to reconstruct a network from")
    return np.logical_and.reduce([p.defined_mask for p in profiles.values()])


def common_defined_range(profiles: Mapping[Pair, DelayProfile]) -> Window:
    """First and one-past-last sample where every profile is defined."""
    indices = np.flatnonzero(common_defined_mask(profiles))
    if indices.size == 0:
        raise TrialRangeError("delay profiles share no defined sample")
    return int(indices[0]), int(indices[-1]) + 1


def edge_weights(profiles: Mapping[Pair, DelayProfile], window: Window,
                 agents: Sequence[str], within: Optional[np.ndarray] = None) -> InfluenceNetwork:
    """
    w_ij = (defined samples in window with tau*_ij > 0) / (defined samples in window).

    ``within`` restricts the samples counted, e.g. to those where every pair
    is defined. Pairs with no counted sample in the window get weight 0 and
    are listed as undefined.
    """
    start, end = window
    edges: Dict[Pair, float] = {}
    undefined: List[Pair] = []
    for i in agents:
        for j in agents:
            if i == j:
                continue
            profile = pair_profile(profiles, i, j)
            if profile is None:
                edges[(i, j)] = 0.0
                undefined.append((i, j))
                continue
            mask = profile.defined_mask[start:end]
            if within is not None:
                mask = mask & within[start:end]
            defined = int(mask.sum())
            if defined == 0:
                edges[(i, j)] = 0.0
                undefined.append((i, j))
                continue
            leading = int(np.count_nonzero(profile.tau_star[start:end][mask] > 0))
            edges[(i, j)] = leading / defined
    if undefined:
        logger.debug(f"Window {window}: {len(undefined)} pairs without defined samples")
    return InfluenceNetwork(window=window, nodes=tuple(agents), edges=edges, undefined=tuple(undefined))


def dpi_prune(net: InfluenceNetwork) -> InfluenceNetwork:
    """
    Drop null links, then every shortcut i->k weaker than both i->j and j->k.

    All triplets are judged on the weights as they were before pruning and
    the removals are applied together, so the result does not depend on the
    order triplets are visited. Ties keep the link.
    """
    graph = nx.DiGraph()
    graph.add_nodes_from(net.nodes)
    graph.add_weighted_edges_from((i, j, w) for (i, j), w in net.edges.items() if w > 0)

    doomed = set()
    for i, k, w_ik in graph.edges(data="weight"):
        for j in set(graph.successors(i)) & set(graph.predecessors(k)):
            if j in (i, k):
                continue
            if w_ik < graph[i][j]["weight"] and w_ik < graph[j][k]["weight"]:
                doomed.add((i, k))
                break

    kept = {(i, j): w for i, j, w in graph.edges(data="weight") if (i, j) not in doomed}
    if doomed:
        logger.debug(f"DPI removed {sorted(doomed)} in window {net.window}")
    return replace(net, edges=kept)


def threshold(net: InfluenceNetwork, theta: float) -> InfluenceNetwork:
    """Remove edges with w < theta."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    return replace(net, edges={pair: w for pair, w in net.edges.items() if w >= theta})


def reconstruct_networks(profiles: Mapping[Pair, DelayProfile], agents: Sequence[str],
                         n_windows: int = 5, theta: float = 0.15) -> List[WindowNetworks]:
    """
    Windowed networks over the samples where every pair is defined: raw, DPI, thresholded.

    The windows split those samples into equal counts; a gap in the middle
    widens the window that spans it but adds nothing to its weights.
    """
    common = common_defined_mask(profiles)
    indices = np.flatnonzero(common)
    if indices.size == 0:
        raise TrialRangeError("delay profiles share no defined sample")
    start, end = int(indices[0]), int(indices[-1]) + 1
    results = []
    for first, stop in window_partition(indices.size, n_windows):
        window = (int(indices[first]), int(indices[stop - 1]) + 1)
        raw = edge_weights(profiles, window, agents, within=common)
        pruned = dpi_prune(raw)
        final = threshold(pruned, theta)
        removed = tuple(sorted(p for p, w in raw.edges.items() if w > 0 and p not in pruned.edges))
        results.append(WindowNetworks(raw=raw, pruned=pruned, final=final, removed_by_dpi=removed))
    logger.info(f"Reconstructed {len(results)} networks over samples [{start}, {end}) with theta={theta:g}")
    return results
