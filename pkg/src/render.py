#!/usr/bin/env python3
"""
SVG Renderings

Static figures for a trial: trajectories with velocity arrows, delayed
correlation heatmaps with the tau* trace, per-agent leadership bars, windowed
influence networks, and aggregate bars with SEM. Figures are built on
matplotlib Figure objects (no pyplot state) so worker threads can render
concurrently, and SVG output is made reproducible by a fixed hash salt and no
date stamp.
"""

import io
import logging
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import matplotlib
import networkx as nx
import numpy as np
from matplotlib import colormaps
from matplotlib.figure import Figure

from lagcorr import CorrelationMap, DelayProfile
from leadership import AggregateReport
from network import InfluenceNetwork
from reports import atomic_write_text

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "walking-group-leadership"

# Colour scale endpoints and display level curves per mode.
HEATMAP_RANGE = {"heading": (0.5, 1.0), "speed": (0.0, 0.5)}
LEVEL_CURVE = {"heading": 0.95, "speed": 0.05}

# Formation drawn with the walking direction pointing up.
FORMATION_LAYOUT = {"FL": (-1.0, 1.0), "FR": (1.0, 1.0), "BL": (-1.0, -1.0), "BR": (1.0, -1.0)}
POSITION_COLOURS = {"FL": "tab:red", "FR": "tab:orange", "BL": "tab:blue", "BR": "tab:green"}


def _save(fig: Figure, out_path: Union[str, Path]) -> Path:
    buffer = io.StringIO()
    fig.savefig(buffer, format="svg", bbox_inches="tight", metadata={"Date": None})
    out_path = atomic_write_text(out_path, buffer.getvalue())
    logger.debug(f"Rendered {out_path}")
    return out_path


def _agent_label(agent: str, formation: Optional[Mapping[str, str]]) -> str:
    if formation and agent in formation:
        return f"{agent} ({formation[agent]})"
    return agent


def _agent_colour(agent: str, index: int, formation: Optional[Mapping[str, str]]) -> str:
    if formation and formation.get(agent) in POSITION_COLOURS:
        return POSITION_COLOURS[formation[agent]]
    return f"C{index % 10}"


def render_heatmap(cmap: CorrelationMap, out_path: Union[str, Path],
                   profile: Optional[DelayProfile] = None, title: Optional[str] = None) -> Path:
    """
    Map over time (x, seconds) and lag (y, seconds).

    Adds the display level curve, a dashed line at zero lag and, when given,
    the tau*(t) trace in green.
    """
    fs = cmap.sample_rate_hz
    n = cmap.values.shape[0]
    vmin, vmax = HEATMAP_RANGE[cmap.mode]
    colours = colormaps["jet"].copy()
    colours.set_bad("white")

    fig = Figure(figsize=(10, 4))
    ax = fig.add_subplot(1, 1, 1)
    masked = np.ma.masked_invalid(cmap.values.T)
    extent = [0.0, (n - 1) / fs, cmap.taus[0] / fs, cmap.taus[-1] / fs]
    image = ax.imshow(masked, origin="lower", aspect="auto", extent=extent,
                      cmap=colours, vmin=vmin, vmax=vmax, interpolation="nearest")
    fig.colorbar(image, ax=ax, label="C_d" if cmap.mode == "heading" else "C_s")

    level = LEVEL_CURVE[cmap.mode]
    finite = cmap.values[cmap.defined]
    if finite.size and finite.min() < level < finite.max():
        t_axis = np.arange(n) / fs
        tau_axis = cmap.taus / fs
        ax.contour(t_axis, tau_axis, masked, levels=[level], colors="white", linestyles="dashed", linewidths=0.8)

    ax.axhline(0.0, color="black", linestyle="dashed", linewidth=0.8)

    if profile is not None:
        trace = np.where(profile.defined_mask, profile.tau_star / fs, np.nan)
        ax.plot(np.arange(n) / fs, trace, color="green", linewidth=1.0, label="tau*")
        ax.legend(loc="upper right")

    ax.set_xlabel("time (s)")
    ax.set_ylabel("lag tau (s)")
    ax.set_title(title or f"{cmap.mode}: {cmap.pair[0]} -> {cmap.pair[1]}")
    return _save(fig, out_path)


def render_trajectories(positions: Mapping[str, np.ndarray], velocities: Mapping[str, np.ndarray],
                        sample_rate_hz: float, out_path: Union[str, Path],
                        formation: Optional[Mapping[str, str]] = None,
                        arrow_every_s: float = 3.0, title: Optional[str] = None) -> Path:
    """Head paths with a velocity arrow every arrow_every_s seconds."""
    step = max(1, int(round(arrow_every_s * sample_rate_hz)))
    fig = Figure(figsize=(7, 7))
    ax = fig.add_subplot(1, 1, 1)
    for index, agent in enumerate(positions):
        pos = np.asarray(positions[agent], dtype=float)
        vel = np.asarray(velocities[agent], dtype=float)
        colour = _agent_colour(agent, index, formation)
        ax.plot(pos[:, 0], pos[:, 1], color=colour, linewidth=1.0, label=_agent_label(agent, formation))
        marks = np.arange(0, pos.shape[0], step)
        ax.quiver(pos[marks, 0], pos[marks, 1], vel[marks, 0], vel[marks, 1], color=colour,
                  angles="xy", scale_units="xy", scale=1.0, width=0.004)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="best")
    ax.set_title(title or "trajectories")
    return _save(fig, out_path)


def render_leadership_bars(index_percent: Mapping[str, float], out_path: Union[str, Path],
                           formation: Optional[Mapping[str, str]] = None,
                           title: Optional[str] = None) -> Path:
    agents = list(index_percent)
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar([_agent_label(a, formation) for a in agents], [index_percent[a] for a in agents],
           color=[_agent_colour(a, k, formation) for k, a in enumerate(agents)])
    ax.set_ylim(0, 100)
    ax.set_ylabel("leadership (%)")
    ax.set_title(title or "individual leadership index")
    return _save(fig, out_path)


def _layout(nodes: Sequence[str], formation: Optional[Mapping[str, str]]):
    if formation and all(formation.get(n) in FORMATION_LAYOUT for n in nodes):
        return {n: FORMATION_LAYOUT[formation[n]] for n in nodes}
    return nx.circular_layout(list(nodes))


def render_networks(networks: Sequence[InfluenceNetwork], out_path: Union[str, Path],
                    formation: Optional[Mapping[str, str]] = None,
                    title: Optional[str] = None) -> Path:
    """One panel per window; edge width grows with weight."""
    panels = max(1, len(networks))
    fig = Figure(figsize=(3.2 * panels, 3.4))
    axes = fig.subplots(1, panels, squeeze=False)[0]
    for ax, net in zip(axes, networks):
        graph = net.to_digraph()
        layout = _layout(net.nodes, formation)
        nx.draw_networkx_nodes(graph, layout, ax=ax, node_color="lightgray", node_size=600)
        nx.draw_networkx_labels(graph, layout, ax=ax, font_size=9)
        edges = list(graph.edges(data="weight"))
        if edges:
            nx.draw_networkx_edges(
                graph, layout, ax=ax,
                edgelist=[(i, j) for i, j, _ in edges],
                width=[0.5 + 4.0 * w for _, _, w in edges],
                arrows=True, arrowsize=12, node_size=600,
                connectionstyle="arc3,rad=0.15",
            )
        start, end = net.window
        ax.set_title(f"[{start}, {end})", fontsize=9)
        ax.set_axis_off()
    if title:
        fig.suptitle(title)
    return _save(fig, out_path)


def render_aggregate(report: AggregateReport, out_path: Union[str, Path],
                     title: Optional[str] = None) -> Path:
    """Group means with SEM error bars."""
    groups = list(report.cells)
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar(groups, [report.cells[g].mean_percent for g in groups],
           yerr=[report.cells[g].sem_percent for g in groups],
           color=[POSITION_COLOURS.get(g, "tab:gray") for g in groups], capsize=4)
    ax.set_ylim(0, 100)
    ax.set_ylabel("leadership (%)")
    ax.set_title(title or f"averaged leadership, {report.grouping}")
    return _save(fig, out_path)
