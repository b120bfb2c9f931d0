#!/usr/bin/env python3
"""
Delayed Correlation Maps

Time-dependent delayed directional correlation (heading mode) and delayed
speed correlation (speed mode) between ordered agent pairs, on a grid of time
t and lag tau, plus extraction of the optimal lag tau*(t).

For pair (i, j) a cell compares agent i at t with agent j at t + tau, averaged
over the 2*omega + 1 samples centred on t. Positive tau* means j repeats what
i did tau* samples earlier: i leads j.
"""

import itertools
import logging
from dataclasses import dataclass, replace
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import EmptyMapError
from preprocess import KinematicSeries
from settings import default_omega, get_settings

logger = logging.getLogger(__name__)

MODES = ("heading", "speed")
Pair = Tuple[str, str]


@dataclass(frozen=True)
class AnalysisParams:
    """Window half-width (samples), lag search bound (seconds) and mode."""
    omega: int
    tau_max_s: float
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.omega < 1:
            raise ValueError(f"omega must be >= 1, got {self.omega}")
        if not self.tau_max_s > 0:
            raise ValueError(f"tau_max_s must be positive, got {self.tau_max_s}")

    @classmethod
    def for_mode(cls, mode: str, sample_rate_hz: float, omega: Optional[int] = None,
                 tau_max_s: Optional[float] = None) -> "AnalysisParams":
        """Defaults scaled to the sample rate, with optional overrides."""
        return cls(
            omega=omega if omega is not None else default_omega(mode, sample_rate_hz),
            tau_max_s=tau_max_s if tau_max_s is not None else get_settings().tau_max_s,
            mode=mode,
        )

    def max_lag(self, sample_rate_hz: float) -> int:
        lag = int(round(self.tau_max_s * sample_rate_hz))
        if lag < 1:
            raise ValueError(f"tau_max_s={self.tau_max_s} is below one sample at {sample_rate_hz} Hz")
        return lag


@dataclass(frozen=True)
class CorrelationMap:
    """value[t, k] for lag taus[k]; NaN marks undefined cells."""
    pair: Pair
    mode: str
    taus: np.ndarray
    values: np.ndarray
    omega: int
    sample_rate_hz: float

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def times(self) -> np.ndarray:
        """Sample indices with at least one defined lag."""
        return np.flatnonzero(self.defined.any(axis=1))

    def reversed(self) -> "CorrelationMap":
        """Map of the reversed pair, using C_ji(t, tau) == C_ij(t + tau, -tau)."""
        n, width = self.values.shape
        out = np.full_like(self.values, np.nan)
        for k, tau in enumerate(int(t) for t in self.taus):
            mirror = self.values[:, width - 1 - k]
            # lags beyond the trial length leave the column undefined
            shift = min(abs(tau), n)
            if tau >= 0:
                out[:n - shift, k] = mirror[shift:]
            else:
                out[shift:, k] = mirror[:n - shift]
        out.setflags(write=False)
        return replace(self, pair=(self.pair[1], self.pair[0]), values=out)


@dataclass(frozen=True)
class DelayProfile:
    """tau*(t) in samples over the whole trial; rows outside defined_mask are 0 and meaningless."""
    pair: Pair
    tau_star: np.ndarray
    defined_mask: np.ndarray

    def reversed(self) -> "DelayProfile":
        """Profile of the reversed pair: the same lead relation seen from j."""
        return replace(self, pair=(self.pair[1], self.pair[0]), tau_star=-self.tau_star)

    @property
    def defined_count(self) -> int:
        return int(self.defined_mask.sum())


def directional_alignment(h_i, h_j) -> np.ndarray:
    """Scalar product of heading unit vectors; NaN where either is undefined."""
    return np.sum(np.asarray(h_i, dtype=float) * np.asarray(h_j, dtype=float), axis=-1)


def speed_gap(s_i, s_j) -> np.ndarray:
    """Absolute speed difference."""
    return np.abs(np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float))


def _lagged(series: np.ndarray, max_lag: int) -> np.ndarray:
    """out[t, k] = series[t + taus[k]], NaN where t + tau falls outside the trial."""
    pad = np.full((max_lag,) + series.shape[1:], np.nan)
    padded = np.concatenate([pad, series, pad], axis=0)
    windows = sliding_window_view(padded, 2 * max_lag + 1, axis=0)
    return np.moveaxis(windows, -1, 1)


def _window_mean(samples: np.ndarray, omega: int) -> np.ndarray:
    """Centred mean over 2*omega+1 rows; NaN unless every summand is defined."""
    n, width = samples.shape
    span = 2 * omega + 1
    out = np.full((n, width), np.nan)
    if n < span:
        return out

    ok = np.isfinite(samples)
    totals = np.vstack([np.zeros((1, width)), np.cumsum(np.where(ok, samples, 0.0), axis=0)])
    counts = np.vstack([np.zeros((1, width), dtype=np.int64), np.cumsum(ok, axis=0)])
    window_sum = totals[span:] - totals[:-span]
    window_count = counts[span:] - counts[:-span]
    out[omega:n - omega] = np.where(window_count == span, window_sum / span, np.nan)
    return out


def correlation_map(kin: Mapping[str, KinematicSeries], pair: Pair,
                    params: AnalysisParams) -> CorrelationMap:
    """
    Delayed correlation between agent pair[0] at t and pair[1] at t + tau.

    Raises:
        EmptyMapError: no (t, tau) cell has a fully defined window
    """
    i, j = pair
    series_i, series_j = kin[i], kin[j]
    fs = series_i.sample_rate_hz
    max_lag = params.max_lag(fs)
    taus = np.arange(-max_lag, max_lag + 1)

    if params.mode == "heading":
        summands = directional_alignment(series_i.heading[:, None, :], _lagged(series_j.heading, max_lag))
    else:
        summands = speed_gap(series_i.speed[:, None], _lagged(series_j.speed, max_lag))

    values = _window_mean(summands, params.omega)
    # running sums can stray by an ulp outside the analytic range
    if params.mode == "heading":
        values = np.clip(values, -1.0, 1.0)
    else:
        values = np.maximum(values, 0.0)

    if not np.isfinite(values).any():
        raise EmptyMapError(
            f"{params.mode} map for {i}->{j} has no defined cell "
            f"({len(series_i)} samples, omega={params.omega}, max lag={max_lag})"
        )
    values.setflags(write=False)
    logger.debug(f"{params.mode} map {i}->{j}: {np.isfinite(values).sum()} defined cells")
    return CorrelationMap(pair=(i, j), mode=params.mode, taus=taus, values=values,
                          omega=params.omega, sample_rate_hz=fs)


def lag_preference(taus: np.ndarray) -> np.ndarray:
    """Column order for tie-breaking: 0, -1, +1, -2, +2, ..."""
    return np.array(sorted(range(len(taus)), key=lambda k: (abs(int(taus[k])), int(taus[k]))))


def optimal_delay(cmap: CorrelationMap, mode: Optional[str] = None,
                  tie_tolerance: Optional[float] = None) -> DelayProfile:
    """
    tau*(t): argmax of the heading map, argmin of the speed map.

    Cells within tie_tolerance of the row optimum are tied; among them the
    smallest |tau| wins, the negative lag before the positive one.
    """
    mode = mode or cmap.mode
    if tie_tolerance is None:
        tie_tolerance = get_settings().tie_tolerance

    order = lag_preference(cmap.taus)
    values = cmap.values[:, order]
    ordered_taus = cmap.taus[order]

    defined_rows = np.isfinite(values).any(axis=1)
    tau_star = np.zeros(values.shape[0], dtype=np.int64)
    rows = values[defined_rows]
    if rows.size:
        if mode == "heading":
            best = np.nanmax(rows, axis=1)
            candidates = rows >= (best - tie_tolerance)[:, None]
        else:
            best = np.nanmin(rows, axis=1)
            candidates = rows <= (best + tie_tolerance)[:, None]
        # NaN comparisons are False, so undefined cells never win
        tau_star[defined_rows] = ordered_taus[np.argmax(candidates, axis=1)]

    tau_star.setflags(write=False)
    defined_rows.setflags(write=False)
    return DelayProfile(pair=cmap.pair, tau_star=tau_star, defined_mask=defined_rows)


def canonical_pairs(agents: Sequence[str]) -> Sequence[Pair]:
    """Unordered pairs as (earlier, later) in agent order."""
    return list(itertools.combinations(agents, 2))


def compute_pair_maps(kin: Mapping[str, KinematicSeries], agents: Sequence[str],
                      params: AnalysisParams,
                      tie_tolerance: Optional[float] = None) -> Tuple[Dict[Pair, CorrelationMap], Dict[Pair, DelayProfile]]:
    """
    Maps and delay profiles for every canonical pair.

    Reversed pairs are not computed: their lead relation is the negated
    profile, see DelayProfile.reversed(). A pair whose map is empty is left
    out and logged.
    """
    maps: Dict[Pair, CorrelationMap] = {}
    profiles: Dict[Pair, DelayProfile] = {}
    for pair in canonical_pairs(agents):
        try:
            cmap = correlation_map(kin, pair, params)
        except EmptyMapError as e:
            logger.warning(f"Skipping pair {pair[0]}->{pair[1]}: {e}")
            continue
        maps[pair] = cmap
        profiles[pair] = optimal_delay(cmap, params.mode, tie_tolerance)
    logger.info(f"Computed {len(maps)} {params.mode} maps for {len(agents)} agents")
    return maps, profiles


def pair_profile(profiles: Mapping[Pair, DelayProfile], i: str, j: str) -> Optional[DelayProfile]:
    """Profile for i->j, derived from j->i when only the reverse was computed."""
    if (i, j) in profiles:
        return profiles[(i, j)]
    if (j, i) in profiles:
        return profiles[(j, i)].reversed()
    return None
