#!/usr/bin/env python3
"""
Kinematics Preprocessing Service

Zero-phase low-pass filtering of head positions and differentiation into
heading unit vectors and speeds. Heading and speed come from separately
filtered copies of the positions: a lower cutoff removes the side-to-side
stride sway before heading is taken, a higher one removes the per-step surge
before speed is taken.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import signal as scipy_signal

from errors import FilterDesignError, SeriesLengthError
from settings import get_settings
from trajectory_io import Trial

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth low-pass design request."""
    order: int
    cutoff_hz: float
    sample_rate_hz: float


@dataclass(frozen=True)
class FilterCoefficients:
    """Normalized recursive coefficients, a[0] == 1."""
    b: np.ndarray
    a: np.ndarray
    spec: FilterSpec

    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))

    def magnitude_at(self, frequency_hz: float) -> float:
        _, response = scipy_signal.freqz(self.b, self.a, worN=[frequency_hz], fs=self.spec.sample_rate_hz)
        return float(np.abs(response[0]))


@dataclass(frozen=True)
class KinematicSeries:
    """Per-agent heading unit vectors and speeds; NaN heading rows are undefined."""
    agent: str
    heading: np.ndarray
    speed: np.ndarray
    sample_rate_hz: float
    valid_range: Tuple[int, int]

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.heading).all(axis=1)

    def __len__(self) -> int:
        return int(self.speed.shape[0])


def design_lowpass(spec: FilterSpec) -> FilterCoefficients:
    """
    Digital Butterworth low-pass via the prewarped bilinear transform.

    The numerator is rescaled so the DC gain is exactly one.
    """
    if spec.order < 1:
        raise FilterDesignError(f"filter order must be >= 1, got {spec.order}")
    if not spec.sample_rate_hz > 0:
        raise FilterDesignError(f"sample rate must be positive, got {spec.sample_rate_hz}")
    nyquist = spec.sample_rate_hz / 2
    if not 0 < spec.cutoff_hz < nyquist:
        raise FilterDesignError(f"cutoff {spec.cutoff_hz} Hz must lie in (0, {nyquist}) Hz")

    b, a = scipy_signal.butter(spec.order, spec.cutoff_hz, btype="low", fs=spec.sample_rate_hz)
    b = b * (np.sum(a) / np.sum(b))
    return FilterCoefficients(b=b, a=a, spec=spec)


def filtfilt(series, coeffs: FilterCoefficients) -> np.ndarray:
    """
    Forward-backward application with odd reflection padding of 3*order samples.

    Raises:
        SeriesLengthError: series not longer than the padding
    """
    x = np.asarray(series, dtype=float)
    padlen = 3 * coeffs.spec.order
    if x.shape[0] <= padlen:
        raise SeriesLengthError(f"series of {x.shape[0]} samples too short for padding {padlen}")
    return scipy_signal.filtfilt(coeffs.b, coeffs.a, x, axis=0, padtype="odd", padlen=padlen)


class KinematicsPreprocessor:
    """
    Service for turning filtered positions into headings and speeds.

    Responsibilities:
    - Filter design per cutoff (cached per sample rate)
    - Endpoint-chord removal around zero-phase filtering
    - Central-difference velocity, heading normalization, definedness flags
    """

    def __init__(self, heading_cutoff_hz: float = 0.6, speed_cutoff_hz: float = 1.0,
                 order: int = 4, heading_min_speed_mps: float = 0.05):
        self.heading_cutoff_hz = heading_cutoff_hz
        self.speed_cutoff_hz = speed_cutoff_hz
        self.order = order
        self.heading_min_speed_mps = heading_min_speed_mps
        self.logger = logging.getLogger(__name__)
        self._designs: Dict[Tuple[float, float], FilterCoefficients] = {}

    def _design(self, cutoff_hz: float, sample_rate_hz: float) -> FilterCoefficients:
        key = (cutoff_hz, sample_rate_hz)
        if key not in self._designs:
            self._designs[key] = design_lowpass(FilterSpec(self.order, cutoff_hz, sample_rate_hz))
            self.logger.debug(f"Designed order-{self.order} low-pass at {cutoff_hz:g} Hz (fs={sample_rate_hz:g})")
        return self._designs[key]

    def smooth_positions(self, positions: np.ndarray, coeffs: FilterCoefficients) -> np.ndarray:
        """Filter (n, 2) positions with the straight chord between endpoints taken out."""
        n = positions.shape[0]
        fraction = np.linspace(0.0, 1.0, n)[:, None]
        chord = positions[0] + (positions[-1] - positions[0]) * fraction
        return filtfilt(positions - chord, coeffs) + chord

    def velocity(self, positions: np.ndarray, cutoff_hz: float, sample_rate_hz: float) -> np.ndarray:
        smoothed = self.smooth_positions(positions, self._design(cutoff_hz, sample_rate_hz))
        # central differences inside, one-sided at the two ends
        return np.gradient(smoothed, 1.0 / sample_rate_hz, axis=0, edge_order=1)

    def process_agent(self, agent: str, positions: np.ndarray, sample_rate_hz: float) -> KinematicSeries:
        positions = np.asarray(positions, dtype=float)

        speed = np.linalg.norm(self.velocity(positions, self.speed_cutoff_hz, sample_rate_hz), axis=1)

        v_heading = self.velocity(positions, self.heading_cutoff_hz, sample_rate_hz)
        norm = np.linalg.norm(v_heading, axis=1)
        defined = norm >= self.heading_min_speed_mps
        heading = np.full_like(v_heading, np.nan)
        heading[defined] = v_heading[defined] / norm[defined, None]

        undefined = int((~defined).sum())
        if undefined:
            self.logger.debug(f"{agent}: {undefined} samples below {self.heading_min_speed_mps} m/s, heading undefined")

        heading.setflags(write=False)
        speed.setflags(write=False)
        return KinematicSeries(
            agent=agent,
            heading=heading,
            speed=speed,
            sample_rate_hz=sample_rate_hz,
            valid_range=(0, positions.shape[0]),
        )

    def process_trial(self, trial: Trial) -> Dict[str, KinematicSeries]:
        kinematics = {
            agent: self.process_agent(agent, pos, trial.sample_rate_hz)
            for agent, pos in zip(trial.agents, trial.positions)
        }
        self.logger.info(
            f"Derived kinematics for {trial.name}: heading cutoff {self.heading_cutoff_hz:g} Hz, "
            f"speed cutoff {self.speed_cutoff_hz:g} Hz"
        )
        return kinematics


def derive_kinematics(trial: Trial, heading_cutoff_hz: float = 0.6,
                      speed_cutoff_hz: float = 1.0) -> Dict[str, KinematicSeries]:
    """Standalone function for the default preprocessing chain."""
    settings = get_settings()
    processor = KinematicsPreprocessor(
        heading_cutoff_hz=heading_cutoff_hz,
        speed_cutoff_hz=speed_cutoff_hz,
        order=settings.filter_order,
        heading_min_speed_mps=settings.heading_min_speed_mps,
    )
    return processor.process_trial(trial)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format='%(levelname)s: %(message)s')

    for cutoff in (0.6, 1.0):
        coeffs = design_lowpass(FilterSpec(order=4, cutoff_hz=cutoff, sample_rate_hz=60.0))
        print(f"\n=== 4th-order low-pass at {cutoff} Hz ===")
        print(f"b: {coeffs.b}")
        print(f"a: {coeffs.a}")
        print(f"DC gain: {coeffs.dc_gain():.15f}")
        print(f"|H(fc)|: {coeffs.magnitude_at(cutoff):.6f}")
