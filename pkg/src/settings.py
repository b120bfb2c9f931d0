#!/usr/bin/env python3
"""
Pipeline defaults.

Every numeric default lives here so that the CLI, the library entry points and
the artifact headers agree. Values can be overridden through environment
variables prefixed with ``LEADERSHIP_`` or a ``.env`` file in the working
directory, and again by command-line flags.
"""

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Reference rate for the window sizes quoted for walking data.
REFERENCE_RATE_HZ = 60.0
REFERENCE_OMEGA = {"heading": 40, "speed": 20}


class PipelineSettings(BaseSettings):
    """Defaults for filtering, correlation, network reconstruction and I/O."""

    model_config = SettingsConfigDict(
        env_prefix="LEADERSHIP_",
        env_file=".env",
        extra="ignore",
    )

    filter_order: int = Field(4, ge=1)
    heading_cutoff_hz: float = Field(0.6, gt=0)
    speed_cutoff_hz: float = Field(1.0, gt=0)
    heading_min_speed_mps: float = Field(0.05, ge=0)

    tau_max_s: float = Field(2.0, gt=0)
    tie_tolerance: float = Field(1e-9, ge=0)

    windows: int = Field(5, ge=1)
    theta: float = Field(0.15, ge=0, le=1)

    truncate_head_s: float = Field(0.0, ge=0)
    truncate_tail_s: float = Field(0.0, ge=0)

    workers: int = Field(4, ge=1)
    log_level: str = "INFO"


@lru_cache(maxsize=1)
def get_settings() -> PipelineSettings:
    """Process-wide settings, read once."""
    return PipelineSettings()


def default_omega(mode: str, sample_rate_hz: float) -> int:
    """Half-window in samples, scaled so 2*omega*dt matches the 60 Hz choice."""
    if mode not in REFERENCE_OMEGA:
        raise ValueError(f"Unknown mode: {mode}")
    return max(1, int(round(REFERENCE_OMEGA[mode] * sample_rate_hz / REFERENCE_RATE_HZ)))
