#!/usr/bin/env python3
"""
Exception hierarchy for the leadership analysis pipeline.

Library stages raise these; the CLI orchestrator catches them per trial and
turns them into failure records so that one bad trial never stops the run.
"""

from typing import Optional


class LeadershipAnalysisError(ValueError):
    """Base class for every pipeline error."""

    kind = "analysis"


class TrialParseError(LeadershipAnalysisError):
    """Malformed row in a trajectory file."""

    kind = "parse"

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class TrialStructureError(LeadershipAnalysisError):
    """Ragged agents, duplicate ids or an invalid formation."""

    kind = "structure"


class TrialTimingError(LeadershipAnalysisError):
    """Time base not uniform or inconsistent with the declared rate."""

    kind = "timing"


class TrialRangeError(LeadershipAnalysisError):
    """Requested slice or partition leaves too few samples."""

    kind = "range"


class FilterDesignError(LeadershipAnalysisError):
    kind = "filter_design"


class SeriesLengthError(LeadershipAnalysisError):
    """Series too short for zero-phase padding."""

    kind = "length"


class EmptyMapError(LeadershipAnalysisError):
    """Correlation map has no fully defined cell."""

    kind = "empty_map"


class UndefinedScoreError(LeadershipAnalysisError):
    """Delay profile has no defined sample to score."""

    kind = "undefined_score"


class SimConfigError(LeadershipAnalysisError):
    kind = "sim_config"


class CorpusError(LeadershipAnalysisError, OSError):
    """Output collision or I/O failure while writing a simulated corpus."""

    kind = "corpus_io"


class ReportError(LeadershipAnalysisError):
    """Missing or unreadable report artifacts."""

    kind = "report"
