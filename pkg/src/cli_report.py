#!/usr/bin/env python3
"""
Leadership Analysis Command Line

Thin orchestration layer over the pipeline services:
- Trajectory loading and truncation (trajectory_io)
- Kinematics preprocessing (KinematicsPreprocessor)
- Delayed correlation maps and tau* (lagcorr)
- Leadership scoring and aggregation (leadership)
- Windowed influence networks (network)
- Artifact writing and rendering (reports, render)

Subcommands: analyze, simulate, summarize, render.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Literal, Optional, Tuple

import click
import coloredlogs
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from tqdm import tqdm

import reports
import render
from errors import EmptyMapError, LeadershipAnalysisError, ReportError
from lagcorr import MODES, AnalysisParams, compute_pair_maps, optimal_delay
from leadership import GROUPINGS, aggregate, score_trial
from network import reconstruct_networks
from preprocess import KinematicSeries, KinematicsPreprocessor
from settings import get_settings
from simulate import corpus, experiment_block, load_sim_configs
from trajectory_io import Trial, load_trial_file, truncate

LOG_FORMAT = '%(asctime)s %(levelname)s: %(message)s'
EMIT_CHOICES = ("json", "csv", "svg", "dot")
DEFAULT_EMIT = frozenset({"json", "csv", "dot"})
SUMMARY_FILE = "analysis_summary.json"

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Resolved options for one analyze run."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    inputs: List[Path] = Field(min_length=1)
    mode: Literal["heading", "speed", "both"] = "both"
    omega: Optional[int] = Field(None, ge=1)
    tau_max_s: float = Field(gt=0)
    windows: int = Field(ge=1)
    theta: float = Field(ge=0, le=1)
    heading_cutoff_hz: float = Field(gt=0)
    speed_cutoff_hz: float = Field(gt=0)
    filter_order: int = Field(ge=1)
    heading_min_speed_mps: float = Field(ge=0)
    tie_tolerance: float = Field(ge=0)
    truncate_head_s: float = Field(0.0, ge=0)
    truncate_tail_s: float = Field(0.0, ge=0)
    out_dir: Path
    emit: FrozenSet[Literal["json", "csv", "svg", "dot"]] = DEFAULT_EMIT
    workers: int = Field(1, ge=1)

    @classmethod
    def from_options(cls, **options) -> "RunConfig":
        """Fill unset options from PipelineSettings (env / .env)."""
        settings = get_settings()
        defaults = {
            "tau_max_s": settings.tau_max_s,
            "windows": settings.windows,
            "theta": settings.theta,
            "heading_cutoff_hz": settings.heading_cutoff_hz,
            "speed_cutoff_hz": settings.speed_cutoff_hz,
            "filter_order": settings.filter_order,
            "heading_min_speed_mps": settings.heading_min_speed_mps,
            "tie_tolerance": settings.tie_tolerance,
            "truncate_head_s": settings.truncate_head_s,
            "truncate_tail_s": settings.truncate_tail_s,
            "workers": settings.workers,
        }
        defaults.update({k: v for k, v in options.items() if v is not None})
        return cls(**defaults)

    @property
    def modes(self) -> Tuple[str, ...]:
        return MODES if self.mode == "both" else (self.mode,)

    def resolve_inputs(self) -> List[Path]:
        """Files as given; directories expand to their *.csv files in name order."""
        resolved = []
        for path in self.inputs:
            if path.is_dir():
                resolved.extend(sorted(path.glob("*.csv")))
            else:
                resolved.append(path)
        return resolved


@dataclass
class TrialOutcome:
    """Result of analyzing one input; failures carry the error instead of artifacts."""
    input_path: str
    trial: Optional[str] = None
    success: bool = False
    error_kind: Optional[str] = None
    error_message: Optional[str] = None
    artifacts: List[str] = field(default_factory=list)
    index_percent: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "input": self.input_path,
            "trial": self.trial,
            "success": self.success,
            "error_kind": self.error_kind,
            "error": self.error_message,
            "artifacts": sorted(self.artifacts),
            "index_percent": self.index_percent,
        }


class LeadershipPipeline:
    """
    Runs the analysis over many trials.

    Responsibilities:
    - Per-trial pipeline from file to artifacts
    - Failure isolation: one bad trial becomes a failed TrialOutcome
    - Parameter records written into every artifact header
    """

    def __init__(self, run: RunConfig):
        self.run = run
        self.logger = logging.getLogger(__name__)
        self.preprocessor = KinematicsPreprocessor(
            heading_cutoff_hz=run.heading_cutoff_hz,
            speed_cutoff_hz=run.speed_cutoff_hz,
            order=run.filter_order,
            heading_min_speed_mps=run.heading_min_speed_mps,
        )

    def base_record(self) -> dict:
        run = self.run
        return {
            "filter_order": run.filter_order,
            "heading_cutoff_hz": run.heading_cutoff_hz,
            "speed_cutoff_hz": run.speed_cutoff_hz,
            "heading_min_speed_mps": run.heading_min_speed_mps,
            "tau_max_s": run.tau_max_s,
            "tie_tolerance": run.tie_tolerance,
            "windows": run.windows,
            "theta": run.theta,
            "truncate_head_s": run.truncate_head_s,
            "truncate_tail_s": run.truncate_tail_s,
        }

    def mode_record(self, params: AnalysisParams, sample_rate_hz: float) -> dict:
        record = {"mode": params.mode, "omega": params.omega, "max_lag": params.max_lag(sample_rate_hz),
                  "fs_hz": sample_rate_hz}
        record.update(self.base_record())
        return record

    def _write(self, outcome: TrialOutcome, relative: str, text: str):
        reports.atomic_write_text(self.run.out_dir / relative, text)
        outcome.artifacts.append(relative)

    def _render(self, outcome: TrialOutcome, relative: str, draw, *args, **kwargs):
        draw(*args, out_path=self.run.out_dir / relative, **kwargs)
        outcome.artifacts.append(relative)

    def analyze_trial(self, trial: Trial, outcome: TrialOutcome) -> TrialOutcome:
        run = self.run
        fs = trial.sample_rate_hz
        kinematics = self.preprocessor.process_trial(trial)
        stem = trial.name

        if "csv" in run.emit:
            self._write(outcome, f"{stem}/kinematics.csv",
                        reports.kinematics_csv(trial, kinematics, self.base_record()))
        if "svg" in run.emit:
            self._render(outcome, f"{stem}/trajectories.svg", render.render_trajectories,
                         {a: trial.position_of(a) for a in trial.agents},
                         {a: _velocity(kinematics[a]) for a in trial.agents},
                         fs, formation=trial.meta.formation, title=trial.name)

        for mode in run.modes:
            params = AnalysisParams.for_mode(mode, fs, omega=run.omega, tau_max_s=run.tau_max_s)
            record = self.mode_record(params, fs)
            maps, profiles = compute_pair_maps(kinematics, trial.agents, params, run.tie_tolerance)
            if not profiles:
                raise EmptyMapError(f"no pair of {trial.name} has a defined {mode} map")
            scores = score_trial(profiles, trial.agents)
            networks = reconstruct_networks(profiles, trial.agents, run.windows, run.theta)
            outcome.index_percent[mode] = {a: s.index_percent for a, s in scores.items()}

            if "csv" in run.emit:
                for cmap in maps.values():
                    for view in (cmap, cmap.reversed()):
                        i, j = view.pair
                        self._write(outcome, f"{stem}/{mode}/heatmap_{i}_{j}.csv", reports.heatmap_csv(view, record))
            if "json" in run.emit:
                self._write(outcome, f"{stem}/{mode}/leadership.json",
                            reports.dumps_json(reports.leadership_report(trial, mode, scores, record)))
                self._write(outcome, f"{stem}/{mode}/network.json",
                            reports.dumps_json(reports.network_report(trial, mode, networks, record)))
            if "dot" in run.emit:
                self._write(outcome, f"{stem}/{mode}/network.dot",
                            reports.network_dot(trial.name, mode, networks, record))
            if "svg" in run.emit:
                for pair, cmap in maps.items():
                    self._render(outcome, f"{stem}/{mode}/heatmap_{pair[0]}_{pair[1]}.svg",
                                 render.render_heatmap, cmap, profile=profiles[pair])
                self._render(outcome, f"{stem}/{mode}/leadership.svg", render.render_leadership_bars,
                             outcome.index_percent[mode], formation=trial.meta.formation,
                             title=f"{trial.name} ({mode})")
                self._render(outcome, f"{stem}/{mode}/network.svg", render.render_networks,
                             [w.final for w in networks], formation=trial.meta.formation,
                             title=f"{trial.name} ({mode})")

        outcome.success = True
        return outcome

    def analyze_path(self, path: Path) -> TrialOutcome:
        """Load, truncate and analyze one file; never raises."""
        outcome = TrialOutcome(input_path=str(path), trial=path.stem)
        try:
            if not path.is_file():
                raise FileNotFoundError(f"input file not found: {path}")
            trial = truncate(load_trial_file(path), self.run.truncate_head_s, self.run.truncate_tail_s)
            self.analyze_trial(trial, outcome)
            self.logger.info(f"Analyzed {path}: {len(outcome.artifacts)} artifacts")
        except LeadershipAnalysisError as e:
            self._fail(outcome, e.kind, f"{path}: {e}")
        except OSError as e:
            self._fail(outcome, "io", f"{path}: {e}")
        except Exception as e:
            self.logger.exception(f"Unexpected failure on {path}")
            self._fail(outcome, "internal", f"{path}: {e}")
        return outcome

    def _fail(self, outcome: TrialOutcome, kind: str, message: str):
        self.logger.error(f"Trial failed ({kind}): {message}")
        outcome.success = False
        outcome.error_kind = kind
        outcome.error_message = message
        self._discard(outcome.artifacts)
        outcome.artifacts = []
        outcome.index_percent = {}

    def _discard(self, artifacts: List[str]):
        """Remove what a failed trial already wrote, and the directories left empty."""
        root = self.run.out_dir.resolve()
        parents = set()
        for relative in artifacts:
            path = self.run.out_dir / relative
            path.unlink(missing_ok=True)
            parents.update(p for p in path.resolve().parents if root in p.parents)
        for directory in sorted(parents, key=lambda p: len(p.parts), reverse=True):
            if directory.is_dir() and not any(directory.iterdir()):
                directory.rmdir()
        if artifacts:
            self.logger.debug(f"Removed {len(artifacts)} partial artifacts")

    def run_all(self, show_progress: bool = True) -> List[TrialOutcome]:
        paths = self.run.resolve_inputs()
        if not paths:
            raise ReportError(f"no trajectory files found in {[str(p) for p in self.run.inputs]}")

        stems: Dict[str, int] = {}
        for path in paths:
            stems[path.stem] = stems.get(path.stem, 0) + 1

        def task(path: Path) -> TrialOutcome:
            if stems[path.stem] > 1:
                outcome = TrialOutcome(input_path=str(path), trial=path.stem)
                self._fail(outcome, "structure", f"{path}: trial name {path.stem!r} is used by more than one input")
                return outcome
            return self.analyze_path(path)

        with ThreadPoolExecutor(max_workers=self.run.workers) as pool:
            outcomes = list(tqdm(pool.map(task, paths), total=len(paths), desc="trials",
                                 unit="trial", disable=not show_progress))

        summary = {
            "schema_version": reports.SCHEMA_VERSION,
            "params": self.base_record(),
            "modes": list(self.run.modes),
            "succeeded": sum(o.success for o in outcomes),
            "failed": sum(not o.success for o in outcomes),
            "trials": [o.as_dict() for o in outcomes],
        }
        reports.atomic_write_text(self.run.out_dir / SUMMARY_FILE, reports.dumps_json(summary))
        return outcomes


def _velocity(series: KinematicSeries) -> np.ndarray:
    return np.nan_to_num(series.heading) * series.speed[:, None]


def configure_logging(level: str = "INFO", log_file: Optional[str] = None, quiet: bool = False):
    """Coloured console logging plus an optional plain log file."""
    coloredlogs.install(level="WARNING" if quiet else level.upper(), fmt=LOG_FORMAT)
    if log_file:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logging.getLogger().addHandler(handler)


def _emit_option(value: Optional[str]) -> Optional[FrozenSet[str]]:
    if value is None:
        return None
    chosen = frozenset(v.strip() for v in value.split(",") if v.strip())
    unknown = chosen - set(EMIT_CHOICES)
    if unknown:
        raise click.BadParameter(f"unknown artifact kinds {sorted(unknown)}; choose from {EMIT_CHOICES}")
    return chosen


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
@click.option("--log-file", type=click.Path(dir_okay=False), default=None, help="Also write the log here")
@click.option("--quiet", is_flag=True, help="Only warnings and errors; no progress bar")
@click.pass_context
def cli(ctx, log_level, log_file, quiet):
    """Leader-follower inference for walking groups."""
    configure_logging(log_level or get_settings().log_level, log_file, quiet)
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet


@cli.command()
@click.argument("inputs", nargs=-1, type=click.Path(path_type=Path))
@click.option("--mode", type=click.Choice(["heading", "speed", "both"]), default="both", show_default=True)
@click.option("--omega", type=int, default=None, help="Half-window in samples (default scales with fs)")
@click.option("--tau-max", "tau_max_s", type=float, default=None, help="Lag search bound in seconds")
@click.option("--windows", type=int, default=None, help="Network windows per trial")
@click.option("--theta", type=float, default=None, help="Edge weight threshold after DPI")
@click.option("--heading-cutoff", "heading_cutoff_hz", type=float, default=None)
@click.option("--speed-cutoff", "speed_cutoff_hz", type=float, default=None)
@click.option("--truncate-head", "truncate_head_s", type=float, default=None, help="Seconds dropped at start")
@click.option("--truncate-tail", "truncate_tail_s", type=float, default=None, help="Seconds dropped at end")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--emit", default=None, help="Comma list of json,csv,svg,dot [default: json,csv,dot]")
@click.option("--workers", type=int, default=None)
@click.pass_context
def analyze(ctx, inputs, emit, **options):
    """Analyze trajectory files (or directories of them)."""
    try:
        run = RunConfig.from_options(inputs=list(inputs), emit=_emit_option(emit), **options)
    except ValidationError as e:
        raise click.UsageError(f"invalid options: {e}")

    try:
        outcomes = LeadershipPipeline(run).run_all(show_progress=not ctx.obj["quiet"])
    except ReportError as e:
        raise click.ClickException(str(e))

    failed = [o for o in outcomes if not o.success]
    click.echo(f"{len(outcomes) - len(failed)} of {len(outcomes)} trials analyzed; summary in "
               f"{run.out_dir / SUMMARY_FILE}")
    if failed:
        for outcome in failed:
            click.echo(json.dumps({"input": outcome.input_path, "error_kind": outcome.error_kind,
                                   "error": outcome.error_message}), err=True)
        ctx.exit(1)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="SimConfig JSON/YAML: one object, a list, or {configs: [...]}")
@click.option("--block", type=click.Choice(["heading", "speed"]), default=None,
              help="Generate a standard trial block instead of reading a config")
@click.option("--repeat", type=int, default=1, show_default=True, help="Blocks to generate with --block")
@click.option("--seed", type=int, default=None, help="Base seed")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
def simulate(config_path, block, repeat, seed, out_dir):
    """Write a synthetic corpus with a ground-truth manifest."""
    if (config_path is None) == (block is None):
        raise click.UsageError("give exactly one of --config or --block")
    try:
        if config_path is not None:
            configs = load_sim_configs(config_path)
            if seed is not None:
                configs = [c.model_copy(update={"seed": seed + k}) for k, c in enumerate(configs)]
        else:
            base = 0 if seed is None else seed
            configs = []
            for r in range(repeat):
                for config in experiment_block(block, seed=base + r):
                    configs.append(config.model_copy(update={"name": f"r{r + 1:02d}_{config.name}"}))
        trials, _ = corpus(configs, out_dir)
    except LeadershipAnalysisError as e:
        raise click.ClickException(f"{e.kind}: {e}")
    click.echo(f"Wrote {len(trials)} trials and manifest.json to {out_dir}")


@cli.command()
@click.argument("results", nargs=-1, required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--grouping", "groupings", multiple=True, type=click.Choice(GROUPINGS),
              help="Repeatable [default: by_position and by_agent]")
@click.option("--emit", default="csv", show_default=True, help="csv and optionally svg")
def summarize(results, out_dir, groupings, emit):
    """Aggregate per-trial leadership JSON into group,mean,sem,n tables."""
    emit = _emit_option(emit)
    groupings = groupings or ("by_position", "by_agent")
    files = []
    for root in results:
        files.extend([root] if root.is_file() else sorted(root.rglob("leadership.json")))
    if not files:
        raise click.ClickException(f"no leadership.json found under {[str(r) for r in results]}")

    by_mode: Dict[str, list] = {}
    params_by_mode: Dict[str, list] = {}
    unreadable = 0
    for path in files:
        try:
            report = reports.read_leadership_report(path)
        except ReportError as e:
            logger.warning(f"Skipping {path}: {e}")
            unreadable += 1
            continue
        by_mode.setdefault(report["mode"], []).extend(reports.scores_from_report(report))
        seen = params_by_mode.setdefault(report["mode"], [])
        if report["params"] not in seen:
            seen.append(report["params"])
    if not by_mode:
        raise click.ClickException(f"none of {len(files)} leadership reports could be read")

    for mode in sorted(by_mode):
        for grouping in groupings:
            table = aggregate(by_mode[mode], grouping)
            record = {"mode": mode, "reports": len(files), "unreadable": unreadable}
            if len(params_by_mode[mode]) == 1:
                record.update(params_by_mode[mode][0])
            else:
                logger.warning(f"{mode} reports were produced with {len(params_by_mode[mode])} parameter sets")
                record["parameter_sets"] = len(params_by_mode[mode])
            if "csv" in emit:
                reports.atomic_write_text(out_dir / f"aggregate_{mode}_{grouping}.csv",
                                          reports.aggregate_csv(table, record))
            if "svg" in emit:
                render.render_aggregate(table, out_dir / f"aggregate_{mode}_{grouping}.svg",
                                        title=f"{mode}, {grouping}")
            click.echo(f"{mode} {grouping}: {len(table.cells)} groups, {table.skipped} scores skipped")


@cli.command(name="render")
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
def render_cmd(out_dir):
    """Re-render SVGs from the CSV and JSON artifacts of an analyze run."""
    rendered = 0
    failures = 0
    for trial_dir in sorted(p for p in out_dir.iterdir() if p.is_dir()):
        try:
            rendered += _render_trial_dir(trial_dir)
        except (ReportError, OSError, KeyError, ValueError) as e:
            logger.error(f"Cannot render {trial_dir}: {e}")
            failures += 1
    click.echo(f"Rendered {rendered} figures")
    if failures:
        raise click.ClickException(f"{failures} trial directories could not be rendered")


def _render_trial_dir(trial_dir: Path) -> int:
    count = 0
    formation: Dict[str, str] = {}
    for mode in MODES:
        report_path = trial_dir / mode / "leadership.json"
        if report_path.exists():
            formation = reports.read_leadership_report(report_path)["meta"]["formation"]
            break

    kin_path = trial_dir / "kinematics.csv"
    if kin_path.exists():
        header, table = reports.read_kinematics_csv(kin_path)
        fs = 1.0 / float(np.median(np.diff(np.unique(table["time"].to_numpy()))))
        positions, velocities = {}, {}
        for agent, rows in table.groupby("id", sort=False):
            positions[agent] = rows[["x", "y"]].to_numpy()
            heading = np.nan_to_num(rows[["heading_x", "heading_y"]].to_numpy())
            velocities[agent] = heading * rows["speed"].to_numpy()[:, None]
        render.render_trajectories(positions, velocities, fs, trial_dir / "trajectories.svg",
                                   formation=formation, title=header.get("trial", trial_dir.name))
        count += 1

    for mode in MODES:
        mode_dir = trial_dir / mode
        if not mode_dir.is_dir():
            continue
        tie_tolerance = get_settings().tie_tolerance
        for heatmap in sorted(mode_dir.glob("heatmap_*.csv")):
            cmap = reports.read_heatmap_csv(heatmap)
            header, _ = reports.read_commented_csv(heatmap)
            tolerance = float(header.get("tie_tolerance", tie_tolerance))
            render.render_heatmap(cmap, heatmap.with_suffix(".svg"), profile=optimal_delay(cmap, tie_tolerance=tolerance))
            count += 1
        leadership_path = mode_dir / "leadership.json"
        if leadership_path.exists():
            report = reports.read_leadership_report(leadership_path)
            render.render_leadership_bars({a: s["index_percent"] for a, s in report["scores"].items()},
                                          mode_dir / "leadership.svg", formation=formation,
                                          title=f"{report['trial']} ({mode})")
            count += 1
        network_path = mode_dir / "network.json"
        if network_path.exists():
            report = reports.read_network_report(network_path)
            render.render_networks(reports.networks_from_report(report), mode_dir / "network.svg",
                                   formation=formation, title=f"{report['trial']} ({mode})")
            count += 1
    return count


def main():
    cli(obj={})


if __name__ == "__main__":
    main()
