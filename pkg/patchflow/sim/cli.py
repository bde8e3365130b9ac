"""Command line entry point: ``python -m patchflow <command>``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical invalidity.
"""

from __future__ import annotations

import functools
import json
import logging
import math
from pathlib import Path

import click

from . import __version__
from .errors import CheckpointError, ConfigError, InterfaceError, InvalidStateError, LawError, SolveError
from .logging_setup import configure_logging
from .output import to_jsonable, write_json
from .runner import STATUS_COMPLETED, RunSummary, decay_study, init_only, run, verify_identities, verify_operators
from .utils import ScenarioConfig, get_log_level, get_log_path, get_out_dir, load_scenario

try:
    from rich.console import Console
    from rich.table import Table
except Exception:  # pragma: no cover
    Console = None  # type: ignore[assignment]
    Table = None  # type: ignore[assignment]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INVALID = 3


def _load(config: str, seed: int | None, resolution: int | None, norms: list | None = None) -> ScenarioConfig:
    overrides: dict = {}
    if norms:
        overrides["run.jump-norms"] = norms
    if seed is not None:
        overrides["run.seed"] = seed
    if resolution is not None:
        overrides["grid.n"] = resolution
    return load_scenario(config, overrides)


def _setup(cfg: ScenarioConfig | None, out: str | None, quiet: bool) -> Path:
    out_dir = get_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    configure_logging(get_log_level(cfg), get_log_path(cfg, out_dir), quiet=quiet)
    return out_dir


def _guarded(fn):
    """Map library exceptions to exit codes and a one-line message on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, CheckpointError) as e:
            click.echo(f"error: {e}", err=True)
            raise SystemExit(EXIT_CONFIG) from e
        except (InvalidStateError, SolveError, InterfaceError, LawError) as e:
            logger.error("Numerical failure: %s", e)
            click.echo(f"error: {e}", err=True)
            raise SystemExit(EXIT_INVALID) from e

    return wrapper


def _scenario_options(fn):
    options = [
        click.option("--config", "config", required=True, help="Scenario JSON file or bundled scenario name."),
        click.option("--out", "out", default=None, help="Output directory (overrides PATCHFLOW_OUT_DIR)."),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed for the sampling estimators."),
        click.option("--resolution-override", "resolution", type=int, default=None, help="Replace grid.n."),
        click.option("--quiet", is_flag=True, help="Only warnings and errors on the console."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.4g}"
    return str(value)


def _print_summary(summary: RunSummary) -> None:
    if Console is None:
        click.echo(f"{summary.scenario}: {summary.status}")
        for v in summary.verdicts:
            click.echo(f"  {v.name}: {_fmt(v.value)} <= {_fmt(v.threshold)} {'PASS' if v.passed else 'FAIL'}")
        return
    table = Table(title=f"{summary.scenario} ({summary.status})")
    table.add_column("check")
    table.add_column("value", justify="right")
    table.add_column("threshold", justify="right")
    table.add_column("verdict")
    for v in summary.verdicts:
        table.add_row(v.name, _fmt(v.value), _fmt(v.threshold), "[green]PASS" if v.passed else "[red]FAIL")
    Console().print(table)


def _emit(report: dict, quiet: bool) -> None:
    if not quiet:
        click.echo(json.dumps(to_jsonable(report), indent=4, sort_keys=True))


def _status_code(status: str, passed: bool) -> int:
    if status != STATUS_COMPLETED:
        return EXIT_INVALID
    return EXIT_OK if passed else EXIT_CHECK_FAILED


@click.group()
@click.version_option(__version__, prog_name="patchflow")
def cli():
    """Compressible density-patch simulator and its diagnostics."""


@cli.command("run")
@_scenario_options
@_guarded
def run_command(config, out, seed, resolution, quiet):
    """Run a scenario to its end time and write the diagnostics."""
    cfg = _load(config, seed, resolution)
    out_dir = _setup(cfg, out, quiet)
    summary = run(cfg, out_dir)
    if not quiet:
        _print_summary(summary)
    raise SystemExit(_status_code(summary.status, summary.passed))


@cli.command("verify-operators")
@click.option("--out", "out", default=None, help="Output directory.")
@click.option("--seed", type=click.IntRange(min=0), default=0, help="Seed for the random test fields.")
@click.option("--resolution-override", "resolution", type=int, default=64, help="Grid size.")
@click.option("--quiet", is_flag=True)
@_guarded
def verify_operators_command(out, seed, resolution, quiet):
    """Check the spectral symbols and the K, K' identities."""
    out_dir = _setup(None, out, quiet)
    report = verify_operators(n=resolution, seed=seed)
    write_json(out_dir / "operators.json", report)
    _emit(report, quiet)
    raise SystemExit(EXIT_OK if report["passed"] else EXIT_CHECK_FAILED)


@cli.command("verify-identities")
@_scenario_options
@_guarded
def verify_identities_command(config, out, seed, resolution, quiet):
    """Short run checking the energy, flux, vorticity, Hoff and jump identities."""
    cfg = _load(config, seed, resolution)
    out_dir = _setup(cfg, out, quiet)
    summary, report = verify_identities(cfg, out_dir)
    _emit(report, quiet)
    raise SystemExit(_status_code(summary.status, report["passed"]))


@cli.command("decay-study")
@_scenario_options
@click.option("--p", "exponents", multiple=True, help="Jump norm exponent (repeatable; 'inf' allowed).")
@_guarded
def decay_study_command(config, out, seed, resolution, quiet, exponents):
    """Fit the interface jump decay rate and compare it with the predicted bound."""
    parsed = []
    for raw in exponents:
        if raw.strip().lower() == "inf":
            parsed.append("inf")
            continue
        try:
            parsed.append(float(raw))
        except ValueError as e:
            raise ConfigError(f"Invalid configuration: --p {raw!r} is not a number") from e
    cfg = _load(config, seed, resolution, parsed)
    out_dir = _setup(cfg, out, quiet)
    summary, report = decay_study(cfg, out_dir)
    _emit(report, quiet)
    raise SystemExit(_status_code(summary.status, report["passed"]))


@cli.command("init-only")
@_scenario_options
@_guarded
def init_only_command(config, out, seed, resolution, quiet):
    """Build the initial state and write the smallness report."""
    cfg = _load(config, seed, resolution)
    out_dir = _setup(cfg, out, quiet)
    report = init_only(cfg, out_dir)
    _emit(report, quiet)
    raise SystemExit(EXIT_OK)


if __name__ == "__main__":
    cli(prog_name="patchflow")
