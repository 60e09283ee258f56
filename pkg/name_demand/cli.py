"""
Command-line interface: simulate, estimate, benchmark, recover-support.

Settings precedence, highest first: command-line flag, environment
(NAME_DEMAND_JOBS, NAME_DEMAND_LOG_LEVEL, optionally from .env), the
--config JSON file, built-in defaults.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd
import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from . import engine
from .core.config_manager import ConfigManager, RunConfig
from .core.errors import ConfigError, NameDemandError
from .core.logging_setup import configure_logging
from .core.settings import get_settings

app = typer.Typer(
    name="name-demand",
    help=__doc__,
    add_completion=False,
    no_args_is_help=True,
)
console = Console()
err_console = Console(stderr=True)

ConfigOption = typer.Option(None, "--config", "-c", help="Run configuration JSON; flags override its fields.")
OutOption = typer.Option(..., "--out", "-o", help="Output directory (created if missing).")
JobsOption = typer.Option(None, "--jobs", "-j", help="Parallel workers; -1 uses every core.")


def parse_vector(text: Optional[str], field: str) -> Optional[List[float]]:
    """Comma-separated floats; None passes through"""
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of numbers, got '{text}'", field=field) from e


def parse_z0(text: Optional[str]) -> Optional[Union[str, List[float]]]:
    if text is None or text.strip().lower() == "median":
        return None if text is None else "median"
    return parse_vector(text, "estimation.z0")


def resolve_jobs(cli_jobs: Optional[int], config: RunConfig) -> int:
    """--jobs, then NAME_DEMAND_JOBS, then the config's ``jobs``, then every core"""
    if cli_jobs is not None:
        return cli_jobs
    settings = get_settings()
    if "jobs" in settings.model_fields_set:
        return settings.jobs
    if config.jobs is not None:
        return config.jobs
    return settings.jobs


def load(config_path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
    return ConfigManager().load_config(config_path, overrides)


def print_frame(frame: pd.DataFrame, title: str) -> None:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column))
    for _, row in frame.iterrows():
        table.add_row(*[f"{v:.6g}" if isinstance(v, float) else str(v) for v in row.tolist()])
    console.print(table)


def fail(error: NameDemandError) -> None:
    err_console.print(f"[bold red]error:[/] {escape(str(error))}")
    raise typer.Exit(code=1)


@app.callback()
def main(
    log_level: Optional[str] = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
):
    configure_logging(log_level or get_settings().log_level)


@app.command()
def simulate(
    out: Path = OutOption,
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides the experiment seed."),
):
    """Generate one dataset (dataset.json, truth.json, run_config.json)."""
    try:
        run_config = load(config, {"seed": seed})
        paths = engine.run_simulate(run_config, out)
    except NameDemandError as e:
        fail(e)
    console.print(f"Wrote {paths['dataset']}")


@app.command()
def estimate(
    dataset: Path = typer.Option(..., "--dataset", "-d", help="Dataset JSON."),
    out: Path = OutOption,
    config: Optional[Path] = ConfigOption,
    estimator: Optional[str] = typer.Option(None, "--estimator", "-e",
                                            help="name, parametric, bunching or sparse-name."),
    z0: Optional[str] = typer.Option(None, "--z0", help="Base point: 'median' or a comma list."),
    spec: Optional[str] = typer.Option(None, "--spec", help="Parametric basis, e.g. '1+z+z^2'."),
    lam: Optional[float] = typer.Option(None, "--lam", help="Kernel ridge penalty."),
    bandwidth: Optional[float] = typer.Option(None, "--bandwidth", help="RBF bandwidth (median heuristic if unset)."),
    z_grid: Optional[str] = typer.Option(None, "--z-grid", help="Comma list; writes beta_curve.csv."),
    jobs: Optional[int] = JobsOption,
):
    """Estimate demand parameters on a stored dataset."""
    try:
        run_config = load(config, {
            "estimation.estimator": estimator,
            "estimation.z0": parse_z0(z0),
            "estimation.spec": spec,
            "estimation.z_grid": parse_vector(z_grid, "estimation.z_grid"),
            "first_stage.lam": lam,
            "first_stage.bandwidth": bandwidth,
            "jobs": jobs,
        })
        results, _ = engine.run_estimate(run_config, dataset, out, resolve_jobs(jobs, run_config))
    except NameDemandError as e:
        fail(e)
    print_frame(pd.DataFrame([r.to_row() for r in results]), "Estimates")


@app.command()
def benchmark(
    out: Path = OutOption,
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = typer.Option(None, "--seed", help="Replication b uses seed + b."),
    replications: Optional[int] = typer.Option(None, "--replications", "-B", help="Number of replications."),
    jobs: Optional[int] = JobsOption,
):
    """Monte Carlo replications of the configured experiment."""
    try:
        run_config = load(config, {"seed": seed, "replications": replications, "jobs": jobs})
        result = engine.run_benchmark(run_config, out, resolve_jobs(jobs, run_config))
    except NameDemandError as e:
        fail(e)
    print_frame(result.summary, f"{result.experiment} summary")


@app.command("recover-support")
def recover_support(
    dataset: Path = typer.Option(..., "--dataset", "-d", help="Dataset JSON."),
    out: Path = OutOption,
    config: Optional[Path] = ConfigOption,
):
    """Select the covariates that shift preferences (support.json, support_diagnostics.csv)."""
    try:
        run_config = load(config, {})
        support, _ = engine.run_recover_support(dataset, out, run_config)
    except NameDemandError as e:
        fail(e)
    console.print(f"Selected covariates: {list(support.union)}")
