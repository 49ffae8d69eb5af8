"""Command line interface for Arterial Risk."""

import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import click
from rich.console import Console
from rich.logging import RichHandler

from . import __version__
from .config import RunConfig, SamplerConfig, config_manager
from .models.model_spec import ModelSpec
from .models.posterior import ChainSet, EvaluationReport, FitResult
from .models.world import WorldConfig
from .services.case_control_builder import CaseControlBuilder, study_window
from .services.evaluator import evaluate
from .services.export_service import ExportService
from .services.feature_extractor import FeatureExtractor
from .services.model_sweep import compare_slices, random_fixed_combinations, sweep
from .services.posterior_analyzer import fit_model, posterior_mean, posterior_means, summarize
from .services.report_generator import ReportGenerator
from .services.world_simulator import WorldSimulator
from .utils.error_handling import (
    ConfigurationError,
    create_user_friendly_error,
    is_configuration_error,
    safe_json_load,
)
from .utils.file_utils import FileProcessor

logger = logging.getLogger(__name__)

EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _configure_logging(verbose: bool):
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RichHandler):
            root.removeHandler(handler)
    root.addHandler(RichHandler(console=Console(stderr=True), show_path=False))
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def _fail(ctx: click.Context, action: str, error: Exception):
    """Report an error and exit with 2 for configuration problems, 1 otherwise."""
    click.echo(f"Error {action}: {create_user_friendly_error(error)}", err=True)
    if ctx.obj.get("verbose"):
        details = getattr(error, "details", None)
        click.echo(f"Details: {details or str(error)}", err=True)
    ctx.exit(EXIT_CONFIG_ERROR if is_configuration_error(error) else EXIT_RUNTIME_ERROR)


def _sampler_config(ctx: click.Context, path: Optional[str], seed: Optional[int]) -> SamplerConfig:
    """Sampler settings: configured defaults, then sampler.json, then --seed."""
    data = ctx.obj["config"].sampler.model_dump()
    if path:
        data.update(safe_json_load(Path(path)))
    if seed is not None:
        data['seed'] = seed
    sampler = SamplerConfig.model_validate(data)
    if sampler.seed is None:
        raise ConfigurationError("A seed is required: pass --seed or set it in sampler.json")
    return sampler


def _model_spec(path: str, slice_index: Optional[int] = None) -> ModelSpec:
    spec = FileProcessor.load_config_model(path, ModelSpec)
    return spec.with_slice(slice_index) if slice_index is not None else spec


def _output(ctx: click.Context, out: Optional[str]) -> ExportService:
    return ExportService(out or ctx.obj["config"].paths.output_dir)


@click.group()
@click.version_option(version=__version__)
@click.option(
    "--settings", "-s", type=click.Path(exists=True), help="Path to configuration file (TOML)"
)
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.pass_context
def cli(ctx: click.Context, settings: Optional[str], verbose: bool):
    """Arterial Risk - Bayesian crash risk models for signalized arterials.

    Builds matched case-control datasets from Bluetooth, signal, volume and
    weather logs, fits conditional and random-parameter logistic models by
    MCMC, and compares them by DIC and ROC/AUC.
    """
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    ctx.obj["console"] = Console()
    _configure_logging(verbose)

    try:
        if settings:
            config_manager.config_path = settings
            config_manager.reload()

        app_config = config_manager.config
        ctx.obj["config"] = app_config
        ctx.obj["console"] = Console(no_color=not app_config.ui.colors)
        ctx.obj["report_generator"] = ReportGenerator(
            ctx.obj["console"], app_config.export.decimal_places, app_config.ui.table_style
        )

    except Exception as e:
        error_msg = create_user_friendly_error(e)
        click.echo(f"Error initializing Arterial Risk: {error_msg}", err=True)
        if verbose:
            click.echo(f"Details: {str(e)}", err=True)
        ctx.exit(EXIT_CONFIG_ERROR)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="World configuration (world.json)")
@click.option("--seed", type=int, default=None, help="Seed (overrides world.json)")
@click.option("--out", type=click.Path(), required=True, help="Output directory")
@click.pass_context
def simulate(ctx: click.Context, config_path: str, seed: Optional[int], out: str):
    """Generate a synthetic corridor with known crash-risk coefficients."""
    try:
        world = FileProcessor.load_config_model(config_path, WorldConfig, {'seed': seed})
        manifest = WorldSimulator(world).run(out)
        ctx.obj["console"].print(
            f"[green]Simulated {world.n_segments} segments over {world.weeks} weeks: "
            f"{manifest.n_crashes} crashes ({manifest.mode.value} mode)[/green]"
        )
        click.echo(f"Output: {out}")

    except Exception as e:
        _fail(ctx, "simulating world", e)


@cli.command()
@click.option("--logs", "logs_dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Directory with the corridor log CSVs")
@click.option("--crashes", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Crash log CSV (defaults to crashes.csv in the log directory)")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Run configuration (run.json)")
@click.option("--seed", type=int, default=None, help="Seed (overrides run.json)")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.pass_context
def prepare(ctx: click.Context, logs_dir: Optional[str], crashes: Optional[str],
            config_path: Optional[str], seed: Optional[int], out: Optional[str]):
    """Build the matched case-control dataset (dataset.csv, attrition.json)."""
    try:
        settings = ctx.obj["config"]
        if config_path:
            data = safe_json_load(Path(config_path))
        else:
            data = {
                'case_control': settings.case_control.model_dump(),
                'features': settings.features.model_dump(),
            }
        overrides = {'seed': seed, 'logs_dir': logs_dir, 'crashes': crashes}
        data.update({k: v for k, v in overrides.items() if v is not None})
        run = RunConfig.model_validate(data)
        if run.logs_dir is None:
            raise ConfigurationError("No log directory: pass --logs or set logs_dir in run.json")

        logs = FileProcessor.load_logs(run.logs_dir)
        crash_log = FileProcessor.load_crashes(run.crashes or Path(run.logs_dir) / "crashes.csv")
        extractor = FeatureExtractor(logs, run.features)
        start, end = study_window(logs)
        builder = CaseControlBuilder(extractor, run.case_control)
        dataset, report = builder.build(crash_log, start, end, run.seed)

        export_service = _output(ctx, out)
        export_service.export_dataset(dataset)
        export_service.export_attrition(report)
        ctx.obj["report_generator"].display_attrition(report)
        click.echo(f"Output: {export_service.output_dir}")

    except Exception as e:
        _fail(ctx, "preparing dataset", e)


@cli.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Matched dataset (dataset.csv)")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="Model specification (model.json)")
@click.option("--sampler", "sampler_path", type=click.Path(exists=True), default=None,
              help="Sampler settings (sampler.json)")
@click.option("--seed", type=int, default=None, help="Seed (overrides sampler.json)")
@click.option("--slice", "slice_index", type=click.IntRange(1, 4), default=None,
              help="Time slice of the covariates")
@click.option("--threads", type=click.IntRange(min=1), default=1, help="Worker processes for chains")
@click.option("--label", default="", help="Model name used in reports")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.pass_context
def fit(ctx: click.Context, dataset_path: str, config_path: str, sampler_path: Optional[str],
        seed: Optional[int], slice_index: Optional[int], threads: int, label: str, out: Optional[str]):
    """Fit a model by MCMC (chains.csv, summary.json)."""
    try:
        sampler = _sampler_config(ctx, sampler_path, seed)
        spec = _model_spec(config_path, slice_index)
        dataset = FileProcessor.load_dataset(dataset_path)
        chains, result = fit_model(spec, dataset, sampler, sampler.seed, threads, label)

        export_service = _output(ctx, out)
        export_service.export_chains(chains)
        export_service.export_json(result, "summary.json")
        ctx.obj["report_generator"].display_fit(result)
        click.echo(f"Output: {export_service.output_dir}")

    except Exception as e:
        _fail(ctx, "fitting model", e)


def _fit_from_chains(chains_path: str, spec: ModelSpec, label: str) -> Tuple[FitResult, ChainSet]:
    """Fit result rebuilt from stored draws and, when present, phi_means.csv."""
    chains = FileProcessor.load_chains(chains_path, spec)
    result = FitResult(
        label=label or spec.family.value,
        spec=spec,
        sampler={'n_chains': chains.n_chains, 'n_iter': chains.n_iter,
                 'burn_in': chains.burn_in, 'thin': chains.thin},
        summary=summarize(chains),
        posterior_means=posterior_means(chains, spec),
        mean_deviance=posterior_mean(chains.deviance.reshape(-1)),
    )
    return result, chains


@cli.command("evaluate")
@click.argument("summaries", nargs=-1, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Matched dataset (dataset.csv)")
@click.option("--chains", "chains_path", type=click.Path(exists=True), default=None,
              help="Stored draws (chains.csv) instead of summary files")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Model specification for --chains (model.json)")
@click.option("--slice", "slice_index", type=click.IntRange(1, 4), default=None,
              help="Time slice for --chains")
@click.option("--scoring", type=click.Choice(["leave_one_out", "include_all"]), default=None,
              help="Reference mean used to score controls")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.pass_context
def evaluate_command(ctx: click.Context, summaries: Tuple[str, ...], dataset_path: str,
                     chains_path: Optional[str], config_path: Optional[str],
                     slice_index: Optional[int], scoring: Optional[str], out: Optional[str]):
    """Evaluate fitted models by DIC and ROC/AUC (report.json, report.md, roc.csv).

    SUMMARIES: One or more summary.json files written by ``fit``
    """
    try:
        control_scoring = scoring or ctx.obj["config"].case_control.control_scoring
        dataset = FileProcessor.load_dataset(dataset_path)
        reports: List[EvaluationReport] = []

        if chains_path:
            if not config_path:
                raise ConfigurationError("--chains needs the model specification (--config)")
            fit_result, chains = _fit_from_chains(chains_path, _model_spec(config_path, slice_index), "")
            reports.append(evaluate(fit_result, dataset, control_scoring, chains=chains))
        for path in summaries:
            fit_result = FitResult.model_validate(safe_json_load(Path(path)))
            reports.append(evaluate(fit_result, dataset, control_scoring))
        if not reports:
            raise ConfigurationError("Nothing to evaluate: pass summary.json files or --chains")

        export_service = _output(ctx, out)
        ctx.obj["report_generator"].write_evaluation(reports, export_service)
        ctx.obj["report_generator"].display_evaluation(reports)
        click.echo(f"Output: {export_service.output_dir}")

    except Exception as e:
        _fail(ctx, "evaluating models", e)


@cli.command("sweep")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Matched dataset (dataset.csv)")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="Base model specification (model.json)")
@click.option("--combinations", "combinations_path", type=click.Path(exists=True), default=None,
              help="JSON list of random covariate sets")
@click.option("--max-fixed", type=click.IntRange(min=0), default=None,
              help="Try every fixed subset up to this size")
@click.option("--sampler", "sampler_path", type=click.Path(exists=True), default=None,
              help="Sampler settings (sampler.json)")
@click.option("--seed", type=int, default=None, help="Seed (overrides sampler.json)")
@click.option("--slice", "slice_index", type=click.IntRange(1, 4), default=None,
              help="Time slice of the covariates")
@click.option("--threads", type=click.IntRange(min=1), default=1, help="Worker processes for chains")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.pass_context
def sweep_command(ctx: click.Context, dataset_path: str, config_path: str, combinations_path: Optional[str],
                  max_fixed: Optional[int], sampler_path: Optional[str], seed: Optional[int],
                  slice_index: Optional[int], threads: int, out: Optional[str]):
    """Compare random/fixed designations of the covariates (sweep.csv, sweep.json)."""
    try:
        sampler = _sampler_config(ctx, sampler_path, seed)
        spec = _model_spec(config_path, slice_index)
        if combinations_path:
            combinations = safe_json_load(Path(combinations_path))
            if not isinstance(combinations, list):
                raise ConfigurationError("Combinations must be a JSON list of covariate lists")
        else:
            combinations = random_fixed_combinations(spec.covariates, max_fixed)
        dataset = FileProcessor.load_dataset(dataset_path)
        rows = sweep(spec, dataset, combinations, sampler, sampler.seed, threads,
                     ctx.obj["config"].case_control.control_scoring)

        export_service = _output(ctx, out)
        export_service.export_sweep(rows)
        ctx.obj["report_generator"].display_sweep(rows)
        click.echo(f"Output: {export_service.output_dir}")

    except Exception as e:
        _fail(ctx, "sweeping combinations", e)


@cli.command("compare-slices")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Matched dataset (dataset.csv)")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True,
              help="Model specification (model.json)")
@click.option("--sampler", "sampler_path", type=click.Path(exists=True), default=None,
              help="Sampler settings (sampler.json)")
@click.option("--seed", type=int, default=None, help="Seed (overrides sampler.json)")
@click.option("--threads", type=click.IntRange(min=1), default=1, help="Worker processes for chains")
@click.option("--out", type=click.Path(), default=None, help="Output directory")
@click.pass_context
def compare_slices_command(ctx: click.Context, dataset_path: str, config_path: str,
                           sampler_path: Optional[str], seed: Optional[int], threads: int,
                           out: Optional[str]):
    """Fit the same model on each time slice and compare AUC."""
    try:
        sampler = _sampler_config(ctx, sampler_path, seed)
        spec = _model_spec(config_path)
        dataset = FileProcessor.load_dataset(dataset_path)
        reports = compare_slices(spec, dataset, sampler, sampler.seed, threads,
                                 control_scoring=ctx.obj["config"].case_control.control_scoring)

        export_service = _output(ctx, out)
        ctx.obj["report_generator"].write_evaluation(reports, export_service)
        ctx.obj["report_generator"].display_slices(reports)
        click.echo(f"Output: {export_service.output_dir}")

    except Exception as e:
        _fail(ctx, "comparing slices", e)


@cli.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Matched dataset (dataset.csv)")
@click.option("--out", type=click.Path(), default=None, help="Also write describe.csv and crash_counts.csv")
@click.pass_context
def describe(ctx: click.Context, dataset_path: str, out: Optional[str]):
    """Descriptive statistics of the covariates per time slice."""
    try:
        dataset = FileProcessor.load_dataset(dataset_path)
        report_generator = ctx.obj["report_generator"]
        stats, counts = report_generator.describe_dataset(dataset)
        report_generator.display_description(stats, counts)
        if out:
            export_service = ExportService(out)
            export_service.write_frame(stats, export_service.output_dir / "describe.csv")
            export_service.write_frame(counts, export_service.output_dir / "crash_counts.csv")

    except Exception as e:
        _fail(ctx, "describing dataset", e)


@cli.group()
def config():
    """Configuration management commands."""
    pass


@config.command("show")
@click.option("--json", "as_json", is_flag=True, help="Print as JSON")
@click.pass_context
def config_show(ctx: click.Context, as_json: bool):
    """Show current configuration."""
    try:
        settings = ctx.obj["config"]
        if as_json:
            click.echo(json.dumps(settings.model_dump(mode='json'), indent=2, sort_keys=True))
            return
        click.echo(f"Configuration file: {config_manager.config_path}")
        table = ctx.obj["report_generator"].table_formatter.create_config_table(
            settings.model_dump(mode='json')
        )
        ctx.obj["console"].print(table)

    except Exception as e:
        _fail(ctx, "showing configuration", e)


def main():
    """Entry point for the CLI application."""
    cli()
