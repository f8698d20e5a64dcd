"""Command-line interface for the federated contribution simulator"""

import logging
import sys
from dataclasses import replace
from typing import Callable, Optional

import click

from . import __version__
from .core.config import MAX_AUDIT_PARTICIPANTS, ExperimentConfig, load_config
from .core.exceptions import ConfigError
from .core.runner import ExperimentRunner
from .output.results import ResultWriter, class_labels
from .utils.run_logger import RunLogger

EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _config_options(command: Callable) -> Callable:
    """Config argument plus the overrides shared by every command"""
    command = click.option('--workers', type=click.IntRange(min=1),
                           help='Parallel workers for local training (overrides config)')(command)
    command = click.option('--out', '-o', type=click.Path(file_okay=False),
                           help='Output directory (overrides config)')(command)
    command = click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1),
                           help='Master seed (overrides config)')(command)
    command = click.argument('config', type=click.Path(dir_okay=False))(command)
    return command


def _load(config_path: str, seed: Optional[int] = None, out: Optional[str] = None,
          workers: Optional[int] = None) -> ExperimentConfig:
    """Load a config and apply command-line overrides; config problems exit with code 2"""
    try:
        config = load_config(config_path)
    except ConfigError as e:
        click.echo(f"❌ Configuration error in {config_path}: {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    except FileNotFoundError as e:
        click.echo(f"❌ {e}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)

    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["output_dir"] = out
    if workers is not None:
        overrides["workers"] = workers
    return replace(config, **overrides)


def _run_logger(config: ExperimentConfig) -> Optional[RunLogger]:
    if not config.logging.enabled:
        return None
    run_logger = RunLogger(
        log_directory=config.logging.directory,
        rolling=config.logging.rolling.value,
        max_age_days=config.logging.max_age_days,
    )
    run_logger.cleanup_old_logs()
    return run_logger


def _fail(error: Exception) -> None:
    if isinstance(error, ConfigError):
        click.echo(f"❌ Configuration error: {error}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    click.echo(f"Error: {error}", err=True)
    sys.exit(EXIT_RUNTIME_ERROR)


def _report_written(writer: ResultWriter) -> None:
    click.echo(f"📁 Wrote {len(writer.written)} files to {writer.directory}")
    for path in writer.written:
        click.echo(f"  - {path}")


def _print_status(runner: Optional[ExperimentRunner]) -> None:
    if runner is None:
        return
    click.echo("📈 Run summary:")
    for name, stats in runner.get_status().items():
        line = f"  - {name}: {stats['rounds_completed']} rounds, {stats['error_count']} errors"
        if stats["last_error"]:
            line += f" (last: {stats['last_error']})"
        click.echo(line)


@click.group()
@click.version_option(version=__version__)
@click.option('--verbose', '-v', is_flag=True, help='Log per-round detail')
def main(verbose: bool):
    """Fed Contrib Sim - class-specific contribution assessment for federated learning"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command()
@_config_options
def run(config: str, seed: Optional[int], out: Optional[str], workers: Optional[int]):
    """Run every configured strategy and write metrics, gamma and fairness files"""
    click.echo(f"Loading configuration from {config}")
    experiment = _load(config, seed, out, workers)
    runner = None
    try:
        runner = ExperimentRunner(experiment, _run_logger(experiment))
        task = runner.initialize()
        click.echo(f"📊 {task.n} participants, {task.spec.num_classes} classes, "
                   f"{len(experiment.strategies)} strategies (seed {experiment.seed})")

        writer = ResultWriter(experiment.output_dir)
        logs = []
        for strategy in experiment.strategies:
            log = runner.run_strategy(strategy)
            writer.write_metrics(log)
            writer.write_gamma(log)
            logs.append(log)
            flag = " (degenerate)" if log.fairness.degenerate else ""
            local_flag = " (degenerate)" if log.local_fairness.degenerate else ""
            click.echo(f"✅ {log.strategy}: global balanced acc "
                       f"{log.records[-1].global_balanced_acc:.4f}, "
                       f"fairness r={log.fairness.r:.4f}{flag}, "
                       f"local r={log.local_fairness.r:.4f}{local_flag}")
        writer.write_fairness(logs)
    except Exception as e:
        _print_status(runner)
        _fail(e)
    _print_status(runner)
    _report_written(writer)


@main.command('shapley-audit')
@_config_options
def shapley_audit(config: str, seed: Optional[int], out: Optional[str], workers: Optional[int]):
    """Compare exact class-wise Shapley values with CSSV and CGSV on one trajectory"""
    experiment = _load(config, seed, out, workers)
    if experiment.participants > MAX_AUDIT_PARTICIPANTS:
        _fail(ConfigError(
            f"shapley audit is capped at {MAX_AUDIT_PARTICIPANTS} participants, "
            f"got {experiment.participants}"
        ))
    try:
        runner = ExperimentRunner(experiment, _run_logger(experiment))
        payload = runner.audit()
        writer = ResultWriter(experiment.output_dir)
        writer.write_audit(payload)
    except Exception as e:
        _fail(e)

    agreement = payload["agreement"]
    classes = len(agreement["cssv_vs_exact"])
    calls = payload["utility_calls"]
    click.echo(f"✅ Audit of '{payload['strategy']}' after {payload['rounds']} rounds")
    click.echo(f"📊 Top contributor agreement with exact Shapley: "
               f"CSSV {agreement['cssv_matches']}/{classes}, "
               f"CGSV {agreement['cgsv_matches']}/{classes}")
    click.echo(f"📊 Utility calls: exact {calls['exact']}, CSSV {calls['cssv']}")
    _report_written(writer)


@main.command('partition-report')
@_config_options
def partition_report(config: str, seed: Optional[int], out: Optional[str], workers: Optional[int]):
    """Write the participant x class count table without training"""
    experiment = _load(config, seed, out, workers)
    try:
        runner = ExperimentRunner(experiment)
        counts = runner.partition_table()
        writer = ResultWriter(experiment.output_dir)
        writer.write_partition(counts)
    except Exception as e:
        _fail(e)

    click.echo("participant," + ",".join(class_labels(counts.shape[1])))
    for i, row in enumerate(counts):
        click.echo(f"{i}," + ",".join(str(int(c)) for c in row))
    _report_written(writer)


@main.command()
@click.argument('config', type=click.Path(dir_okay=False))
def validate(config: str):
    """Validate a configuration file without running anything"""
    experiment = _load(config)
    click.echo("✅ Configuration is valid")
    data = experiment.data
    if data.source.value == "blobs":
        click.echo(f"📊 Data: blobs, {data.num_classes} classes, {data.input_dim} features, "
                   f"{data.per_class} samples per class")
    else:
        click.echo(f"📊 Data: csv {data.path} (label column '{data.label_column}')")
    click.echo(f"👥 Participants: {experiment.participants}, "
               f"partition: {experiment.partition.kind.value}")
    click.echo(f"🧠 Model: {experiment.model.kind.value}")
    click.echo(f"📚 Found {len(experiment.strategies)} strategies:")
    for strategy in experiment.strategies:
        click.echo(f"  - {strategy.label} ({strategy.kind.value}, T={strategy.rounds}, "
                   f"K={strategy.local_epochs}, eta={strategy.eta}, mu={strategy.mu})")
    for adversary in experiment.adversaries:
        click.echo(f"  ⚠️  participant {adversary.participant} is a {adversary.kind.value} adversary")


if __name__ == '__main__':
    main()
