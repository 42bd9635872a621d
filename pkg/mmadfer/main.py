"""
MMA-DFER experiment CLI
Trains, ablates and verifies the adaptation stack; writes JSON/CSV/SVG reports
"""
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
import numpy as np
from pydantic import ValidationError

from .config import (ExperimentConfig, SynthConfig, format_validation_error, load_experiment_config,
                     load_preset)
from .data_io import generate_synthetic, template_oracle_accuracy
from .errors import ConfigurationError, MMAError, VerificationFailure
from .experiments import SUITES, load_experiment_data, run_ablation, run_experiment
from .gradcheck import THRESHOLDS, run_gradcheck_suite
from .metrics import count_trainable_params
from .model import build_model
from .reports import load_run_report, summarize, write_run_report
from .settings import Settings, configure_logging, get_settings
from .tensor import precision

logger = logging.getLogger(__name__)


# ============= HELPERS =============

def resolve_config(source: str) -> ExperimentConfig:
    """A JSON file path, or the name of a bundled preset (``toy``, ``paper_scale``)"""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        return load_experiment_config(path)
    return load_preset(source)


def resolve_run_dir(cfg: ExperimentConfig, settings: Settings, override: Optional[Path]) -> Path:
    """--output-dir, then MMA_OUTPUT_ROOT/<name> when set, then the config's output_dir, then runs/<name>"""
    if override is not None:
        return Path(override)
    if "output_root" in settings.model_fields_set:
        return settings.output_root / cfg.name
    if cfg.output_dir is not None:
        return Path(cfg.output_dir)
    return settings.output_root / cfg.name


def handle_errors(command):
    """Map library errors onto the documented exit codes"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ValidationError as e:
            click.echo(f"Invalid configuration:\n{format_validation_error(e)}", err=True)
            sys.exit(ConfigurationError.exit_code)
        except MMAError as e:
            logger.error(f"❌ {type(e).__name__}: {e.detail}")
            click.echo(f"Error: {e.detail}", err=True)
            sys.exit(e.exit_code)
        except Exception as e:
            logger.error(f"Unexpected error: {str(e)}", exc_info=True)
            raise

    return wrapper


# ============= COMMANDS =============

@click.group()
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"]), default=None,
              help="Overrides MMA_LOG_LEVEL")
@click.pass_context
def cli(ctx: click.Context, log_level: Optional[str]):
    """Multimodal adaptation of frozen encoders for dynamic expression recognition"""
    settings = get_settings()
    configure_logging(log_level or settings.log_level)
    ctx.obj = settings


@cli.command()
@click.argument("config")
@click.option("--fold", type=int, default=None, help="Held-out fold (1-5); overrides the config")
@click.option("--seed", type=int, default=None, help="Training seed; overrides the config")
@click.option("--dataset", "dataset_dir", type=click.Path(path_type=Path), default=None,
              help="Dataset directory; overrides data.dataset_dir")
@click.option("--output-dir", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@handle_errors
def train(settings: Settings, config: str, fold: Optional[int], seed: Optional[int],
          dataset_dir: Optional[Path], output_dir: Optional[Path]):
    """Train CONFIG on every fold but one and evaluate the held-out fold"""
    cfg = resolve_config(config)
    document = cfg.model_dump()
    if fold is not None:
        document["data"]["fold"] = fold
    if seed is not None:
        document["seed"] = seed
    if dataset_dir is not None:
        document["data"]["dataset_dir"] = dataset_dir
    cfg = ExperimentConfig.model_validate(document)

    manifest, records = load_experiment_data(cfg)
    logger.info(f"🚀 Training {cfg.name} (fold {cfg.data.fold}, seed {cfg.seed}, {len(records)} samples)")
    report = run_experiment(cfg, manifest, records, progress=settings.progress)
    report_path, metrics_path = write_run_report(report, resolve_run_dir(cfg, settings, output_dir))
    for record in report.evaluations:
        click.echo(f"clips={record.clips}  UAR={record.uar:.4f}  WAR={record.war:.4f}")
    click.echo(f"Report: {report_path}")


@cli.command()
@click.argument("config")
@click.option("--suite", required=True, help=f"One of: {', '.join(SUITES)}")
@click.option("--dataset", "dataset_dir", type=click.Path(path_type=Path), default=None)
@click.option("--output-dir", type=click.Path(path_type=Path), default=None)
@click.pass_obj
@handle_errors
def ablate(settings: Settings, config: str, suite: str, dataset_dir: Optional[Path], output_dir: Optional[Path]):
    """Train every variant of an ablation SUITE on the same fold and seed"""
    if suite not in SUITES:
        raise ConfigurationError(f"Unknown ablation suite '{suite}'; expected one of {', '.join(SUITES)}")
    cfg = resolve_config(config)
    if dataset_dir is not None:
        cfg = ExperimentConfig.model_validate({**cfg.model_dump(), "data": {**cfg.data.model_dump(),
                                                                            "dataset_dir": dataset_dir}})
    out_root = output_dir or (settings.output_root / f"{cfg.name}-ablation-{suite}")
    reports = run_ablation(suite, cfg, out_root, progress=settings.progress)
    click.echo(f"{'variant':<16}{'UAR':>8}{'WAR':>8}{'params':>12}")
    for report in reports:
        one = report.evaluation(1)
        click.echo(f"{report.variant:<16}{one.uar:>8.4f}{one.war:>8.4f}{report.trainable_params:>12}")


@cli.command()
@click.option("--precision", "dtype", type=click.Choice(["float32", "float64"]), default="float64")
@click.option("--seed", type=int, default=0)
@click.option("--only", multiple=True, help="Restrict to the named cases")
@handle_errors
def gradcheck(dtype: str, seed: int, only: tuple[str, ...]):
    """Compare analytic gradients of every differentiable op against finite differences"""
    with precision(dtype):
        results = run_gradcheck_suite(seed, only or None)
    threshold = THRESHOLDS[np.dtype(dtype)]
    if only and not results:
        raise ConfigurationError(f"No gradcheck case named {', '.join(only)}")

    offending = []
    for name, result in results.items():
        status = "ok" if result.passed(threshold) else "FAIL"
        click.echo(f"{name:<20}{result.max_rel_error:>12.3e}{result.max_entry_error:>12.3e}  "
                   f"{result.worst_param or '-':<32}{status}")
        if status == "FAIL":
            offending.append(name)
    worst = max(r.max_rel_error for r in results.values())
    click.echo(f"max relative error {worst:.3e} (threshold {threshold:.0e}, {dtype})")
    if offending:
        raise VerificationFailure(f"Gradient check failed for: {', '.join(offending)}", offending=offending)


@cli.command()
@click.argument("config")
@click.option("--json", "as_json", is_flag=True, help="Print the breakdown as JSON")
@handle_errors
def params(config: str, as_json: bool):
    """Print the trainable-parameter breakdown of CONFIG"""
    cfg = resolve_config(config)
    breakdown = count_trainable_params(build_model(cfg.model, seed=cfg.seed))
    if as_json:
        click.echo(json.dumps({"total": breakdown.total, "groups": breakdown.groups}, indent=2))
        return
    for group, count in breakdown.groups.items():
        click.echo(f"{group:<24}{count:>12,}")
    click.echo(f"{'total':<24}{breakdown.total:>12,}")


@cli.command()
@click.argument("out_dir", type=click.Path(path_type=Path))
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="SynthConfig JSON; defaults otherwise")
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@handle_errors
def synth(out_dir: Path, config_path: Optional[Path], samples: Optional[int], seed: Optional[int]):
    """Write a synthetic cross-modal dataset to OUT_DIR"""
    document = {}
    if config_path is not None:
        if not config_path.is_file():
            raise ConfigurationError(f"Config file not found: {config_path}")
        try:
            document = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {config_path} is not valid JSON: {e}")
    if samples is not None:
        document["samples"] = samples
    if seed is not None:
        document["seed"] = seed
    cfg = SynthConfig.model_validate(document)

    dataset = generate_synthetic(cfg, out_dir)
    for modality in ("video", "audio", "joint"):
        accuracy = template_oracle_accuracy(dataset.records, dataset.video_templates, dataset.audio_templates,
                                            cfg.num_classes, modality)
        click.echo(f"{modality}-template oracle accuracy: {accuracy:.3f}")
    click.echo(f"Wrote {len(dataset.records)} samples to {out_dir}")


@cli.command()
@click.argument("runs", nargs=-1, required=True, type=click.Path(path_type=Path))
@click.option("--output-dir", type=click.Path(path_type=Path), default=None)
@click.option("--config", "config_source", default=None,
              help="Refuse runs whose digest differs from this config")
@click.pass_obj
@handle_errors
def report(settings: Settings, runs: tuple[Path, ...], output_dir: Optional[Path], config_source: Optional[str]):
    """Summarize RUNS (report.json files or run directories) into summary.csv and summary.svg"""
    expected = resolve_config(config_source).digest() if config_source else None
    reports = [load_run_report(path) for path in runs]
    csv_path, svg_path = summarize(reports, output_dir or settings.output_root, expected)
    click.echo(f"Summary: {csv_path}")
    click.echo(f"Chart: {svg_path}")


if __name__ == "__main__":
    cli()
