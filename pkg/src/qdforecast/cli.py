"""Command-line entry points.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
"""

import json
import sys

import click
import numpy as np

from .dataset import FULL, POPULATION_ONLY
from .hpo import HyperPoint
from .lstm import TrainingDivergence
from .pipeline import (NumericalFailure, RunConfig, run_forecast, run_generate,
                       run_hpo, run_report, run_slice, run_sweep_history,
                       run_train)


def _load_config(config_path, seed, out, paper_scale, feature_mode, **overrides):
    if config_path:
        cfg = RunConfig.from_file(config_path)
    else:
        cfg = RunConfig()
    if seed is not None:
        cfg.master_seed = seed
    if paper_scale:
        cfg.paper_scale = True
        cfg.__post_init__()
    if feature_mode is not None:
        cfg.feature_mode = feature_mode
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON run configuration.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed.")(fn)
    fn = click.option("--out", required=True, type=click.Path(),
                      help="Output directory.")(fn)
    fn = click.option("--paper-scale", is_flag=True, default=False,
                      help="Full-scale settings (100 bath modes, 20x100 campaign).")(fn)
    fn = click.option("--feature-mode", type=click.Choice([FULL, POPULATION_ONLY]),
                      default=None)(fn)
    return fn


@click.group()
def cli():
    """Quantum-dynamics trajectory generation and LSTM ensemble forecasting."""


@cli.command()
@common_options
def generate(config_path, seed, out, paper_scale, feature_mode):
    """Propagate the configured model and write trajectory.csv."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode)
    path = run_generate(cfg, out)
    click.echo(f"wrote {path}")


@cli.command("slice")
@common_options
@click.option("--trajectory", required=True, type=click.Path(exists=True))
@click.option("--memory-fs", type=float, required=True,
              help="Window length in femtoseconds.")
def slice_cmd(config_path, seed, out, paper_scale, feature_mode, trajectory, memory_fs):
    """Slice a trajectory into windowed training data."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode)
    path = run_slice(cfg, trajectory, out, memory_fs)
    click.echo(f"wrote {path}")


@cli.command()
@common_options
@click.option("--trajectory", required=True, type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["rs", "sa", "tpe", "bo"]), default=None)
@click.option("--tasks", "n_tasks", type=int, default=None)
@click.option("--iters", type=int, default=None)
def hpo(config_path, seed, out, paper_scale, feature_mode, trajectory,
        method, n_tasks, iters):
    """Run a hyperparameter campaign against a trajectory's history."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode,
                       hpo_method=method, n_tasks=n_tasks, iters=iters)
    campaign, log_path = run_hpo(cfg, trajectory, out)
    best = min(t.loss for task in campaign.tasks for t in task)
    click.echo(f"wrote {log_path} (best loss {best:.6g})")


@cli.command()
@common_options
@click.option("--trajectory", required=True, type=click.Path(exists=True))
@click.option("--widths", required=True,
              help="Comma-separated layer widths, e.g. 40,40.")
@click.option("--memory-fs", type=float, required=True)
def train(config_path, seed, out, paper_scale, feature_mode, trajectory,
          widths, memory_fs):
    """Train one network at an explicit hyperparameter point."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode)
    try:
        parsed = tuple(int(w) for w in widths.split(","))
    except ValueError as exc:
        raise click.UsageError(f"bad --widths {widths!r}: {exc}") from exc
    point = HyperPoint(widths=parsed, memory_fs=memory_fs)
    path, trial = run_train(cfg, trajectory, out, point)
    click.echo(f"wrote {path} (external loss {trial.loss:.6g})")


@cli.command()
@common_options
@click.option("--trajectory", required=True, type=click.Path(exists=True))
@click.option("--campaign", required=True, type=click.Path(exists=True),
              help="campaign.jsonl from the hpo subcommand.")
@click.option("--ensemble", "ensemble_label", default=None,
              help='Ensemble spec label, e.g. "(SA-H3)xBT10".')
def forecast(config_path, seed, out, paper_scale, feature_mode, trajectory,
             campaign, ensemble_label):
    """Build an ensemble and forecast beyond the training history."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode,
                       ensemble_label=ensemble_label)
    _, summary = run_forecast(cfg, trajectory, campaign, out)
    click.echo(json.dumps(summary))


@cli.command("sweep-history")
@common_options
@click.option("--trajectory", required=True, type=click.Path(exists=True))
@click.option("--lengths", required=True,
              help="Comma-separated history lengths in fs, e.g. 200,350.")
def sweep_history(config_path, seed, out, paper_scale, feature_mode,
                  trajectory, lengths):
    """Repeat hpo + forecast for several history lengths."""
    cfg = _load_config(config_path, seed, out, paper_scale, feature_mode)
    try:
        parsed = [float(x) for x in lengths.split(",")]
    except ValueError as exc:
        raise click.UsageError(f"bad --lengths {lengths!r}: {exc}") from exc
    report_path, rows, failures = run_sweep_history(cfg, trajectory, parsed, out)
    click.echo(f"wrote {report_path}")
    if failures:
        click.echo(f"failed lengths: {sorted(failures)}", err=True)
        sys.exit(2)


@cli.command()
@click.option("--out", required=True, type=click.Path(exists=True),
              help="Directory tree containing run outputs.")
def report(out):
    """Aggregate manifests and summaries into report.json."""
    path = run_report(out)
    click.echo(f"wrote {path}")


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Run the HTTP service wrapping the same pipeline."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except (NumericalFailure, TrainingDivergence, np.linalg.LinAlgError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
