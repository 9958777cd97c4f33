import logging
from pathlib import Path

import click

from app.config.loader import load_experiment_config
from app.config.settings import settings
from app.exceptions import PipelineException
from app.services.pipeline_service import BASELINES, RunLayout, pipeline_service
from app.services.training_utils import configure_determinism

logger = logging.getLogger(__name__)


class PipelineGroup(click.Group):
    """Turns pipeline errors into their exit status instead of a traceback"""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except PipelineException as exc:
            logger.debug("Pipeline error", exc_info=True)
            click.echo(f"Error: {exc.detail}", err=True)
            ctx.exit(exc.status_code)


def _resolve_config(value):
    """A path, or the name of a shipped reference config"""
    if value and value in settings.REFERENCE_CONFIGS:
        return str(settings.REFERENCE_CONFIGS[value])
    return value


@click.group(cls=PipelineGroup)
@click.option("--config", "config_path", default=None, help="Config YAML, or polygon / sprite / sprite_vr")
@click.option("--seed", type=int, default=None, help="Overrides train.seed")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Run directory")
@click.option("--resolution", type=int, default=None, help="Overrides train.resolution")
@click.option("--width-mult", type=float, default=None, help="Overrides train.width_multiplier")
@click.option("--device", default=None, help="Overrides device")
@click.option("--deterministic/--no-deterministic", default=None, help="Deterministic kernels")
@click.pass_context
def cli(ctx, config_path, seed, out, resolution, width_mult, device, deterministic):
    """Tied output synthesis: data, training, baselines and evaluation"""
    config = load_experiment_config(
        _resolve_config(config_path),
        {"seed": seed, "resolution": resolution, "width_mult": width_mult, "device": device},
    )
    if deterministic if deterministic is not None else settings.DETERMINISTIC:
        configure_determinism(True)
    ctx.obj = {"config": config, "layout": RunLayout(Path(out or settings.OUT_DIR))}


@cli.command("gen-data")
@click.pass_obj
def gen_data(obj):
    """Render engine pairs, target renders and photo pools"""
    shards = pipeline_service.gen_data(obj["config"], obj["layout"])
    click.echo(f"Generated shards: {', '.join(shards)}")


@cli.command("train-e")
@click.option("--resume", is_flag=True, help="Continue from the last checkpoint")
@click.pass_obj
def train_e(obj, resume):
    """Train the engine surrogate e"""
    fidelity = pipeline_service.train_e(obj["config"], obj["layout"], resume, obj["config"].device)
    click.echo(f"Surrogate held-out MSE: {fidelity.mse_01:.5f} ([0,1]) / {fidelity.mse_pm1:.5f} ([-1,1])")


@cli.command("train-f")
@click.pass_obj
def train_f(obj):
    """Train the perceptual maps f and f_eval"""
    roles = pipeline_service.train_f(obj["config"], obj["layout"], obj["config"].device)
    click.echo(f"Trained feature maps: {', '.join(roles)}")


@cli.command("train-tos")
@click.option("--resume", is_flag=True, help="Continue from the last checkpoint")
@click.pass_obj
def train_tos(obj, resume):
    """Train g, c and d"""
    report = pipeline_service.train_tos(obj["config"], obj["layout"], resume, obj["config"].device)
    click.echo(f"TOS trained for {len(report.steps)} steps")


@cli.command("train-baseline")
@click.argument("kind", type=click.Choice(BASELINES))
@click.option("--resume", is_flag=True, help="Continue from the last checkpoint")
@click.pass_obj
def train_baseline(obj, kind, resume):
    """Train one comparison system"""
    report = pipeline_service.train_baseline(kind, obj["config"], obj["layout"], resume, obj["config"].device)
    click.echo(f"Baseline {kind} trained for {len(report.steps)} steps")


@cli.command("evaluate")
@click.pass_obj
def evaluate(obj):
    """Compute the evaluation report from the trained checkpoints"""
    report = pipeline_service.evaluate(obj["config"], obj["layout"], obj["config"].device)
    for row in report.rows:
        click.echo(f"{row.method}: G(x) rank={row.g_rank} e(..)(x) rank={row.e_rank} compliance={row.compliance}")
    for name, value in report.manifold_distance.items():
        click.echo(f"{name}: engine manifold distance={value:.5f}")


@cli.command("report")
@click.pass_obj
def report(obj):
    """Write the method table, loss curves and image grids"""
    files = pipeline_service.report(obj["config"], obj["layout"])
    click.echo(f"Wrote {len(files)} report files to {obj['layout'].reports}")
