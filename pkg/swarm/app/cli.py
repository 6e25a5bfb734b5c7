import functools
import logging
import os

import click
import numpy as np
from app.arena import EnvKind, KinematicArena
from app.errors import ScenarioValidationError, SwarmError
from app.forest import (
    collect_dataset,
    dump_forest,
    fit,
    holdout_accuracy,
    load_forest,
    read_dataset,
    split_dataset,
    write_dataset,
)
from app.hddqn import (
    QController,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    train_individual,
    write_training_log,
)
from app.orchestrator import (
    ablate,
    compute_metrics,
    read_episode_summaries,
    run_abstract,
    run_embodied,
    write_ablation,
    write_ablation_curves,
    write_episode_summaries,
    write_metrics,
    write_pheromones,
    write_step_records,
)
from app.scenarios import load_grid, load_scenario, with_overrides
from app.tracker import RunTracker
from flask import current_app
from flask.cli import AppGroup

logger = logging.getLogger(__name__)

swarm_cli = AppGroup("swarm", help="Train, collect, fit and run swarm scenarios.")

ENV_CHOICES = [k.value for k in EnvKind]


def tracked(command):
    """Record the run in the tracker and map failures to exit codes.

    The wrapped function returns a dict of tracker fields for a successful run.
    """

    def decorator(f):
        @functools.wraps(f)
        def wrapper(*args, **kwargs):
            tracker = RunTracker()
            ctx = click.get_current_context()
            try:
                fields = f(*args, **kwargs) or {}
            except ScenarioValidationError as e:
                for violation in e.violations:
                    logger.error(f"Invalid scenario: {violation}")
                tracker.record(command, "failed - validation error")
                click.echo(f"Error: {e}", err=True)
                ctx.exit(1)
            except (SwarmError, OSError) as e:
                logger.error(f"{command} failed: {e}")
                tracker.record(command, f"failed - {type(e).__name__}")
                click.echo(f"Error: {e}", err=True)
                ctx.exit(2)
            else:
                tracker.record(command, "success", **fields)

        return wrapper

    return decorator


def _output_dir(out, *parts):
    path = out or os.path.join(current_app.config["OUTPUT_DIR"], *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _resolve_scenario(name_or_path):
    if os.path.exists(name_or_path):
        return load_scenario(name_or_path)
    shipped = os.path.join(current_app.config["SCENARIO_DIR"], f"{name_or_path}.json")
    if os.path.exists(shipped):
        return load_scenario(shipped)
    return load_scenario(name_or_path)


def _seed(seed):
    return current_app.config["DEFAULT_SEED"] if seed is None else seed


def _arena_factory(kind):
    return KinematicArena()


@swarm_cli.command("train")
@click.option("--episodes", type=int, default=500, show_default=True)
@click.option("--seed", type=int)
@click.option("--env", "envs", type=click.Choice(ENV_CHOICES), multiple=True)
@click.option("--individual", is_flag=True, help="Train one network per env kind.")
@click.option("--out", type=click.Path(), help="Checkpoint path.")
@tracked("train")
def train_command(episodes, seed, envs, individual, out):
    seed = _seed(seed)
    config = TrainConfig()
    if envs:
        kinds = sorted(set(envs))
        config = TrainConfig(env_distribution={EnvKind(k): 1.0 / len(kinds) for k in kinds})
    rng = np.random.default_rng(seed)

    out = out or os.path.join(_output_dir(None), "qnet.bin")
    directory = os.path.dirname(os.path.abspath(out))
    os.makedirs(directory, exist_ok=True)

    if individual:
        stem, ext = os.path.splitext(out)
        for kind, (params, log) in train_individual(_arena_factory, config, episodes, rng).items():
            save_checkpoint(f"{stem}_{kind.value}{ext}", params, seed, episodes)
            write_training_log(os.path.join(directory, f"training_log_{kind.value}.csv"), log)
    else:
        params, log = train(_arena_factory, config, episodes, rng)
        save_checkpoint(out, params, seed, episodes)
        write_training_log(os.path.join(directory, "training_log.csv"), log)
    click.echo(f"Wrote {out}")
    return {"seed": seed, "output_path": out}


@swarm_cli.command("collect")
@click.option("--checkpoint", type=click.Path(), required=True)
@click.option("--samples", type=int, default=10000, show_default=True)
@click.option("--seed", type=int)
@click.option("--out", type=click.Path())
@tracked("collect")
def collect_command(checkpoint, samples, seed, out):
    seed = _seed(seed)
    params = load_checkpoint(checkpoint).params
    rng = np.random.default_rng(seed)
    dataset = collect_dataset(QController(params, TrainConfig().beta), _arena_factory, samples, rng)
    out = out or os.path.join(_output_dir(None), "dataset.csv")
    write_dataset(out, dataset)
    click.echo(f"Wrote {len(dataset)} samples to {out}")
    return {"seed": seed, "output_path": out}


@swarm_cli.command("fit-classifier")
@click.option("--dataset", "dataset_path", type=click.Path(), required=True)
@click.option("--seed", type=int)
@click.option("--holdout", type=float, default=0.2, show_default=True)
@click.option("--out", type=click.Path())
@tracked("fit-classifier")
def fit_classifier_command(dataset_path, seed, holdout, out):
    seed = _seed(seed)
    dataset = read_dataset(dataset_path)
    training, testing = split_dataset(dataset, holdout, np.random.default_rng(seed))
    model = fit(training, seed)
    accuracy = holdout_accuracy(model, testing)
    logger.info(f"Held-out accuracy {accuracy:.4f} on {len(testing)} samples")
    out = out or os.path.join(_output_dir(None), "forest.txt")
    dump_forest(model, out)
    click.echo(f"Held-out accuracy: {accuracy:.4f}")
    click.echo(f"Wrote {out}")
    return {"seed": seed, "output_path": out, "metrics": None}


@swarm_cli.command("run")
@click.argument("scenario")
@click.option("--mode", type=click.Choice(["abstract", "embodied"]))
@click.option("--episodes", type=int)
@click.option("--seed", type=int)
@click.option("--checkpoint", type=click.Path())
@click.option("--forest", type=click.Path())
@click.option(
    "--oracle", is_flag=True, help="Push with the scripted pusher instead of the Q-network."
)
@click.option("--out", type=click.Path())
@tracked("run")
def run_command(scenario, mode, episodes, seed, checkpoint, forest, oracle, out):
    spec = _resolve_scenario(scenario)
    if seed is not None:
        spec = with_overrides(spec, {"seed": seed})
    mode = mode or spec.mode

    if mode == "embodied":
        params = load_checkpoint(checkpoint).params if checkpoint and not oracle else None
        model = load_forest(forest) if forest and not oracle else None
        logs, metrics = run_embodied(spec, params, model, oracle=oracle, episodes=episodes)
    else:
        logs, metrics = run_abstract(spec, episodes=episodes)

    out = _output_dir(out, spec.name)
    write_episode_summaries(os.path.join(out, "episodes.csv"), logs)
    write_step_records(os.path.join(out, "steps.csv"), logs)
    write_pheromones(os.path.join(out, "pheromones.csv"), logs)
    write_metrics(os.path.join(out, "metrics.csv"), metrics)
    click.echo(f"steps: {metrics.steps_mean:.4f} +- {metrics.steps_std:.4f}")
    click.echo(f"success: {metrics.success_mean:.4f} +- {metrics.success_std:.4f}")
    return {"scenario": spec.name, "seed": spec.seed, "metrics": metrics, "output_path": out}


@swarm_cli.command("ablate")
@click.argument("scenario")
@click.argument("grid_file")
@click.option("--mode", type=click.Choice(["abstract", "embodied"]))
@click.option("--episodes", type=int)
@click.option("--seed", type=int)
@click.option("--checkpoint", type=click.Path())
@click.option("--forest", type=click.Path())
@click.option(
    "--oracle", is_flag=True, help="Push with the scripted pusher instead of the Q-network."
)
@click.option("--out", type=click.Path())
@tracked("ablate")
def ablate_command(scenario, grid_file, mode, episodes, seed, checkpoint, forest, oracle, out):
    spec = _resolve_scenario(scenario)
    grid = load_grid(grid_file)
    mode = mode or spec.mode

    runner = None
    if mode == "embodied":
        params = load_checkpoint(checkpoint).params if checkpoint and not oracle else None
        model = load_forest(forest) if forest and not oracle else None
        runner = functools.partial(
            run_embodied, params=params, model=model, oracle=oracle, episodes=episodes, seed=seed
        )
    cells = ablate(spec, grid, episodes=episodes, seed=seed, runner=runner)

    out = _output_dir(out, f"{spec.name}_ablation")
    write_ablation(os.path.join(out, "ablation.csv"), cells)
    write_ablation_curves(os.path.join(out, "ablation_curves.csv"), cells)
    for i, cell in enumerate(cells):
        click.echo(
            f"cell {i} {cell.params}: steps {cell.metrics.steps_mean:.4f} "
            f"+- {cell.metrics.steps_std:.4f}"
        )
    return {"scenario": spec.name, "seed": spec.seed if seed is None else seed, "output_path": out}


@swarm_cli.command("metrics")
@click.argument("log_path")
@tracked("metrics")
def metrics_command(log_path):
    metrics = compute_metrics(read_episode_summaries(log_path))
    click.echo(f"episodes: {metrics.episodes}")
    click.echo(f"steps: {metrics.steps_mean:.4f} +- {metrics.steps_std:.4f}")
    click.echo(f"success: {metrics.success_mean:.4f} +- {metrics.success_std:.4f}")
    return {"metrics": metrics, "output_path": log_path}
