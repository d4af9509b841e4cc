"""
Command-line interface for the TACO demonstration configurator.

Usage:
    taco [--config FILE] [--seed S] [--out DIR] gen-world
    taco build-data [--method oracle|rs|i2i|iq2iq]
    taco train [--resume CKPT] [--lambda-sweep L1:L2,...] [--sparsity-direction forward|reverse]
    taco generate --queries FILE --shots n
    taco evaluate --methods rs,i2i,... --settings standard,em,...
    taco ablate

Environment Variables:
    TACO_LOG_LEVEL: Set log level (default: INFO)
    TACO_CONFIG_DIR: Directory holding main.yml (optional)
    TACO_SCORER_ENDPOINT: External scorer address
"""
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import click

from taco_icl.core import stage_rng
from taco_icl.data import (
    SequenceDataset,
    load_dataset,
    load_library,
    load_queries,
    save_dataset,
    save_library,
    save_queries,
)
from taco_icl.evaluation import (
    METHODS,
    SETTINGS,
    WorldSpec,
    evaluate_methods,
    generate_world,
    load_world,
    make_scorer,
    provenance,
    run_ablations,
    save_world,
    write_report,
)
from taco_icl.evaluation.runner import beam_validator, build_model, parse_list, split_validation
from taco_icl.exceptions import ConfigError, TacoError, exit_code_for
from taco_icl.models import TrainConfig, load_model, train
from taco_icl.selection import BeamConfig, OracleConfig, beam_infer_all, build_training_set, select_query_set
from taco_icl.utils.config import get_absolute_path, resolve_run_config
from taco_icl.utils.logger import set_log_dir, setup_logging

# Create logger
logger = setup_logging("scripts.cli")

WORLD_FILE = "world.json"
LIBRARY_FILE = "library.jsonl"
TRAIN_QUERIES_FILE = "train_queries.jsonl"
EVAL_QUERIES_FILE = "eval_queries.jsonl"
DATASET_FILE = "dataset.jsonl"
CHECKPOINT_DIR = "checkpoints"


class RunContext:
    """Run configuration and output directory shared by every command."""

    def __init__(self, config_path: Optional[str], seed: Optional[int], out: Optional[str]):
        self.config_path = config_path
        self.seed = seed
        self.out = out

    def resolve(self, **overrides) -> Tuple[Dict[str, Any], Path]:
        """Resolve the run config (flags win) and create the output directory."""
        flags = {"seed": self.seed, "paths.output": self.out}
        flags.update(overrides)
        config = resolve_run_config(self.config_path, flags)
        set_log_dir(config["paths"]["logs"])
        out_dir = get_absolute_path(config["paths"]["output"])
        out_dir.mkdir(parents=True, exist_ok=True)
        return config, out_dir


def _run(command: str, body: Callable[[], None]) -> None:
    """Run a command body and map failures to exit codes."""
    try:
        body()
    except TacoError as e:
        logger.error(f"{command} failed: {e}", exc_info=True)
        click.echo(f"Error: {e}", err=True)
        sys.exit(exit_code_for(e))
    except Exception as e:
        logger.error(f"{command} failed unexpectedly: {e}", exc_info=True)
        click.echo(f"Error: {e}", err=True)
        sys.exit(exit_code_for(e))


def _world(config: Dict[str, Any], out_dir: Path):
    path = out_dir / WORLD_FILE
    if path.exists():
        return load_world(path)
    if config["scorer"]["kind"] == "synthetic":
        raise ConfigError(f"{path} not found; run gen-world first")
    return None


def _training_queries(config: Dict[str, Any], out_dir: Path):
    queries = load_queries(out_dir / TRAIN_QUERIES_FILE)
    return split_validation(queries, int(config["train"]["validation_queries"]), int(config["seed"]))


def _parse_lambda_sweep(value: str) -> List[Tuple[float, float]]:
    pairs = []
    for item in value.split(","):
        l1, sep, l2 = item.strip().partition(":")
        try:
            if not sep:
                raise ValueError(item)
            pairs.append((float(l1), float(l2)))
        except ValueError:
            raise ConfigError(f"--lambda-sweep entries must look like L1:L2, got {item!r}") from None
    return pairs


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="Run configuration YAML")
@click.option("--seed", type=int, default=None, help="Global seed (overrides the config)")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory (overrides paths.output)")
@click.pass_context
def main(ctx, config_path, seed, out):
    """Task-aware selection and ordering of in-context demonstrations."""
    ctx.obj = RunContext(config_path, seed, out)


@main.command("gen-world")
@click.pass_obj
def gen_world(run: RunContext):
    """Generate the synthetic world, its library and query files."""

    def body():
        config, out_dir = run.resolve()
        seed = int(config["seed"])
        world, library, eval_queries = generate_world(WorldSpec.from_run_config(config), stage_rng(seed, "world"))
        query_set = select_query_set(library, int(config["queries"]["k"]), int(config["queries"]["m"]), seed=seed)
        save_world(world, out_dir / WORLD_FILE)
        save_library(query_set.library, out_dir / LIBRARY_FILE)
        save_queries(query_set.queries, out_dir / TRAIN_QUERIES_FILE)
        save_queries(eval_queries, out_dir / EVAL_QUERIES_FILE)
        click.echo(
            f"library={len(query_set.library)} train_queries={len(query_set.queries)} "
            f"eval_queries={len(eval_queries)} clusters={world.n_clusters} -> {out_dir}"
        )

    _run("gen-world", body)


@main.command("build-data")
@click.option("--method", type=click.Choice(["oracle", "rs", "i2i", "iq2iq"]), default=None,
              help="Sequence source (overrides oracle.method)")
@click.pass_obj
def build_data(run: RunContext, method):
    """Build the N-shot training dataset."""

    def body():
        config, out_dir = run.resolve(**{"oracle.method": method})
        library = load_library(out_dir / LIBRARY_FILE)
        queries, validation = _training_queries(config, out_dir)
        scorer = make_scorer(config, _world(config, out_dir), library.labels)
        oracle_config = OracleConfig.from_run_config(config)
        dataset = build_training_set(
            library, queries, scorer, oracle_config, stage_rng(int(config["seed"]), "oracle"), progress=True
        )
        save_dataset(dataset, out_dir / DATASET_FILE)
        logger.info(f"Scorer calls: {scorer.calls}, cache hits: {scorer.cache_hits}")
        click.echo(
            f"sequences={len(dataset)} shot={dataset.shot} queries={len(queries)} "
            f"held_out={len(validation)} scorer_calls={scorer.calls} cache_hits={scorer.cache_hits}"
        )

    _run("build-data", body)


@main.command("train")
@click.option("--resume", type=click.Path(dir_okay=False, exists=True), default=None, help="Checkpoint to resume from")
@click.option("--lambda-sweep", default=None, help="Train one model per L1:L2 pair, comma-separated")
@click.option("--sparsity-direction", type=click.Choice(["forward", "reverse"]), default=None)
@click.pass_obj
def train_command(run: RunContext, resume, lambda_sweep, sparsity_direction):
    """Train the TACO model on the built dataset."""

    def body():
        sweep = _parse_lambda_sweep(lambda_sweep) if lambda_sweep else []
        if sweep and resume:
            raise ConfigError("--resume cannot be combined with --lambda-sweep")
        config, out_dir = run.resolve(**{"train.sparsity_direction": sparsity_direction})
        library = load_library(out_dir / LIBRARY_FILE)
        dataset = load_dataset(out_dir / DATASET_FILE)
        _, validation = _training_queries(config, out_dir)
        validator = None
        if validation:
            scorer = make_scorer(config, _world(config, out_dir), library.labels)
            validator = beam_validator(validation, library, scorer, BeamConfig.from_run_config(config))
        base = TrainConfig.from_run_config(config)
        runs = [(base, out_dir / CHECKPOINT_DIR)]
        if sweep:
            runs = [
                (replace(base, lambda1=l1, lambda2=l2), out_dir / CHECKPOINT_DIR / f"lambda_{l1:g}_{l2:g}")
                for l1, l2 in sweep
            ]
        for train_config, run_dir in runs:
            result = train(
                dataset, library, build_model(config, library), train_config, run_dir,
                validator=validator, resume=resume, run_config_hash=config["config_hash"], progress=True,
            )
            click.echo(f"best_epoch={result.best_epoch} best={result.best_checkpoint} metrics={run_dir / 'metrics.csv'}")

    _run("train", body)


@main.command("generate")
@click.option("--queries", "queries_path", type=click.Path(dir_okay=False, exists=True), required=True)
@click.option("--shots", type=int, default=None, help="Sequence length n (defaults to beam.shots)")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Model checkpoint (defaults to best)")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Sequences file to write")
@click.pass_obj
def generate(run: RunContext, queries_path, shots, checkpoint, output):
    """Configure n-shot sequences for queries with a trained model."""

    def body():
        config, out_dir = run.resolve()
        library = load_library(out_dir / LIBRARY_FILE)
        queries = load_queries(queries_path)
        model = load_model(checkpoint or out_dir / CHECKPOINT_DIR / "best.npz")
        beam_config = BeamConfig.from_run_config(config, shots=shots)
        sequences = beam_infer_all(model, queries, library, beam_config)
        target = Path(output) if output else out_dir / f"generated_{beam_config.shots}shot.jsonl"
        save_dataset(SequenceDataset.from_sequences(sequences), target)
        click.echo(f"sequences={len(sequences)} shot={beam_config.shots} -> {target}")

    _run("generate", body)


@main.command("evaluate")
@click.option("--methods", default=None, help=f"Comma-separated subset of {','.join(METHODS)}")
@click.option("--settings", default=None, help=f"Comma-separated subset of {','.join(SETTINGS)}")
@click.option("--queries", "queries_path", type=click.Path(dir_okay=False, exists=True), default=None,
              help="Evaluation queries (defaults to the held-out queries)")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Model checkpoint for method taco")
@click.pass_obj
def evaluate(run: RunContext, methods, settings, queries_path, checkpoint):
    """Evaluate selection methods under perturbation settings."""

    def body():
        config, out_dir = run.resolve()
        section = config["evaluation"]
        method_names = parse_list(methods, METHODS, "methods") if methods else list(section["methods"])
        setting_names = parse_list(settings, SETTINGS, "settings") if settings else list(section["settings"])
        library = load_library(out_dir / LIBRARY_FILE)
        queries = load_queries(queries_path or out_dir / EVAL_QUERIES_FILE)
        world = _world(config, out_dir)
        scorer = make_scorer(config, world, library.labels)
        model = None
        if "taco" in method_names:
            model = load_model(checkpoint or out_dir / CHECKPOINT_DIR / "best.npz")
        table = evaluate_methods(config, world, library, queries, method_names, setting_names, scorer, model)
        csv_path, _ = write_report(table, provenance(config, "evaluate"), out_dir, "report")
        click.echo(table.to_string(index=False))
        click.echo(f"report -> {csv_path}")

    _run("evaluate", body)


@main.command("ablate")
@click.pass_obj
def ablate(run: RunContext):
    """Retrain and evaluate the full model against each ablation."""

    def body():
        config, out_dir = run.resolve()
        library = load_library(out_dir / LIBRARY_FILE)
        dataset = load_dataset(out_dir / DATASET_FILE)
        _, validation = _training_queries(config, out_dir)
        eval_queries = load_queries(out_dir / EVAL_QUERIES_FILE)
        world = _world(config, out_dir)
        scorer = make_scorer(config, world, library.labels)
        table = run_ablations(
            config, world, library, dataset, validation, eval_queries, scorer, out_dir / "ablations"
        )
        csv_path, _ = write_report(table, provenance(config, "ablate"), out_dir, "ablation_report")
        click.echo(table.to_string(index=False))
        click.echo(f"report -> {csv_path}")

    _run("ablate", body)


if __name__ == "__main__":
    main()
