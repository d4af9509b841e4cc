"""
Model training module for the TACO demonstration configurator.
Runs teacher-forced training over an ICL sequence dataset with AdamW,
cosine warm restarts, per-epoch metrics and checkpointing.
"""
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from taco_icl.core import restore_rng, stage_rng
from taco_icl.data.schema import DemoLibrary, SequenceDataset
from taco_icl.exceptions import ConfigError, DatasetValidationError, TrainingDivergedError
from taco_icl.models.decoder import TacoModel
from taco_icl.models.losses import SPARSITY_DIRECTIONS, batch_loss
from taco_icl.models.optim import AdamW, CosineWarmRestarts
from taco_icl.models.registry import load_checkpoint, save_checkpoint
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("models.training")

METRIC_COLUMNS = ["epoch", "ce", "sparse", "l2", "total", "lr", "val_score"]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 20
    lambda1: float = 0.01
    lambda2: float = 1e-4
    sparsity_direction: str = "forward"
    t0: int = 100
    t_mult: int = 2
    eta_min: float = 0.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_repeats: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be positive and epochs non-negative")
        if self.sparsity_direction not in SPARSITY_DIRECTIONS:
            raise ConfigError(f"sparsity_direction must be one of {SPARSITY_DIRECTIONS}")

    @classmethod
    def from_run_config(cls, config: Dict[str, Any]) -> "TrainConfig":
        train = config["train"]
        names = {f.name for f in fields(cls)} - {"seed"}
        values = {name: train[name] for name in names if name in train}
        return cls(seed=int(config["seed"]), **values)


@dataclass
class TrainResult:
    best_checkpoint: Path
    last_checkpoint: Path
    history: pd.DataFrame
    best_epoch: int


Validator = Callable[[TacoModel], float]


def _append_metrics(path: Path, row: Dict[str, Any]) -> None:
    frame = pd.DataFrame([row], columns=METRIC_COLUMNS)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


def train(
    dataset: SequenceDataset,
    library: DemoLibrary,
    model: TacoModel,
    config: TrainConfig,
    output_dir: Union[str, Path],
    validator: Optional[Validator] = None,
    resume: Optional[Union[str, Path]] = None,
    run_config_hash: Optional[str] = None,
    progress: bool = False
) -> TrainResult:
    """
    Train a model on an ICL sequence dataset.

    Args:
        dataset: Sequences in target order, shot N >= 1
        library: Library the sequences draw from
        model: Model to train in place
        config: Training hyperparameters
        output_dir: Directory for checkpoints and the metrics CSV
        validator: Score to maximize after each epoch; negative mean loss when omitted
        resume: Checkpoint to continue from
        run_config_hash: Stored in and checked against checkpoints
        progress: Show a progress bar over batches

    Returns:
        TrainResult

    Raises:
        DatasetValidationError: If the dataset is empty or zero-shot
        TrainingDivergedError: If a batch loss is not finite
    """
    if len(dataset) == 0 or dataset.shot < 1:
        raise DatasetValidationError("training needs a non-empty dataset with shot >= 1")
    dataset.validate(library)

    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = output_dir / "metrics.csv"
    best_path = output_dir / "best.npz"
    last_path = output_dir / "last.npz"

    params = model.parameters()
    optimizer = AdamW(
        params,
        lr=config.lr,
        betas=(config.beta1, config.beta2),
        eps=config.eps,
        weight_decay=config.weight_decay,
        no_decay=model.no_decay_names(),
    )
    scheduler = CosineWarmRestarts(config.lr, config.t0, config.t_mult, config.eta_min)
    rng = stage_rng(config.seed, "train")
    start_epoch = 0
    best_score = -np.inf
    best_epoch = -1

    if resume is not None:
        checkpoint = load_checkpoint(resume, model.config.config_hash(), run_config_hash)
        params.load_state_dict(checkpoint.params)
        state = checkpoint.optimizer_state()
        if state is not None:
            optimizer.load_state_dict(state)
        scheduler.step_count = int(checkpoint.meta["scheduler_step"])
        if checkpoint.meta.get("rng_state") is not None:
            rng = restore_rng(checkpoint.meta["rng_state"])
        start_epoch = checkpoint.epoch
        best_score = float(checkpoint.meta["extra"].get("best_score", -np.inf))
        best_epoch = int(checkpoint.meta["extra"].get("best_epoch", -1))
        logger.info(f"Resuming training from {resume} at epoch {start_epoch}")
    elif metrics_path.exists():
        metrics_path.unlink()

    logger.info(
        f"Training on {len(dataset)} sequences (shot {dataset.shot}) for {config.epochs} epochs, "
        f"{params.num_parameters()} parameters"
    )
    batches_per_epoch = int(np.ceil(len(dataset) / config.batch_size))
    for epoch in range(start_epoch, config.epochs):
        order = rng.permutation(len(dataset))
        sums = {"ce": 0.0, "sparse": 0.0, "l2": 0.0, "total": 0.0}
        starts = range(0, len(dataset), config.batch_size)
        for b, start in enumerate(tqdm(starts, desc=f"epoch {epoch + 1}", disable=not progress)):
            batch = [dataset[int(i)] for i in order[start:start + config.batch_size]]
            batch_id = epoch * batches_per_epoch + b
            optimizer.zero_grad()
            loss = batch_loss(
                model, batch, library, config.lambda1, config.lambda2,
                config.sparsity_direction, config.mask_repeats,
            )
            if not np.isfinite(loss.breakdown.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1} ({loss.breakdown})", batch_id=batch_id
                )
            loss.total.backward()
            lr = scheduler.get_lr()
            optimizer.step(lr)
            scheduler.step()
            for key, value in loss.breakdown.as_dict().items():
                sums[key] += value * len(batch)

        means = {key: value / len(dataset) for key, value in sums.items()}
        score = float(validator(model)) if validator is not None else -means["total"]
        row = {"epoch": epoch + 1, **means, "lr": lr, "val_score": score}
        _append_metrics(metrics_path, row)
        logger.info(
            f"Epoch {epoch + 1}/{config.epochs}: ce={means['ce']:.4f} sparse={means['sparse']:.4f} "
            f"l2={means['l2']:.4f} total={means['total']:.4f} val={score:.4f}"
        )

        if score > best_score:
            best_score, best_epoch = score, epoch + 1
            save_checkpoint(best_path, model, optimizer, scheduler.step_count, rng, epoch + 1, run_config_hash,
                            {"best_score": best_score, "best_epoch": best_epoch})
        save_checkpoint(last_path, model, optimizer, scheduler.step_count, rng, epoch + 1, run_config_hash,
                        {"best_score": best_score, "best_epoch": best_epoch})

    if not last_path.exists():
        save_checkpoint(last_path, model, optimizer, scheduler.step_count, rng, start_epoch, run_config_hash)
    if not best_path.exists():
        save_checkpoint(best_path, model, optimizer, scheduler.step_count, rng, start_epoch, run_config_hash)
    history = pd.read_csv(metrics_path) if metrics_path.exists() else pd.DataFrame(columns=METRIC_COLUMNS)
    return TrainResult(best_path, last_path, history, best_epoch)
