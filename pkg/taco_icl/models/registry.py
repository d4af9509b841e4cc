"""
Model storage and retrieval for the TACO decoder.

A checkpoint is one NumPy ``.npz`` archive holding every named parameter
(``param/<name>``), the optimizer moments (``opt_m/<name>``, ``opt_v/<name>``)
and a JSON document under ``__meta__`` with the model configuration, its
hash, the run-config hash, step counters, RNG state and epoch.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from taco_icl.core import Rng, rng_state
from taco_icl.exceptions import CheckpointMismatchError
from taco_icl.models.config import ModelConfig
from taco_icl.models.decoder import TacoModel
from taco_icl.models.optim import AdamW
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("models.registry")

CHECKPOINT_FORMAT = "taco-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Contents of a checkpoint file."""
    params: Dict[str, np.ndarray]
    meta: Dict[str, Any]
    opt_m: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.meta["model_config"])

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    def optimizer_state(self) -> Optional[Dict[str, Any]]:
        if not self.opt_m:
            return None
        return {"step": int(self.meta.get("optimizer_step", 0)), "m": self.opt_m, "v": self.opt_v}


def save_checkpoint(
    path: Union[str, Path],
    model: TacoModel,
    optimizer: Optional[AdamW] = None,
    scheduler_step: int = 0,
    rng: Optional[Rng] = None,
    epoch: int = 0,
    run_config_hash: Optional[str] = None,
    extra: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write a checkpoint.

    Args:
        path: Target file; ``.npz`` is appended when missing
        model: Model whose parameters are stored
        optimizer: Optimizer whose moments are stored
        scheduler_step: Learning-rate schedule position
        rng: Training generator whose state is stored
        epoch: Completed epochs
        run_config_hash: Hash of the resolved run configuration
        extra: Additional JSON-serializable metadata

    Returns:
        Path written
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)

    arrays = {f"param/{name}": tensor.data for name, tensor in model.parameters().items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "model_hash": model.config.config_hash(),
        "run_config_hash": run_config_hash,
        "optimizer_step": 0,
        "scheduler_step": int(scheduler_step),
        "rng_state": rng_state(rng) if rng is not None else None,
        "epoch": int(epoch),
        "extra": extra or {},
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        meta["optimizer_step"] = state["step"]
        arrays.update({f"opt_m/{name}": value for name, value in state["m"].items()})
        arrays.update({f"opt_v/{name}": value for name, value in state["v"].items()})
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))

    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info(f"Saved checkpoint to {path} (epoch {epoch})")
    return path


def load_checkpoint(
    path: Union[str, Path],
    expected_model_hash: Optional[str] = None,
    expected_run_hash: Optional[str] = None
) -> Checkpoint:
    """
    Read a checkpoint.

    Args:
        path: Checkpoint file
        expected_model_hash: Reject the file unless its model configuration hashes to this
        expected_run_hash: Reject the file unless it was written under this run configuration

    Returns:
        Checkpoint

    Raises:
        CheckpointMismatchError: On a malformed file or a hash mismatch
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointMismatchError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise CheckpointMismatchError(f"{path} is not a TACO checkpoint")
        meta = json.loads(str(archive["__meta__"]))
        params, opt_m, opt_v = {}, {}, {}
        for key in archive.files:
            kind, _, name = key.partition("/")
            if kind == "param":
                params[name] = archive[key]
            elif kind == "opt_m":
                opt_m[name] = archive[key]
            elif kind == "opt_v":
                opt_v[name] = archive[key]

    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint format in {path}")
    if ModelConfig.from_dict(meta["model_config"]).config_hash() != meta["model_hash"]:
        raise CheckpointMismatchError(f"model configuration in {path} does not match its hash")
    if expected_model_hash is not None and meta["model_hash"] != expected_model_hash:
        raise CheckpointMismatchError(
            f"checkpoint model hash {meta['model_hash'][:12]} does not match {expected_model_hash[:12]}"
        )
    if expected_run_hash is not None and meta.get("run_config_hash") != expected_run_hash:
        raise CheckpointMismatchError("checkpoint was written under a different run configuration")
    return Checkpoint(params, meta, opt_m, opt_v)


def load_model(path: Union[str, Path], expected_model_hash: Optional[str] = None) -> TacoModel:
    """
    Rebuild a model from a checkpoint.

    Args:
        path: Checkpoint file
        expected_model_hash: Optional model-config hash the file must carry

    Returns:
        TacoModel with the stored parameters
    """
    checkpoint = load_checkpoint(path, expected_model_hash)
    model = TacoModel(checkpoint.model_config)
    model.parameters().load_state_dict(checkpoint.params)
    logger.info(f"Loaded model from {path}")
    return model
