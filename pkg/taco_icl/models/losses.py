"""
Training objectives for the TACO decoder: sequence cross-entropy, the
mask sparsity term and the guider weight penalty.
"""
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from taco_icl.core import Tensor, kl_uniform, log_softmax, masked_softmax
from taco_icl.data.schema import DemoLibrary, IclSequence
from taco_icl.exceptions import ConfigError, VocabularyError
from taco_icl.models.fusion import TokenSequence
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("models.losses")

SPARSITY_DIRECTIONS = ("forward", "reverse")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    sparse: float
    l2_tg: float
    total: float

    def as_dict(self):
        return {"ce": self.ce, "sparse": self.sparse, "l2": self.l2_tg, "total": self.total}


def ce_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """
    Mean negative log-probability of the targets.

    Args:
        logits: (steps, vocabulary) logits
        targets: Target column per step

    Returns:
        Scalar tensor

    Raises:
        VocabularyError: If a target lies outside the vocabulary
    """
    steps, width = logits.shape
    targets = np.asarray(targets, dtype=int)
    if targets.shape != (steps,):
        raise VocabularyError(f"{targets.size} targets for {steps} prediction steps")
    if np.any(targets < 0) or np.any(targets >= width):
        raise VocabularyError(f"target index outside vocabulary of size {width}")
    picked = log_softmax(logits, axis=-1)[np.arange(steps), targets]
    return -picked.mean()


def sparsity_loss(
    masks: Mapping[int, Tensor],
    tokens: TokenSequence,
    direction: str = "forward"
) -> Tuple[Tensor, int]:
    """
    KL from each ICD row's masked softmax to uniform over its finite support,
    summed over task-aware layers and ICD rows and divided by the shot count.

    Args:
        masks: Task mask per task-aware layer
        tokens: Token sequence the masks were built for
        direction: "forward" or "reverse" (negated)

    Returns:
        (loss, number of skipped degenerate rows)
    """
    if direction not in SPARSITY_DIRECTIONS:
        raise ConfigError(f"sparsity direction must be one of {SPARSITY_DIRECTIONS}")
    rows = tokens.icd_positions
    total = Tensor(0.0)
    skipped = 0
    if not rows or not masks:
        return total, skipped
    for layer in sorted(masks):
        mask = masks[layer]
        for i in rows:
            row = mask[i]
            support = np.isfinite(row.data)
            if not support.any() or np.any(np.isnan(row.data)):
                skipped += 1
                continue
            total = total + kl_uniform(masked_softmax(row), support)
    if skipped:
        logger.warning(f"Skipped {skipped} degenerate mask rows in the sparsity loss")
    total = total * (1.0 / len(rows))
    return (-total if direction == "reverse" else total), skipped


@dataclass
class BatchLoss:
    total: Tensor
    breakdown: LossBreakdown
    skipped_rows: int = 0


def batch_loss(
    model,
    sequences: Sequence[IclSequence],
    library: DemoLibrary,
    lambda1: float,
    lambda2: float,
    direction: str = "forward",
    mask_repeats: bool = True,
    library_embeddings: Optional[Tensor] = None
) -> BatchLoss:
    """
    Total loss of a batch: mean CE + lambda1 * mean sparsity + lambda2 * ||W_TG||^2.

    Args:
        model: TacoModel
        sequences: Sequences in target order
        library: Library the sequences draw from
        lambda1: Sparsity weight
        lambda2: Guider weight penalty
        direction: Sparsity direction
        mask_repeats: Exclude prefix ids at each step
        library_embeddings: Fused library embeddings shared by the batch

    Returns:
        BatchLoss
    """
    if not sequences:
        raise VocabularyError("empty batch")
    if library_embeddings is None:
        library_embeddings = model.library_embeddings(library)
    ce_total = Tensor(0.0)
    sparse_total = Tensor(0.0)
    skipped = 0
    for seq in sequences:
        result = model.sequence_logits(seq, library, library_embeddings, mask_repeats)
        ce_total = ce_total + ce_loss(result.logits, result.targets)
        sparse, dropped = sparsity_loss(result.output.masks, result.output.tokens, direction)
        sparse_total = sparse_total + sparse
        skipped += dropped
    scale = 1.0 / len(sequences)
    ce = ce_total * scale
    sparse = sparse_total * scale
    l2 = model.guider_l2()
    total = ce + sparse * lambda1 + l2 * lambda2
    breakdown = LossBreakdown(
        ce=float(ce.data),
        sparse=float(sparse.data),
        l2_tg=float(l2.data),
        total=float(total.data),
    )
    return BatchLoss(total, breakdown, skipped)
