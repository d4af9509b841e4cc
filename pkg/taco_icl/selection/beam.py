"""
Beam-search inference module for the TACO demonstration configurator.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from taco_icl.core import Tensor, log_softmax, masked_fill, no_grad
from taco_icl.data.schema import DemoLibrary, IclSequence, QuerySample
from taco_icl.exceptions import ConfigError, SearchError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("selection.beam")


@dataclass(frozen=True)
class BeamConfig:
    width: int = 3
    shots: int = 4

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError(f"beam width must be at least 1, got {self.width}")
        if self.shots < 0:
            raise ConfigError(f"shots must be non-negative, got {self.shots}")

    @classmethod
    def from_run_config(cls, config: Dict[str, Any], shots: Optional[int] = None) -> "BeamConfig":
        section = config["beam"]
        return cls(width=int(section["width"]), shots=int(section["shots"] if shots is None else shots))


def step_log_probs(
    model,
    prefix: Sequence[str],
    query: QuerySample,
    library: DemoLibrary,
    library_embeddings: Tensor,
    guider: Tensor
) -> np.ndarray:
    """
    Log-probabilities over library ids for the next demonstration.

    EOS is masked out, so probabilities are renormalized over the ids not yet
    in the prefix.

    Returns:
        (n,) array in ``library.ids`` order, -inf for blocked ids
    """
    logits = model.step_logits(prefix, query, library, library_embeddings, guider)
    blocked = np.zeros(logits.shape, dtype=bool)
    blocked[-1] = True
    return log_softmax(masked_fill(logits, blocked, -np.inf)).data[:-1]


def sequence_log_prob(
    model,
    icd_ids: Sequence[str],
    query: QuerySample,
    library: DemoLibrary,
    library_embeddings: Optional[Tensor] = None
) -> float:
    """Log-probability the model assigns to picking ``icd_ids`` in order, EOS excluded."""
    with no_grad():
        if library_embeddings is None:
            library_embeddings = model.library_embeddings(library)
        guider = model.guider(query, library)
        total = 0.0
        for step, demo_id in enumerate(icd_ids):
            logp = step_log_probs(model, icd_ids[:step], query, library, library_embeddings, guider)
            total += float(logp[library.index[demo_id]])
    return total


def _beam_search(
    model,
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    width: int,
    library_embeddings: Tensor,
    guider: Tensor
) -> Tuple[Tuple[str, ...], float]:
    ids = library.ids
    beams: List[Tuple[Tuple[str, ...], float]] = [((), 0.0)]
    for _ in range(n):
        expansions = []
        for prefix, score in beams:
            logp = step_log_probs(model, prefix, query, library, library_embeddings, guider)
            for column in np.flatnonzero(np.isfinite(logp)):
                expansions.append((prefix + (ids[column],), score + float(logp[column])))
        beams = sorted(expansions, key=lambda item: (-item[1], item[0]))[:width]
    return beams[0]


def beam_infer(
    model,
    query: QuerySample,
    library: DemoLibrary,
    config: BeamConfig,
    instruction: Optional[str] = None,
    library_embeddings: Optional[Tensor] = None
) -> IclSequence:
    """
    Generate an n-shot sequence for a query with beam search over the model's next-token logits.

    Demonstrations already chosen are masked at every step and EOS is masked
    until n are chosen. Every narrower beam is also run and the most probable
    result kept, so the score never decreases as the width grows.

    Args:
        model: Trained TacoModel
        query: Query to configure demonstrations for
        library: Demonstration library
        config: Beam width and shot count n
        instruction: Instruction text, the library's when omitted
        library_embeddings: Precomputed fused library embeddings

    Returns:
        IclSequence with n demonstrations, most probable sequence found

    Raises:
        SearchError: If the library has fewer than n demonstrations
    """
    instruction = library.instruction if instruction is None else instruction
    n = config.shots
    if n == 0:
        return IclSequence(instruction, (), query)
    if len(library) < n:
        raise SearchError(f"library of {len(library)} demonstrations cannot fill {n} shots")

    with no_grad():
        if library_embeddings is None:
            library_embeddings = model.library_embeddings(library)
        guider = model.guider(query, library)
        best = _beam_search(model, query, library, n, config.width, library_embeddings, guider)
        for width in range(config.width - 1, 0, -1):
            narrower = _beam_search(model, query, library, n, width, library_embeddings, guider)
            if narrower[1] > best[1]:
                best = narrower
    return IclSequence(instruction, best[0], query)


def beam_infer_all(
    model,
    queries: Sequence[QuerySample],
    library: DemoLibrary,
    config: BeamConfig,
    instruction: Optional[str] = None
) -> List[IclSequence]:
    """Run ``beam_infer`` for every query, sharing the fused library embeddings."""
    with no_grad():
        library_embeddings = model.library_embeddings(library)
    sequences = [beam_infer(model, q, library, config, instruction, library_embeddings) for q in queries]
    logger.info(f"Generated {len(sequences)} {config.shots}-shot sequences with beam width {config.width}")
    return sequences
