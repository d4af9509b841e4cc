"""
Exception hierarchy for the TACO demonstration configurator.

ValidationError subclasses signal bad inputs or configuration (CLI exit code 1).
TacoRuntimeError subclasses signal failures while doing valid work (CLI exit code 2).
"""
from typing import Optional


class TacoError(Exception):
    """Base class for all errors raised by taco_icl."""


class ValidationError(TacoError, ValueError):
    """Invalid input, data file or configuration."""


class DimensionError(ValidationError):
    """Operand shapes do not agree."""


class DegenerateRowError(ValidationError):
    """A softmax slice has no finite entry."""


class DegenerateVectorError(ValidationError):
    """A zero-norm vector was used where a direction is required."""


class InvalidDistributionError(ValidationError):
    """A probability vector has negative mass or does not sum to one."""


class ConfigError(ValidationError):
    """Run configuration is malformed or contains unknown keys."""


class FusionConfigError(ConfigError):
    """Fusion inputs do not match the model width and no projection is configured."""


class IngestionError(ValidationError):
    """A record in a library, query or dataset file could not be ingested."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyLibraryError(ValidationError):
    """A demonstration library has no records."""


class UnresolvedReferenceError(ValidationError):
    """A sequence references a demonstration id missing from the library."""


class InvalidPermutationError(ValidationError):
    """A permutation is not a bijection over the sequence positions."""


class DatasetValidationError(ValidationError):
    """A sequence dataset violates its shot-count or uniqueness invariants."""


class VocabularyError(ValidationError):
    """A training target is outside the output vocabulary."""


class SearchError(ValidationError):
    """A sequence search cannot produce the requested number of demonstrations."""


class ClusteringError(ValidationError):
    """Query-set selection by k-means failed."""


class WorldSpecError(ValidationError):
    """A synthetic world specification is invalid."""


class UnsupportedPerturbationError(ValidationError):
    """A perturbation cannot be applied to the requested target."""


class CheckpointMismatchError(ValidationError):
    """A checkpoint was written under a different model configuration."""


class TacoRuntimeError(TacoError, RuntimeError):
    """Failure while executing a valid request."""


class GradientProbeError(TacoRuntimeError):
    """The probed function is not finite at the probe point."""


class TrainingDivergedError(TacoRuntimeError):
    """A training batch produced a non-finite loss."""

    def __init__(self, message: str, batch_id: Optional[int] = None):
        self.batch_id = batch_id
        if batch_id is not None:
            message = f"batch {batch_id}: {message}"
        super().__init__(message)


class CapabilityError(TacoRuntimeError):
    """A scorer lacks a capability the caller needs."""


class ScorerTransportError(TacoRuntimeError):
    """The external scorer could not be reached."""

    def __init__(self, message: str, request_id: Optional[str] = None):
        self.request_id = request_id
        if request_id is not None:
            message = f"request {request_id}: {message}"
        super().__init__(message)


class ScorerTimeoutError(ScorerTransportError):
    """The external scorer did not answer in time."""


class ScorerProtocolError(ScorerTransportError):
    """The external scorer sent a malformed or non-finite reply."""


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception to the command-line exit code.

    Args:
        error: Raised exception

    Returns:
        1 for validation failures, 2 for everything else
    """
    if isinstance(error, ValidationError):
        return 1
    return 2
