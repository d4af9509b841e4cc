"""
Seeded random number generation.

All sampling in taco_icl goes through NumPy's PCG64 bit generator, which
produces the same stream for the same seed on every platform.
"""
import hashlib
from typing import Any, Dict

import numpy as np

RNG_ALGORITHM = "PCG64"

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """
    Create a generator for a 64-bit seed.

    Args:
        seed: Non-negative integer seed

    Returns:
        PCG64-backed generator
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, label: str) -> int:
    """
    Derive a per-stage seed from the run seed and a stage label.

    Args:
        seed: Run seed
        label: Stage name, e.g. "world" or "train"

    Returns:
        64-bit integer seed
    """
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def stage_rng(seed: int, label: str) -> Rng:
    """Generator for one pipeline stage."""
    return make_rng(derive_seed(seed, label))


def rng_state(rng: Rng) -> Dict[str, Any]:
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_rng(state: Dict[str, Any]) -> Rng:
    """Rebuild a generator from ``rng_state`` output."""
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)
