"""
Perturbation operators for the TACO demonstration configurator.

Each operator returns modified copies and never touches its input:

- WL (wrong labels) moves a fraction of demonstration labels one step along their label cycle.
- HM (hidden mapping) renames labels through a bijection onto non-semantic labels.
- EM (explicit mapping) pulls question embeddings toward their cluster's centroid.
- BI (blurred image) adds Gaussian noise to image embeddings.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from taco_icl.core import Rng
from taco_icl.data.schema import Demonstration, DemoLibrary, QuerySample
from taco_icl.evaluation.metrics import Prompt
from taco_icl.evaluation.world import SyntheticWorld
from taco_icl.exceptions import ConfigError, UnsupportedPerturbationError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.perturbations")

KINDS = ("EM", "HM", "WL", "BI")
TARGETS = ("all_icds", "query_only")

Target = Union[DemoLibrary, Prompt, QuerySample, Sequence[QuerySample]]


@dataclass(frozen=True)
class PerturbationOp:
    """
    One perturbation and its parameters.

    Attributes:
        kind: "EM", "HM", "WL" or "BI"
        target: "all_icds" or "query_only"
        factor: EM pull toward the centroid, in [0, 1]
        fraction: WL share of demonstrations to relabel, in [0, 1]
        std: BI noise standard deviation; None means ``std_scale`` x the data's std
        std_scale: BI noise relative to the data's std
        remap: HM label table, a bijection
        labels: Semantic label cycle
        reserved: Non-semantic label cycle
    """
    kind: str
    target: str = "all_icds"
    factor: float = 0.8
    fraction: float = 0.75
    std: Optional[float] = None
    std_scale: float = 0.5
    remap: Mapping[str, str] = field(default_factory=dict)
    labels: Tuple[str, ...] = ()
    reserved: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"perturbation kind must be one of {KINDS}, got {self.kind}")
        if self.target not in TARGETS:
            raise ConfigError(f"perturbation target must be one of {TARGETS}, got {self.target}")
        if not 0.0 <= self.factor <= 1.0:
            raise ConfigError(f"EM factor must lie in [0, 1], got {self.factor}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"WL flip fraction must lie in [0, 1], got {self.fraction}")
        if (self.std is not None and self.std < 0) or self.std_scale < 0:
            raise ConfigError("BI noise scale must be non-negative")
        if len(set(self.remap.values())) != len(self.remap):
            raise ConfigError("HM remap table is not a bijection")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "reserved", tuple(self.reserved))
        if self.kind in ("WL", "HM") and self.target == "query_only":
            raise UnsupportedPerturbationError(f"{self.kind} changes labels; queries carry none")


def make_perturbation(kind: str, world: SyntheticWorld, target: str = "all_icds", **params) -> PerturbationOp:
    """Build an operator with label cycles (and, for HM, the default remap) taken from a world."""
    labels, reserved = tuple(world.labels), tuple(world.reserved)
    if kind == "HM" and "remap" not in params:
        params["remap"] = dict(zip(labels, reserved))
    return PerturbationOp(kind=kind, target=target, labels=labels, reserved=reserved, **params)


def next_label(label: str, labels: Sequence[str], reserved: Sequence[str]) -> str:
    """Successor of a label in its own cycle; unknown labels are returned unchanged."""
    for cycle in (labels, reserved):
        if label in cycle:
            return cycle[(list(cycle).index(label) + 1) % len(cycle)]
    return label


def _flip(demos: List[Demonstration], op: PerturbationOp, rng: Rng) -> List[Demonstration]:
    if not demos:
        return demos
    count = math.ceil(op.fraction * len(demos))
    chosen = set(int(i) for i in rng.choice(len(demos), size=count, replace=False))
    return [
        d.with_changes(text_r=next_label(d.text_r, op.labels, op.reserved)) if i in chosen else d
        for i, d in enumerate(demos)
    ]


def _remap(demos: List[Demonstration], op: PerturbationOp) -> List[Demonstration]:
    return [d.with_changes(text_r=op.remap.get(d.text_r, d.text_r)) for d in demos]


def _pull(samples: List[Any], op: PerturbationOp, world: Optional[SyntheticWorld]) -> List[Any]:
    if world is None:
        raise UnsupportedPerturbationError("EM needs the synthetic world to locate task centroids")
    pulled = []
    for sample in samples:
        if "cluster" not in sample.meta:
            raise UnsupportedPerturbationError(f"sample {sample.id} has no cluster metadata for EM")
        centroid = world.centroid_text(sample.meta["cluster"])
        pulled.append(sample.with_changes(q_emb=(1.0 - op.factor) * sample.q_emb + op.factor * centroid))
    return pulled


def _blur(samples: List[Any], op: PerturbationOp, rng: Rng) -> List[Any]:
    if not samples:
        return samples
    std = op.std
    if std is None:
        std = op.std_scale * float(np.std(np.stack([s.image_emb for s in samples])))
    return [s.with_changes(image_emb=s.image_emb + rng.normal(0.0, std, size=s.image_emb.shape)) for s in samples]


def _apply(samples: List[Any], op: PerturbationOp, rng: Rng, world: Optional[SyntheticWorld]) -> List[Any]:
    if op.kind == "WL":
        return _flip(samples, op, rng)
    if op.kind == "HM":
        return _remap(samples, op)
    if op.kind == "EM":
        return _pull(samples, op, world)
    return _blur(samples, op, rng)


def apply_perturbation(
    op: PerturbationOp,
    target: Target,
    rng: Rng,
    world: Optional[SyntheticWorld] = None
):
    """
    Apply a perturbation to a library, a prompt, or queries.

    With ``all_icds`` a library or a prompt's demonstrations are changed; with
    ``query_only`` a query, a list of queries or a prompt's query is.

    Args:
        op: Operator
        target: DemoLibrary, Prompt, QuerySample or list of QuerySample
        rng: Generator for WL choices and BI noise
        world: World supplying EM centroids

    Returns:
        Modified copy of the same type

    Raises:
        UnsupportedPerturbationError: If the operator cannot act on the target
    """
    if isinstance(target, DemoLibrary):
        if op.target != "all_icds":
            raise UnsupportedPerturbationError("a library holds demonstrations; use target all_icds")
        return target.replace(_apply(list(target), op, rng, world))
    if isinstance(target, Prompt):
        if op.target == "all_icds":
            return replace(target, icds=tuple(_apply(list(target.icds), op, rng, world)))
        return replace(target, query=_apply([target.query], op, rng, world)[0])
    if op.target != "query_only":
        raise UnsupportedPerturbationError("queries carry no demonstrations; use target query_only")
    if isinstance(target, QuerySample):
        return _apply([target], op, rng, world)[0]
    return _apply(list(target), op, rng, world)



def remap_ground_truth(op: PerturbationOp, queries: Sequence[QuerySample]) -> List[QuerySample]:
    """
    Rename query answers through an HM table so they match the remapped library.

    Args:
        op: HM operator
        queries: Queries whose ``ground_truth_r`` is renamed

    Returns:
        Relabelled copies; queries without a ground truth are kept as they are

    Raises:
        UnsupportedPerturbationError: If the operator is not HM
    """
    if op.kind != "HM":
        raise UnsupportedPerturbationError(f"{op.kind} does not rename query answers")
    return [
        q.with_changes(ground_truth_r=op.remap.get(q.ground_truth_r, q.ground_truth_r)) if q.has_ground_truth else q
        for q in queries
    ]
