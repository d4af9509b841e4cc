"""
Data model for the TACO demonstration configurator: demonstrations, query
samples, the demonstration library, ICL sequences and sequence datasets.

All objects are immutable; operations that "modify" return new objects.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from taco_icl.exceptions import (
    DatasetValidationError,
    DimensionError,
    EmptyLibraryError,
    IngestionError,
    InvalidPermutationError,
    UnresolvedReferenceError,
)


def _frozen_vector(values: Any, name: str) -> np.ndarray:
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vector)):
        raise IngestionError(f"{name} contains non-finite values")
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Demonstration:
    """
    One (image, query, response) triplet with precomputed embeddings.
    """
    id: str
    image_emb: np.ndarray
    text_q: str
    text_r: str
    q_emb: np.ndarray
    r_emb: np.ndarray
    qr_emb: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("image_emb", "q_emb", "r_emb", "qr_emb"):
            object.__setattr__(self, name, _frozen_vector(getattr(self, name), name))
        d_txt = self.q_emb.size
        if self.r_emb.size != d_txt or self.qr_emb.size != d_txt:
            raise DimensionError(f"demonstration {self.id}: text embeddings differ in width")

    @property
    def dims(self) -> Tuple[int, int]:
        return self.image_emb.size, self.q_emb.size

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "image_emb": self.image_emb.tolist(),
            "text_q": self.text_q,
            "text_r": self.text_r,
            "q_emb": self.q_emb.tolist(),
            "r_emb": self.r_emb.tolist(),
            "qr_emb": self.qr_emb.tolist(),
            "meta": dict(self.meta),
        }

    def with_changes(self, **changes) -> "Demonstration":
        record = {
            "id": self.id, "image_emb": self.image_emb, "text_q": self.text_q,
            "text_r": self.text_r, "q_emb": self.q_emb, "r_emb": self.r_emb,
            "qr_emb": self.qr_emb, "meta": dict(self.meta),
        }
        record.update(changes)
        return Demonstration(**record)

    def __eq__(self, other) -> bool:
        return isinstance(other, Demonstration) and self.to_record() == other.to_record()

    def __hash__(self) -> int:
        return hash(self.id)


@dataclass(frozen=True, eq=False)
class QuerySample:
    """
    A query (image, question) with an optional ground-truth response.

    A sample without ``ground_truth_r`` is usable for inference only.
    """
    id: str
    image_emb: np.ndarray
    text_q: str
    q_emb: np.ndarray
    ground_truth_r: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "image_emb", _frozen_vector(self.image_emb, "image_emb"))
        object.__setattr__(self, "q_emb", _frozen_vector(self.q_emb, "q_emb"))

    @property
    def has_ground_truth(self) -> bool:
        return self.ground_truth_r is not None

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "image_emb": self.image_emb.tolist(),
            "text_q": self.text_q,
            "q_emb": self.q_emb.tolist(),
            "ground_truth_r": self.ground_truth_r,
            "meta": dict(self.meta),
        }

    def with_changes(self, **changes) -> "QuerySample":
        record = {
            "id": self.id, "image_emb": self.image_emb, "text_q": self.text_q,
            "q_emb": self.q_emb, "ground_truth_r": self.ground_truth_r, "meta": dict(self.meta),
        }
        record.update(changes)
        return QuerySample(**record)

    @classmethod
    def from_demonstration(cls, demo: Demonstration) -> "QuerySample":
        """Turn a library demonstration into a query whose ground truth is its response."""
        return cls(
            id=demo.id, image_emb=demo.image_emb, text_q=demo.text_q, q_emb=demo.q_emb,
            ground_truth_r=demo.text_r, meta=dict(demo.meta),
        )

    def __eq__(self, other) -> bool:
        return isinstance(other, QuerySample) and self.to_record() == other.to_record()

    def __hash__(self) -> int:
        return hash(self.id)


@dataclass(frozen=True, eq=False)
class DemoLibrary:
    """
    Immutable map of demonstration id to demonstration, with constant embedding widths.

    ``meta`` carries library-level channels: ``instruction`` (Inst), ``inst_emb``
    (the simplified-instruction embedding) and ``labels``.
    """
    demos: Mapping[str, Demonstration]
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        demos = dict(self.demos)
        dims = None
        for demo_id, demo in demos.items():
            if demo_id != demo.id:
                raise DatasetValidationError(f"library key {demo_id} does not match demo id {demo.id}")
            if dims is None:
                dims = demo.dims
            elif demo.dims != dims:
                raise DimensionError(f"demonstration {demo_id} has dims {demo.dims}, expected {dims}")
        object.__setattr__(self, "demos", demos)

    @classmethod
    def from_demos(cls, demos: Iterable[Demonstration], meta: Optional[Dict[str, Any]] = None) -> "DemoLibrary":
        mapping: Dict[str, Demonstration] = {}
        for demo in demos:
            if demo.id in mapping:
                raise DatasetValidationError(f"duplicate demonstration id: {demo.id}")
            mapping[demo.id] = demo
        return cls(mapping, dict(meta or {}))

    # --- mapping protocol ---
    def __len__(self) -> int:
        return len(self.demos)

    def __contains__(self, demo_id: str) -> bool:
        return demo_id in self.demos

    def __iter__(self) -> Iterator[Demonstration]:
        return iter(self.demos[i] for i in self.ids)

    def __getitem__(self, demo_id: str) -> Demonstration:
        try:
            return self.demos[demo_id]
        except KeyError:
            raise UnresolvedReferenceError(f"demonstration id not in library: {demo_id}") from None

    def require_non_empty(self) -> None:
        if not self.demos:
            raise EmptyLibraryError("demonstration library is empty")

    # --- derived views (computed once; the library is immutable) ---
    @cached_property
    def ids(self) -> Tuple[str, ...]:
        """Demonstration ids in sorted order; all matrices use this row order."""
        return tuple(sorted(self.demos))

    @cached_property
    def index(self) -> Dict[str, int]:
        return {demo_id: i for i, demo_id in enumerate(self.ids)}

    @property
    def dims(self) -> Tuple[int, int]:
        if not self.demos:
            return 0, 0
        return next(iter(self.demos.values())).dims

    def matrix(self, name: str) -> np.ndarray:
        """Stack one embedding field of every demonstration, rows in ``ids`` order."""
        cache = self.__dict__.setdefault("_matrices", {})
        if name not in cache:
            if not self.demos:
                cache[name] = np.zeros((0, 0))
            else:
                stacked = np.stack([getattr(self.demos[i], name) for i in self.ids])
                stacked.setflags(write=False)
                cache[name] = stacked
        return cache[name]

    @property
    def instruction(self) -> str:
        return str(self.meta.get("instruction", ""))

    @property
    def inst_emb(self) -> Optional[np.ndarray]:
        value = self.meta.get("inst_emb")
        return None if value is None else np.asarray(value, dtype=np.float64)

    @property
    def labels(self) -> List[str]:
        return list(self.meta.get("labels", []))

    def response_embedding(self, text: str) -> np.ndarray:
        """
        Embed a response string as the mean ``r_emb`` of demonstrations with that response.

        Args:
            text: Response text

        Returns:
            Mean response embedding

        Raises:
            UnresolvedReferenceError: If no demonstration has this response
        """
        rows = [demo.r_emb for demo in self if demo.text_r == text]
        if not rows:
            raise UnresolvedReferenceError(f"no demonstration has response {text!r}")
        return np.mean(np.stack(rows), axis=0)

    def subset(self, ids: Iterable[str]) -> "DemoLibrary":
        return DemoLibrary.from_demos((self[i] for i in ids), self.meta)

    def without(self, ids: Iterable[str]) -> "DemoLibrary":
        drop = set(ids)
        return DemoLibrary.from_demos((d for d in self if d.id not in drop), self.meta)

    def replace(self, demos: Iterable[Demonstration]) -> "DemoLibrary":
        """Return a library where the given demonstrations replace those with the same id."""
        updated = dict(self.demos)
        for demo in demos:
            if demo.id not in updated:
                raise UnresolvedReferenceError(f"demonstration id not in library: {demo.id}")
            updated[demo.id] = demo
        return DemoLibrary(updated, dict(self.meta))

    def with_meta(self, **meta) -> "DemoLibrary":
        merged = dict(self.meta)
        merged.update(meta)
        return DemoLibrary(self.demos, merged)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, DemoLibrary)
            and self.ids == other.ids
            and all(self.demos[i] == other.demos[i] for i in self.ids)
            and to_plain(self.meta) == to_plain(other.meta)
        )

    __hash__ = None


def to_plain(value: Any) -> Any:
    """Convert arrays inside nested metadata to lists for comparison and JSON."""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True)
class IclSequence:
    """
    An instruction, an ordered list of distinct demonstration ids, and a query.
    """
    instruction: str
    icd_ids: Tuple[str, ...]
    query: QuerySample

    def __post_init__(self):
        ids = tuple(self.icd_ids)
        if len(set(ids)) != len(ids):
            raise DatasetValidationError(f"sequence for query {self.query.id} repeats a demonstration")
        object.__setattr__(self, "icd_ids", ids)

    @property
    def shot(self) -> int:
        return len(self.icd_ids)

    def validate(self, library: DemoLibrary) -> None:
        for demo_id in self.icd_ids:
            if demo_id not in library:
                raise UnresolvedReferenceError(f"demonstration id not in library: {demo_id}")

    def demos(self, library: DemoLibrary) -> List[Demonstration]:
        return [library[i] for i in self.icd_ids]

    def with_icds(self, icd_ids: Sequence[str]) -> "IclSequence":
        return IclSequence(self.instruction, tuple(icd_ids), self.query)

    def with_query(self, query: QuerySample) -> "IclSequence":
        return IclSequence(self.instruction, self.icd_ids, query)


def permute_sequence(seq: IclSequence, perm: Sequence[int]) -> IclSequence:
    """
    Reorder the demonstrations of a sequence.

    Args:
        seq: Sequence to reorder
        perm: New position k takes the demonstration at ``perm[k]``

    Returns:
        Sequence with the same instruction and query

    Raises:
        InvalidPermutationError: If ``perm`` is not a permutation of 0..n-1
    """
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(seq.shot)):
        raise InvalidPermutationError(f"{perm} is not a permutation of {seq.shot} positions")
    return seq.with_icds([seq.icd_ids[p] for p in perm])


@dataclass(frozen=True)
class SequenceDataset:
    """
    N-shot ICL sequences used for training or produced by inference.
    """
    sequences: Tuple[IclSequence, ...]
    shot: int

    def __post_init__(self):
        sequences = tuple(self.sequences)
        for position, seq in enumerate(sequences):
            if seq.shot != self.shot:
                raise DatasetValidationError(
                    f"sequence {position} has {seq.shot} demonstrations, dataset shot is {self.shot}"
                )
        object.__setattr__(self, "sequences", sequences)

    @classmethod
    def from_sequences(cls, sequences: Sequence[IclSequence]) -> "SequenceDataset":
        """Infer the shot count from the first sequence (0 for an empty dataset)."""
        sequences = tuple(sequences)
        shot = sequences[0].shot if sequences else 0
        return cls(sequences, shot)

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[IclSequence]:
        return iter(self.sequences)

    def __getitem__(self, index: int) -> IclSequence:
        return self.sequences[index]

    def validate(self, library: DemoLibrary) -> None:
        for seq in self.sequences:
            seq.validate(library)
