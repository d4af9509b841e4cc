"""
File ingestion and persistence for the TACO demonstration configurator.

Libraries, query lists and sequence datasets are UTF-8 JSON-lines files.
Line 1 is a header record ``{"format": ..., "version": ...}``; each following
line holds one record. An empty dataset is stored as an empty file.
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from taco_icl.data.schema import (
    DemoLibrary,
    Demonstration,
    IclSequence,
    QuerySample,
    SequenceDataset,
    to_plain,
)
from taco_icl.exceptions import (
    DatasetValidationError,
    EmptyLibraryError,
    IngestionError,
    ValidationError,
)
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("data.io")

FORMAT_VERSION = 1
LIBRARY_FORMAT = "taco-library"
DATASET_FORMAT = "taco-dataset"
QUERIES_FORMAT = "taco-queries"

DEMO_KEYS = ("id", "image_emb", "text_q", "text_r", "q_emb", "r_emb", "qr_emb", "meta")
QUERY_KEYS = ("id", "image_emb", "text_q", "q_emb")
SEQUENCE_KEYS = ("instruction", "icd_ids", "query", "ground_truth_r")

PathLike = Union[str, Path]


def _iter_lines(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line number, parsed object) for every non-blank line."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(f"not a valid JSON object ({e.msg})", line_number) from e
            if not isinstance(record, dict):
                raise IngestionError("record is not a JSON object", line_number)
            yield line_number, record


def _check_header(line_number: int, record: Dict[str, Any], expected: str) -> None:
    if record.get("format") != expected:
        raise IngestionError(f"expected a {expected} header, got format={record.get('format')!r}", line_number)
    if record.get("version") != FORMAT_VERSION:
        raise IngestionError(f"unsupported {expected} version {record.get('version')!r}", line_number)


def _require(record: Dict[str, Any], keys: Tuple[str, ...], line_number: int) -> None:
    missing = [k for k in keys if k not in record]
    if missing:
        raise IngestionError(f"missing keys {missing}", line_number)


def _vector(value: Any, name: str, line_number: int) -> np.ndarray:
    if not isinstance(value, list) or not value or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise IngestionError(f"{name} must be a non-empty array of numbers", line_number)
    vector = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(vector)):
        raise IngestionError(f"{name} contains non-finite values", line_number)
    return vector


def _write_lines(path: PathLike, header: Optional[Dict[str, Any]], records: List[Dict[str, Any]]) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header is not None:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# --- libraries ---

def _parse_demo(record: Dict[str, Any], line_number: int) -> Demonstration:
    _require(record, DEMO_KEYS, line_number)
    if not isinstance(record["id"], str) or not record["id"]:
        raise IngestionError("id must be a non-empty string", line_number)
    if not isinstance(record["meta"], dict):
        raise IngestionError("meta must be an object", line_number)
    return Demonstration(
        id=record["id"],
        image_emb=_vector(record["image_emb"], "image_emb", line_number),
        text_q=str(record["text_q"]),
        text_r=str(record["text_r"]),
        q_emb=_vector(record["q_emb"], "q_emb", line_number),
        r_emb=_vector(record["r_emb"], "r_emb", line_number),
        qr_emb=_vector(record["qr_emb"], "qr_emb", line_number),
        meta=record["meta"],
    )


def load_library(path: PathLike) -> DemoLibrary:
    """
    Load and validate a demonstration library.

    Embedding widths are taken from the first record and enforced on the rest.

    Args:
        path: Library file

    Returns:
        DemoLibrary

    Raises:
        EmptyLibraryError: If the file holds no demonstration records
        IngestionError: On malformed records, dimension mismatches or duplicate ids,
            naming the offending line
    """
    demos: Dict[str, Demonstration] = {}
    meta: Dict[str, Any] = {}
    dims: Optional[Tuple[int, int]] = None
    header_seen = False

    for line_number, record in _iter_lines(path):
        if not header_seen:
            _check_header(line_number, record, LIBRARY_FORMAT)
            meta = dict(record.get("meta") or {})
            header_seen = True
            continue
        try:
            demo = _parse_demo(record, line_number)
        except ValidationError as e:
            if isinstance(e, IngestionError):
                raise
            raise IngestionError(str(e), line_number) from e
        if dims is None:
            dims = demo.dims
        elif demo.dims != dims:
            raise IngestionError(
                f"embedding dims (d_img, d_txt)={demo.dims} differ from first record {dims}", line_number
            )
        if demo.id in demos:
            raise IngestionError(f"duplicate id {demo.id}", line_number)
        demos[demo.id] = demo

    if not demos:
        raise EmptyLibraryError(f"library file {path} contains no demonstrations")

    library = DemoLibrary(demos, meta)
    logger.info(f"Loaded library of {len(library)} demonstrations (dims {library.dims}) from {path}")
    return library


def save_library(library: DemoLibrary, path: PathLike) -> None:
    """
    Write a library file; ``load_library`` of the result reproduces the library.

    Args:
        library: Library to write
        path: Destination file
    """
    header = {"format": LIBRARY_FORMAT, "version": FORMAT_VERSION, "meta": to_plain(library.meta)}
    _write_lines(path, header, [demo.to_record() for demo in library])
    logger.info(f"Saved library of {len(library)} demonstrations to {path}")


# --- queries ---

def _parse_query(record: Dict[str, Any], line_number: int) -> QuerySample:
    if not isinstance(record, dict):
        raise IngestionError("query must be an object", line_number)
    _require(record, QUERY_KEYS, line_number)
    ground_truth = record.get("ground_truth_r")
    return QuerySample(
        id=str(record["id"]),
        image_emb=_vector(record["image_emb"], "query.image_emb", line_number),
        text_q=str(record["text_q"]),
        q_emb=_vector(record["q_emb"], "query.q_emb", line_number),
        ground_truth_r=None if ground_truth is None else str(ground_truth),
        meta=dict(record.get("meta") or {}),
    )


def load_queries(path: PathLike) -> List[QuerySample]:
    """
    Load a query file.

    Raises:
        IngestionError: On malformed records or duplicate ids
    """
    queries: List[QuerySample] = []
    seen = set()
    header_seen = False
    for line_number, record in _iter_lines(path):
        if not header_seen:
            _check_header(line_number, record, QUERIES_FORMAT)
            header_seen = True
            continue
        query = _parse_query(record, line_number)
        if query.id in seen:
            raise IngestionError(f"duplicate query id {query.id}", line_number)
        seen.add(query.id)
        queries.append(query)
    logger.info(f"Loaded {len(queries)} queries from {path}")
    return queries


def save_queries(queries: List[QuerySample], path: PathLike) -> None:
    header = {"format": QUERIES_FORMAT, "version": FORMAT_VERSION}
    _write_lines(path, header, [q.to_record() for q in queries])
    logger.info(f"Saved {len(queries)} queries to {path}")


# --- sequence datasets ---

def _sequence_record(seq: IclSequence) -> Dict[str, Any]:
    query = seq.query.to_record()
    ground_truth = query.pop("ground_truth_r")
    return {
        "instruction": seq.instruction,
        "icd_ids": list(seq.icd_ids),
        "query": query,
        "ground_truth_r": ground_truth,
    }


def save_dataset(dataset: SequenceDataset, path: PathLike) -> None:
    """
    Write a sequence dataset. An empty dataset becomes an empty file.

    Args:
        dataset: Dataset to write
        path: Destination file
    """
    if len(dataset) == 0:
        _write_lines(path, None, [])
    else:
        header = {"format": DATASET_FORMAT, "version": FORMAT_VERSION, "shot": dataset.shot}
        _write_lines(path, header, [_sequence_record(seq) for seq in dataset])
    logger.info(f"Saved dataset of {len(dataset)} {dataset.shot}-shot sequences to {path}")


def load_dataset(path: PathLike) -> SequenceDataset:
    """
    Load a sequence dataset.

    Returns:
        SequenceDataset (empty with shot 0 for an empty file)

    Raises:
        IngestionError: On malformed records
        DatasetValidationError: If sequences disagree on the shot count
    """
    sequences: List[IclSequence] = []
    shot: Optional[int] = None
    header_seen = False
    for line_number, record in _iter_lines(path):
        if not header_seen:
            _check_header(line_number, record, DATASET_FORMAT)
            shot = record.get("shot")
            header_seen = True
            continue
        _require(record, SEQUENCE_KEYS, line_number)
        icd_ids = record["icd_ids"]
        if not isinstance(icd_ids, list) or not all(isinstance(i, str) for i in icd_ids):
            raise IngestionError("icd_ids must be an array of strings", line_number)
        query_record = dict(record["query"]) if isinstance(record["query"], dict) else record["query"]
        query = _parse_query(query_record, line_number)
        ground_truth = record["ground_truth_r"]
        query = query.with_changes(ground_truth_r=None if ground_truth is None else str(ground_truth))
        if shot is not None and len(icd_ids) != shot:
            raise DatasetValidationError(
                f"line {line_number}: sequence has {len(icd_ids)} demonstrations, dataset shot is {shot}"
            )
        try:
            sequences.append(IclSequence(str(record["instruction"]), tuple(icd_ids), query))
        except DatasetValidationError as e:
            raise IngestionError(str(e), line_number) from e

    if not sequences:
        return SequenceDataset((), 0)
    if shot is None:
        shot = sequences[0].shot
    dataset = SequenceDataset(tuple(sequences), int(shot))
    logger.info(f"Loaded dataset of {len(dataset)} {dataset.shot}-shot sequences from {path}")
    return dataset
