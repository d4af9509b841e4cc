"""
ICL data model, file persistence and prompt assembly.
"""
from taco_icl.data.schema import (
    Demonstration,
    QuerySample,
    DemoLibrary,
    IclSequence,
    SequenceDataset,
    permute_sequence,
    to_plain,
)
from taco_icl.data.io import (
    load_library,
    save_library,
    load_queries,
    save_queries,
    load_dataset,
    save_dataset,
)
from taco_icl.data.prompt import InstPosition, assemble_prompt

__all__ = [
    "Demonstration", "QuerySample", "DemoLibrary", "IclSequence", "SequenceDataset",
    "permute_sequence", "to_plain",
    "load_library", "save_library", "load_queries", "save_queries",
    "load_dataset", "save_dataset",
    "InstPosition", "assemble_prompt",
]
