"""
Prompt assembly for ICL sequences.
"""
from enum import Enum
from typing import List, Union

from taco_icl.data.schema import DemoLibrary, IclSequence


class InstPosition(str, Enum):
    BEGINNING = "beginning"
    MIDDLE = "middle"
    END = "end"


def _escape(text: str) -> str:
    # Fields stay on one line so the prompt layout identifies every field.
    return text.replace("\\", "\\\\").replace("\n", "\\n")


def _icd_block(text_q: str, text_r: str) -> str:
    return f"Query: {_escape(text_q)}\nResponse: {_escape(text_r)}\n"


def assemble_prompt(
    seq: IclSequence,
    library: DemoLibrary,
    inst_position: Union[InstPosition, str] = InstPosition.BEGINNING
) -> str:
    """
    Render a sequence as prompt text.

    The instruction block comes first (beginning), between the demonstrations
    and the query (middle), or after the query (end). The query block ends with
    "Response:" and never carries the query's response.

    Args:
        seq: Sequence to render
        library: Library resolving the demonstration ids
        inst_position: Where the instruction goes

    Returns:
        Prompt text

    Raises:
        UnresolvedReferenceError: If an id is missing from the library
    """
    position = InstPosition(inst_position)
    instruction = f"{_escape(seq.instruction)}\n"
    icds: List[str] = [_icd_block(d.text_q, d.text_r) for d in seq.demos(library)]
    query = f"Query: {_escape(seq.query.text_q)}\nResponse:"

    if position is InstPosition.BEGINNING:
        return instruction + "".join(icds) + query
    if position is InstPosition.MIDDLE:
        return "".join(icds) + instruction + query
    return "".join(icds) + query + "\n" + instruction.rstrip("\n")
