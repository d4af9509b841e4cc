"""
Wire protocol for the external scorer bridge.

Messages are single JSON objects terminated by a newline. Every message
carries the protocol version and a request id; replies echo the id.

Request:  {version, req_id, kind, instruction, icd: [{text_q, text_r}], query_text, response_text}
Reply:    {version, req_id, loglik} | {version, req_id, label_probs} | {version, req_id, labels}
          | {version, req_id, error}
"""
import json
import math
import uuid
from typing import Any, Dict, Optional, Sequence

from taco_icl.data.schema import Demonstration, QuerySample
from taco_icl.exceptions import ScorerProtocolError

PROTOCOL_VERSION = 1
KINDS = ("loglik", "label_probs", "labels")


def new_request_id() -> str:
    return uuid.uuid4().hex


def build_request(
    kind: str,
    instruction: str = "",
    icds: Sequence[Demonstration] = (),
    query: Optional[QuerySample] = None,
    response: Optional[str] = None,
    req_id: Optional[str] = None
) -> Dict[str, Any]:
    if kind not in KINDS:
        raise ScorerProtocolError(f"unknown request kind {kind!r}", req_id)
    return {
        "version": PROTOCOL_VERSION,
        "req_id": req_id or new_request_id(),
        "kind": kind,
        "instruction": instruction,
        "icd": [{"text_q": d.text_q, "text_r": d.text_r} for d in icds],
        "query_text": query.text_q if query is not None else "",
        "response_text": response,
    }


def encode(message: Dict[str, Any], max_payload_bytes: Optional[int] = None) -> bytes:
    """Serialize a message; ScorerProtocolError when it exceeds ``max_payload_bytes``."""
    payload = (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")
    if max_payload_bytes is not None and len(payload) > max_payload_bytes:
        raise ScorerProtocolError(
            f"payload of {len(payload)} bytes exceeds the {max_payload_bytes}-byte limit", message.get("req_id")
        )
    return payload


def _parse(raw: bytes, req_id: Optional[str] = None) -> Dict[str, Any]:
    try:
        message = json.loads(raw.decode("utf-8").rstrip("\n"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ScorerProtocolError(f"malformed message: {e}", req_id) from e
    if not isinstance(message, dict):
        raise ScorerProtocolError("message is not a JSON object", req_id)
    if message.get("version") != PROTOCOL_VERSION:
        raise ScorerProtocolError(f"unsupported protocol version {message.get('version')!r}", req_id)
    return message


def decode_request(raw: bytes) -> Dict[str, Any]:
    message = _parse(raw)
    if message.get("kind") not in KINDS or not message.get("req_id"):
        raise ScorerProtocolError("request lacks a valid kind or req_id", message.get("req_id"))
    return message


def _finite(value: Any, what: str, req_id: str) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ScorerProtocolError(f"{what} is not a number: {value!r}", req_id) from None
    if not math.isfinite(number):
        raise ScorerProtocolError(f"{what} is not finite: {number}", req_id)
    return number


def decode_reply(raw: bytes, req_id: str, kind: str):
    """
    Check a reply against its request and return the payload value.

    Args:
        raw: Reply bytes
        req_id: Id of the request being answered
        kind: Kind of the request

    Returns:
        float for loglik, dict for label_probs, list for labels

    Raises:
        ScorerProtocolError: On malformed replies, mismatched ids, remote errors or non-finite values
    """
    message = _parse(raw, req_id)
    if message.get("req_id") != req_id:
        raise ScorerProtocolError(f"reply for {message.get('req_id')!r} does not match request", req_id)
    if "error" in message:
        raise ScorerProtocolError(f"scorer error: {message['error']}", req_id)
    if kind not in message:
        raise ScorerProtocolError(f"reply has no {kind!r} field", req_id)
    value = message[kind]
    if kind == "loglik":
        return _finite(value, "loglik", req_id)
    if kind == "label_probs":
        if not isinstance(value, dict) or not value:
            raise ScorerProtocolError("label_probs must be a non-empty object", req_id)
        return {str(label): _finite(p, f"probability of {label}", req_id) for label, p in value.items()}
    if not isinstance(value, list) or not all(isinstance(label, str) for label in value):
        raise ScorerProtocolError("labels must be a list of strings", req_id)
    return list(value)


def build_reply(req_id: str, **payload) -> Dict[str, Any]:
    return {"version": PROTOCOL_VERSION, "req_id": req_id, **payload}

