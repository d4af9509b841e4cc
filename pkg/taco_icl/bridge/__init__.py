"""
Bridge to an external scoring service over ZeroMQ.
"""
from taco_icl.bridge.protocol import PROTOCOL_VERSION, build_reply, build_request, decode_reply, decode_request, encode
from taco_icl.bridge.client import ExternalScorer
from taco_icl.bridge.stub import StubScorerServer, echo_handler

__all__ = [
    "PROTOCOL_VERSION", "build_reply", "build_request", "decode_reply", "decode_request", "encode",
    "ExternalScorer", "StubScorerServer", "echo_handler",
]
