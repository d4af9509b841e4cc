"""
Test script for the external scorer bridge.
"""
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from taco_icl.utils.logger import setup_logging
from taco_icl.bridge import ExternalScorer, StubScorerServer, build_reply, build_request, decode_reply, encode
from taco_icl.bridge.protocol import decode_request
from taco_icl.data import Demonstration, QuerySample
from taco_icl.exceptions import ScorerProtocolError, ScorerTimeoutError, ScorerTransportError
from taco_icl.selection import CachedScorer

# Configure logging
logger = setup_logging("tests.bridge")

def demo(demo_id, text_r="yes"):
    v = np.ones(3)
    return Demonstration(demo_id, v, f"question {demo_id}", text_r, v, v, v)

def query():
    return QuerySample("q1", np.ones(3), "what is shown?", np.ones(3), "yes")

def test_echo_stub_round_trip():
    """Test the stub answers loglik, label_probs and labels."""
    with StubScorerServer(labels=("yes", "no")) as server:
        scorer = ExternalScorer(server.endpoint, timeout_ms=2000, retries=0)
        assert scorer.loglik("Inst", [demo("d1")], query(), "yes") == 0.0
        assert scorer.label_probs("Inst", [demo("d1")], query()) == {"yes": 0.5, "no": 0.5}
        assert scorer.labels() == ["yes", "no"]
        assert len(server.request_ids) == 3

def test_cache_in_front_of_external_scorer():
    """Test repeated requests are answered from the cache without reaching the service."""
    with StubScorerServer() as server:
        cached = CachedScorer(ExternalScorer(server.endpoint, timeout_ms=2000, retries=0))
        for _ in range(3):
            cached.loglik("Inst", [demo("d1"), demo("d2")], query(), "yes")
        assert cached.calls == 1 and cached.cache_hits == 2
        assert len(server.request_ids) == 1

        cached.loglik("Inst", [demo("d2"), demo("d1")], query(), "yes")
        assert cached.calls == 2

def test_timeout_raises_after_retries():
    """Test a slow service surfaces as ScorerTimeoutError carrying the request id."""
    with StubScorerServer(delay_s=0.5) as server:
        scorer = ExternalScorer(server.endpoint, timeout_ms=50, retries=1, backoff_s=0.01)
        with pytest.raises(ScorerTimeoutError) as info:
            scorer.loglik("Inst", [], query(), "yes")
        assert info.value.request_id
        assert isinstance(info.value, ScorerTransportError)

def test_concurrent_requests_get_their_own_replies():
    """Test eight threads sharing one client each get a reply to their own request."""
    with StubScorerServer() as server:
        scorer = ExternalScorer(server.endpoint, timeout_ms=5000, retries=0)
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(lambda i: scorer.loglik("Inst", [demo(f"d{i}")], query(), "yes"), range(8)))
        assert results == [0.0] * 8
        assert len(set(server.request_ids)) == 8

def test_non_finite_reply_is_rejected():
    """Test a service answering infinity raises a protocol error."""
    with StubScorerServer(handler=lambda request: {"loglik": math.inf}) as server:
        scorer = ExternalScorer(server.endpoint, timeout_ms=2000, retries=0)
        with pytest.raises(ScorerProtocolError):
            scorer.loglik("Inst", [], query(), "yes")

def test_decode_reply_checks():
    """Test id matching, remote errors, value checks and the version field."""
    request = build_request("loglik", "Inst", [demo("d1")], query(), "yes")
    req_id = request["req_id"]
    assert request["icd"] == [{"text_q": "question d1", "text_r": "yes"}]
    assert decode_request(encode(request))["req_id"] == req_id

    assert decode_reply(encode(build_reply(req_id, loglik=-1.5)), req_id, "loglik") == -1.5
    with pytest.raises(ScorerProtocolError):
        decode_reply(encode(build_reply("other", loglik=-1.5)), req_id, "loglik")
    with pytest.raises(ScorerProtocolError):
        decode_reply(encode(build_reply(req_id, error="model offline")), req_id, "loglik")
    with pytest.raises(ScorerProtocolError):
        decode_reply(encode(build_reply(req_id, loglik=float("nan"))), req_id, "loglik")
    with pytest.raises(ScorerProtocolError):
        decode_reply(encode(build_reply(req_id, label_probs={})), req_id, "label_probs")
    with pytest.raises(ScorerProtocolError):
        decode_reply(json.dumps({"version": 99, "req_id": req_id, "loglik": 0.0}).encode(), req_id, "loglik")
    with pytest.raises(ScorerProtocolError):
        decode_reply(b"not json", req_id, "loglik")
    with pytest.raises(ScorerProtocolError):
        build_request("generate")

def test_oversize_payload_is_rejected_before_sending():
    """Test the payload limit is enforced on the client side."""
    long_demo = Demonstration("d1", np.ones(3), "x" * 5000, "yes", np.ones(3), np.ones(3), np.ones(3))
    scorer = ExternalScorer("tcp://127.0.0.1:1", timeout_ms=10, retries=0, max_payload_bytes=1024)
    with pytest.raises(ScorerProtocolError):
        scorer.loglik("Inst", [long_demo], query(), "yes")

if __name__ == "__main__":
    test_echo_stub_round_trip()
    test_cache_in_front_of_external_scorer()
    test_timeout_raises_after_retries()
    test_concurrent_requests_get_their_own_replies()
    test_non_finite_reply_is_rejected()
    test_decode_reply_checks()
    test_oversize_payload_is_rejected_before_sending()
    logger.info("Bridge tests completed successfully!")
