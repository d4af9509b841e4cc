"""
External scorer client for the TACO demonstration configurator.

Talks to a scoring service over a ZeroMQ REQ socket. A fresh socket is used
for every attempt, so a lost reply never wedges the client; attempts are
retried with exponential backoff until the retry budget runs out.
"""
import time
from typing import Any, Dict, FrozenSet, List, Optional, Sequence

import zmq

from taco_icl.bridge.protocol import build_request, decode_reply, encode
from taco_icl.data.schema import Demonstration, QuerySample
from taco_icl.exceptions import ScorerTimeoutError, ScorerTransportError
from taco_icl.selection.scorer import LABEL_PROBS, LOGLIK
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("bridge.client")


class ExternalScorer:
    """
    Class to score ICL sequences with a remote model over ZeroMQ.

    Safe to call from several threads: each request opens its own socket.
    """

    def __init__(
        self,
        endpoint: str,
        timeout_ms: int = 5000,
        retries: int = 3,
        backoff_s: float = 0.2,
        max_payload_bytes: Optional[int] = 1048576,
        labels: Optional[Sequence[str]] = None,
        context: Optional[zmq.Context] = None
    ):
        self.endpoint = endpoint
        self.timeout_ms = int(timeout_ms)
        self.retries = int(retries)
        self.backoff_s = float(backoff_s)
        self.max_payload_bytes = max_payload_bytes
        self.name = f"external:{endpoint}"
        self.capabilities: FrozenSet[str] = frozenset({LOGLIK, LABEL_PROBS})
        self._labels = list(labels) if labels else None
        self._context = context or zmq.Context.instance()

    @classmethod
    def from_run_config(cls, config: Dict[str, Any], labels: Optional[Sequence[str]] = None) -> "ExternalScorer":
        section = config["scorer"]
        return cls(
            endpoint=section["endpoint"],
            timeout_ms=int(section["timeout_ms"]),
            retries=int(section["retries"]),
            backoff_s=float(section["backoff_s"]),
            max_payload_bytes=int(section["max_payload_bytes"]),
            labels=labels,
        )

    def _attempt(self, payload: bytes) -> Optional[bytes]:
        socket = self._context.socket(zmq.REQ)
        socket.setsockopt(zmq.LINGER, 0)
        try:
            socket.connect(self.endpoint)
            socket.send(payload)
            if socket.poll(self.timeout_ms, zmq.POLLIN):
                return socket.recv()
            return None
        finally:
            socket.close()

    def request(self, message: Dict[str, Any]):
        """
        Send one request and return the decoded reply value.

        Raises:
            ScorerTimeoutError: If no attempt got a reply in time
            ScorerTransportError: On socket failures
            ScorerProtocolError: On malformed or invalid replies
        """
        req_id = message["req_id"]
        payload = encode(message, self.max_payload_bytes)
        for attempt in range(self.retries + 1):
            try:
                raw = self._attempt(payload)
            except zmq.ZMQError as e:
                raise ScorerTransportError(f"transport failure talking to {self.endpoint}: {e}", req_id) from e
            if raw is not None:
                return decode_reply(raw, req_id, message["kind"])
            if attempt < self.retries:
                delay = self.backoff_s * (2 ** attempt)
                logger.warning(
                    f"No reply to {req_id} from {self.endpoint} within {self.timeout_ms} ms, "
                    f"retrying in {delay:.2f}s (attempt {attempt + 1}/{self.retries + 1})"
                )
                time.sleep(delay)
        raise ScorerTimeoutError(
            f"no reply from {self.endpoint} after {self.retries + 1} attempts", req_id
        )

    def loglik(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample, response: str) -> float:
        return self.request(build_request(LOGLIK, instruction, icds, query, response))

    def label_probs(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample) -> Dict[str, float]:
        return self.request(build_request(LABEL_PROBS, instruction, icds, query))

    def labels(self) -> List[str]:
        if self._labels is None:
            self._labels = self.request(build_request("labels"))
        return list(self._labels)
