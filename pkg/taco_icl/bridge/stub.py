"""
Stub scoring service for exercising the external scorer bridge.

Answers requests on a ZeroMQ REP socket from a background thread. The default
handler echoes a constant log-likelihood and uniform label probabilities.
"""
import threading
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import zmq

from taco_icl.bridge.protocol import build_reply, decode_request, encode
from taco_icl.exceptions import ScorerProtocolError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("bridge.stub")

Handler = Callable[[Dict[str, Any]], Dict[str, Any]]
POLL_MS = 50


def echo_handler(labels: Sequence[str], loglik: float = 0.0) -> Handler:
    """Handler answering every loglik with ``loglik`` and every label_probs uniformly."""
    labels = list(labels)

    def handle(request: Dict[str, Any]) -> Dict[str, Any]:
        if request["kind"] == "loglik":
            return {"loglik": loglik}
        if request["kind"] == "label_probs":
            return {"label_probs": {label: 1.0 / len(labels) for label in labels}}
        return {"labels": labels}

    return handle


class StubScorerServer:
    """
    Class to serve scoring requests from a background thread.

    Attributes:
        endpoint: Address clients connect to (filled in after ``start``)
        request_ids: Ids of every request received, in arrival order
    """

    def __init__(
        self,
        handler: Optional[Handler] = None,
        labels: Sequence[str] = ("yes", "no"),
        bind: str = "tcp://127.0.0.1",
        delay_s: float = 0.0,
        context: Optional[zmq.Context] = None
    ):
        self.handler = handler or echo_handler(labels)
        self.bind = bind
        self.delay_s = float(delay_s)
        self.endpoint: Optional[str] = None
        self.request_ids: List[str] = []
        self._context = context or zmq.Context.instance()
        self._stop = threading.Event()
        self._ready = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _serve(self) -> None:
        socket = self._context.socket(zmq.REP)
        socket.setsockopt(zmq.LINGER, 0)
        try:
            port = socket.bind_to_random_port(self.bind)
            self.endpoint = f"{self.bind}:{port}"
            self._ready.set()
            while not self._stop.is_set():
                if not socket.poll(POLL_MS, zmq.POLLIN):
                    continue
                raw = socket.recv()
                request: Dict[str, Any] = {}
                try:
                    request = decode_request(raw)
                    self.request_ids.append(request["req_id"])
                    if self.delay_s:
                        time.sleep(self.delay_s)
                    reply = build_reply(request["req_id"], **self.handler(request))
                except ScorerProtocolError as e:
                    reply = build_reply(e.request_id or "", error=str(e))
                except Exception as e:
                    logger.error(f"Stub handler failed: {e}", exc_info=True)
                    reply = build_reply(request.get("req_id", ""), error=str(e))
                socket.send(encode(reply))
        finally:
            socket.close()
            self._ready.set()

    def start(self) -> "StubScorerServer":
        self._thread = threading.Thread(target=self._serve, name="stub-scorer", daemon=True)
        self._thread.start()
        self._ready.wait(timeout=5.0)
        logger.info(f"Stub scorer listening on {self.endpoint}")
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def __enter__(self) -> "StubScorerServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
