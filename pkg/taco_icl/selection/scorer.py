"""
Scorer interface for sequence search and evaluation.

A scorer stands in for the vision-language model: it rates an ICL sequence
by the log-likelihood of a response, or by a distribution over a label set.
"""
import hashlib
import json
import threading
from typing import Dict, FrozenSet, List, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from taco_icl.data.schema import Demonstration, QuerySample, to_plain
from taco_icl.db import ScoreRecord, get_session, init_db
from taco_icl.exceptions import CapabilityError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("selection.scorer")

LOGLIK = "loglik"
LABEL_PROBS = "label_probs"


@runtime_checkable
class ScorerInterface(Protocol):
    """Anything that can score ICL sequences; ``capabilities`` lists the supported calls."""

    name: str
    capabilities: FrozenSet[str]

    def loglik(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample, response: str) -> float:
        ...

    def label_probs(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample) -> Dict[str, float]:
        ...

    def labels(self) -> List[str]:
        ...


def require_capability(scorer: ScorerInterface, capability: str) -> None:
    if capability not in scorer.capabilities:
        raise CapabilityError(f"scorer {scorer.name} does not support {capability}")


def predict_label(scorer: ScorerInterface, instruction: str, icds: Sequence[Demonstration], query: QuerySample) -> str:
    """Most probable label; ties go to the label listed first."""
    probs = scorer.label_probs(instruction, icds, query)
    return max(probs, key=lambda label: (probs[label], -list(probs).index(label)))


def _digest_vector(h, vector: np.ndarray) -> None:
    h.update(np.ascontiguousarray(vector, dtype=np.float64).tobytes())


def demo_digest(demo: Demonstration) -> str:
    """Content hash of a demonstration, metadata included."""
    h = hashlib.sha256()
    h.update(json.dumps([demo.id, demo.text_q, demo.text_r, to_plain(demo.meta)], sort_keys=True).encode("utf-8"))
    for vector in (demo.image_emb, demo.q_emb, demo.r_emb, demo.qr_emb):
        _digest_vector(h, vector)
    return h.hexdigest()


def query_digest(query: QuerySample) -> str:
    h = hashlib.sha256()
    h.update(json.dumps([query.id, query.text_q, to_plain(query.meta)], sort_keys=True).encode("utf-8"))
    _digest_vector(h, query.image_emb)
    _digest_vector(h, query.q_emb)
    return h.hexdigest()


def request_hash(
    kind: str,
    scorer_name: str,
    instruction: str,
    icds: Sequence[Demonstration],
    query: QuerySample,
    response: Optional[str] = None
) -> str:
    """
    Hash identifying a scoring request by content.

    Args:
        kind: "loglik" or "label_probs"
        scorer_name: Name of the scorer answering the request
        instruction: Instruction text
        icds: Demonstrations in order
        query: Query sample
        response: Response text (loglik only)

    Returns:
        Hex digest
    """
    payload = {
        "kind": kind,
        "scorer": scorer_name,
        "instruction": instruction,
        "icds": [demo_digest(d) for d in icds],
        "query": query_digest(query),
        "response": response,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


class CachedScorer:
    """
    Class to memoize another scorer's answers in memory and, optionally, in SQLite.

    ``calls`` counts requests answered by the wrapped scorer; ``cache_hits``
    counts requests served from the cache. Safe to share between threads.
    """

    def __init__(self, inner: ScorerInterface, cache_path: Optional[str] = None):
        self.inner = inner
        self.name = inner.name
        self.capabilities = inner.capabilities
        self.calls = 0
        self.cache_hits = 0
        self._memory: Dict[str, object] = {}
        self._lock = threading.Lock()
        self._cache_path = cache_path or None
        if self._cache_path:
            init_db(self._cache_path)

    def labels(self) -> List[str]:
        return self.inner.labels()

    def _lookup(self, key: str):
        with self._lock:
            if key in self._memory:
                self.cache_hits += 1
                return True, self._memory[key]
        if self._cache_path:
            session = get_session(self._cache_path)
            try:
                record = session.get(ScoreRecord, key)
                if record is not None:
                    record.hits += 1
                    session.commit()
                    value = record.loglik if record.kind == LOGLIK else json.loads(record.payload)
                    with self._lock:
                        self._memory[key] = value
                        self.cache_hits += 1
                    return True, value
            finally:
                session.close()
        return False, None

    def _store(self, key: str, kind: str, value) -> None:
        with self._lock:
            self._memory[key] = value
            self.calls += 1
        if self._cache_path:
            session = get_session(self._cache_path)
            try:
                session.merge(ScoreRecord(
                    request_hash=key,
                    scorer=self.name,
                    kind=kind,
                    loglik=value if kind == LOGLIK else None,
                    payload=json.dumps(value) if kind == LABEL_PROBS else None,
                    hits=0,
                ))
                session.commit()
            except Exception as e:
                session.rollback()
                logger.warning(f"Could not persist score {key[:12]}: {e}")
            finally:
                session.close()

    def loglik(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample, response: str) -> float:
        key = request_hash(LOGLIK, self.name, instruction, icds, query, response)
        found, value = self._lookup(key)
        if found:
            return value
        value = float(self.inner.loglik(instruction, icds, query, response))
        self._store(key, LOGLIK, value)
        return value

    def label_probs(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample) -> Dict[str, float]:
        key = request_hash(LABEL_PROBS, self.name, instruction, icds, query)
        found, value = self._lookup(key)
        if found:
            return dict(value)
        value = dict(self.inner.label_probs(instruction, icds, query))
        self._store(key, LABEL_PROBS, value)
        return dict(value)
