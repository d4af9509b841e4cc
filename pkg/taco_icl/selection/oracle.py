"""
Oracle sequence construction module for the TACO demonstration configurator.

The Oracle grows a sequence one demonstration at a time, appending whichever
candidate most increases the scorer's log-likelihood of the ground-truth
response. ``build_training_set`` widens this into a beam (or an exact search
on small pools) and keeps the best sequences per query as training data.
"""
import concurrent.futures
import itertools
import math
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from taco_icl.core import Rng
from taco_icl.data.schema import DemoLibrary, IclSequence, QuerySample, SequenceDataset
from taco_icl.exceptions import ConfigError, SearchError
from taco_icl.selection.baselines import (
    baseline_i2i,
    baseline_rs,
    candidate_ids,
    iq2iq_ranking,
    rank_by_similarity,
)
from taco_icl.selection.scorer import LOGLIK, ScorerInterface, predict_label, require_capability
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("selection.oracle")

ORACLE_METHODS = ("oracle", "rs", "i2i", "iq2iq")
PSEUDO_SOURCES = ("rs", "i2i")


@dataclass(frozen=True)
class OracleConfig:
    method: str = "oracle"
    shots: int = 4
    pool_per_shot: int = 64
    beam: int = 0
    keep: int = 0
    exhaustive_limit: int = 5000
    max_workers: int = 1

    def __post_init__(self):
        if self.method not in ORACLE_METHODS:
            raise ConfigError(f"oracle method must be one of {ORACLE_METHODS}, got {self.method}")
        if self.shots < 1:
            raise ConfigError(f"oracle shots must be positive, got {self.shots}")
        if self.pool_per_shot < 1 or self.beam < 0 or self.keep < 0 or self.exhaustive_limit < 0:
            raise ConfigError("pool_per_shot must be positive; beam, keep and exhaustive_limit non-negative")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be positive")

    @property
    def beam_width(self) -> int:
        return self.beam or 2 * self.shots

    @property
    def keep_count(self) -> int:
        return self.keep or 2 * self.shots

    @classmethod
    def from_run_config(cls, config: Dict[str, Any]) -> "OracleConfig":
        section = config["oracle"]
        names = {f.name for f in fields(cls)} - {"max_workers"}
        values = {name: section[name] for name in names if name in section}
        return cls(max_workers=int(config["scorer"]["max_concurrency"]), **values)


def _score_all(
    scorer: ScorerInterface,
    instruction: str,
    library: DemoLibrary,
    sequences: Sequence[Tuple[str, ...]],
    query: QuerySample,
    response: str,
    max_workers: int = 1
) -> List[float]:
    """Log-likelihood of ``response`` under each candidate ICD id tuple, in input order."""
    def score(ids: Tuple[str, ...]) -> float:
        return float(scorer.loglik(instruction, [library[i] for i in ids], query, response))

    if max_workers <= 1 or len(sequences) <= 1:
        return [score(ids) for ids in sequences]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
        return list(executor.map(score, sequences))


def _target_response(query: QuerySample, response: Optional[str]) -> str:
    if response is not None:
        return response
    if not query.has_ground_truth:
        raise SearchError(f"query {query.id} has no ground-truth response to score against")
    return query.ground_truth_r


def oracle_greedy(
    query: QuerySample,
    candidates: Sequence[str],
    library: DemoLibrary,
    scorer: ScorerInterface,
    n: int,
    instruction: Optional[str] = None,
    response: Optional[str] = None,
    max_workers: int = 1
) -> List[str]:
    """
    Greedily pick n demonstrations that maximize the incremental log-likelihood gain.

    At each step the candidate x maximizing C(S + x) - C(S) is appended. C(S)
    is fixed within a step, so this is the argmax of C(S + x); ties go to the
    lowest id.

    Args:
        query: Query with a ground-truth response (or pass ``response``)
        candidates: Candidate demonstration ids
        library: Library resolving the ids
        scorer: Scorer with log-likelihoods
        n: Number of demonstrations to pick
        instruction: Instruction text, the library's when omitted
        response: Response to score instead of the ground truth
        max_workers: Threads scoring the candidates of one step

    Returns:
        Ordered demonstration ids

    Raises:
        SearchError: If there are fewer than n candidates or no response to score
        CapabilityError: If the scorer has no log-likelihoods
    """
    require_capability(scorer, LOGLIK)
    target = _target_response(query, response)
    instruction = library.instruction if instruction is None else instruction
    pool = sorted(set(candidates))
    if len(pool) < n:
        raise SearchError(f"{len(pool)} candidates for an {n}-shot sequence")

    chosen: List[str] = []
    for _ in range(n):
        remaining = [c for c in pool if c not in chosen]
        scores = _score_all(
            scorer, instruction, library, [tuple(chosen) + (c,) for c in remaining], query, target, max_workers
        )
        best, best_score = None, -math.inf
        for candidate, value in zip(remaining, scores):
            if value > best_score:
                best, best_score = candidate, value
        if best is None:
            best = remaining[0]
        chosen.append(best)
    return chosen


def top_sequences_beam(
    query: QuerySample,
    candidates: Sequence[str],
    library: DemoLibrary,
    scorer: ScorerInterface,
    n: int,
    beam: int,
    keep: int,
    instruction: str,
    response: str,
    max_workers: int = 1
) -> List[Tuple[Tuple[str, ...], float]]:
    """
    Beam search over greedy expansions, scoring every prefix with C.

    Returns:
        Up to ``keep`` (ids, score) pairs, best first, ties by id tuple
    """
    pool = sorted(set(candidates))
    beams: List[Tuple[Tuple[str, ...], float]] = [((), 0.0)]
    for step in range(n):
        expansions = [prefix + (c,) for prefix, _ in beams for c in pool if c not in prefix]
        scores = _score_all(scorer, instruction, library, expansions, query, response, max_workers)
        ranked = sorted(zip(expansions, scores), key=lambda item: (-item[1], item[0]))
        width = max(beam, keep) if step == n - 1 else beam
        beams = ranked[:width]
    return beams[:keep]


def top_sequences_exhaustive(
    query: QuerySample,
    candidates: Sequence[str],
    library: DemoLibrary,
    scorer: ScorerInterface,
    n: int,
    keep: int,
    instruction: str,
    response: str,
    max_workers: int = 1
) -> List[Tuple[Tuple[str, ...], float]]:
    """Score every ordered n-sequence of the candidates and return the best ``keep``."""
    sequences = list(itertools.permutations(sorted(set(candidates)), n))
    scores = _score_all(scorer, instruction, library, sequences, query, response, max_workers)
    return sorted(zip(sequences, scores), key=lambda item: (-item[1], item[0]))[:keep]


def ordered_count(pool_size: int, n: int) -> int:
    """Number of ordered n-sequences without repeats from a pool."""
    return math.perm(pool_size, n) if pool_size >= n else 0


def candidate_pool(query: QuerySample, library: DemoLibrary, size: int, rng: Rng) -> List[str]:
    """
    Sample a candidate pool for one query, clamped to the library.

    Args:
        query: Query the pool is for (never part of its own pool)
        library: Demonstration library
        size: Requested pool size
        rng: Generator

    Returns:
        Sorted candidate ids
    """
    ids = [i for i in library.ids if i != query.id]
    if size >= len(ids):
        if size > len(ids):
            logger.warning(f"Candidate pool of {size} clamped to the {len(ids)} available demonstrations")
        return ids
    picked = rng.choice(len(ids), size=size, replace=False)
    return sorted(ids[int(i)] for i in picked)


def _retrieval_sequences(
    method: str,
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    keep: int,
    rng: Rng,
    instruction: str
) -> List[IclSequence]:
    if method == "rs":
        return [baseline_rs(query, library, n, rng, instruction) for _ in range(keep)]
    if method == "i2i":
        ids = candidate_ids(query, library, n)
        rows = [library.index[i] for i in ids]
        ranked = [i for i, _ in rank_by_similarity(library.matrix("image_emb")[rows], query.image_emb, ids)]
    else:
        ranked = [i for i, _ in iq2iq_ranking(query, library)]
    if len(ranked) < n:
        raise SearchError(f"library offers {len(ranked)} demonstrations for query {query.id}, need {n}")
    windows = min(keep, len(ranked) - n + 1)
    return [IclSequence(instruction, tuple(ranked[start:start + n]), query) for start in range(windows)]


def build_training_set(
    library: DemoLibrary,
    queries: Sequence[QuerySample],
    scorer: ScorerInterface,
    config: OracleConfig,
    rng: Rng,
    instruction: Optional[str] = None,
    progress: bool = False
) -> SequenceDataset:
    """
    Build the N-shot training dataset, ``keep`` sequences per query.

    For the Oracle method each query gets a random candidate pool of
    ``pool_per_shot * N`` demonstrations. When the beam is at least 2 and the
    pool has at most ``exhaustive_limit`` ordered N-sequences the exact top
    sequences are found by enumeration; otherwise a beam search over greedy
    expansions is used. RS, I2I and IQ2IQ emit sequences from the matching
    baseline instead.

    Args:
        library: Demonstration library (queries already split out)
        queries: Training queries with ground-truth responses
        scorer: Scorer with log-likelihoods
        config: Construction settings
        rng: Generator for candidate pools and random sequences
        instruction: Instruction text, the library's when omitted
        progress: Show a progress bar over queries

    Returns:
        SequenceDataset in target order
    """
    library.require_non_empty()
    instruction = library.instruction if instruction is None else instruction
    n = config.shots
    keep = config.keep_count
    if config.method == "oracle":
        require_capability(scorer, LOGLIK)

    sequences: List[IclSequence] = []
    short = 0
    for query in tqdm(queries, desc=f"build {config.method}", disable=not progress):
        if config.method != "oracle":
            built = _retrieval_sequences(config.method, query, library, n, keep, rng, instruction)
        else:
            response = _target_response(query, None)
            pool = candidate_pool(query, library, config.pool_per_shot * n, rng)
            if len(pool) < n:
                raise SearchError(f"candidate pool of {len(pool)} for an {n}-shot sequence")
            beam = config.beam_width
            if beam >= 2 and ordered_count(len(pool), n) <= config.exhaustive_limit:
                ranked = top_sequences_exhaustive(
                    query, pool, library, scorer, n, keep, instruction, response, config.max_workers
                )
            else:
                ranked = top_sequences_beam(
                    query, pool, library, scorer, n, beam, keep, instruction, response, config.max_workers
                )
            built = [IclSequence(instruction, ids, query) for ids, _ in ranked]
        if len(built) < keep:
            short += 1
        sequences.extend(built)

    if short:
        logger.warning(f"{short} queries produced fewer than {keep} distinct sequences")
    logger.info(f"Built {len(sequences)} {n}-shot sequences for {len(queries)} queries with {config.method}")
    return SequenceDataset(tuple(sequences), n)


def pseudo_oracle(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    scorer: ScorerInterface,
    rng: Rng,
    source: str = "rs",
    pool_size: Optional[int] = None,
    instruction: Optional[str] = None,
    max_workers: int = 1
) -> IclSequence:
    """
    Oracle for queries without ground truth.

    An RS or I2I prompt first predicts a pseudo response; the greedy Oracle
    then maximizes the log-likelihood of that response.

    Args:
        query: Query, ground truth not needed
        library: Demonstration library
        n: Shot count
        scorer: Scorer with label probabilities and log-likelihoods
        rng: Generator for the RS prompt and the candidate pool
        source: "rs" or "i2i"
        pool_size: Candidate pool size, the whole library when omitted
        instruction: Instruction text, the library's when omitted
        max_workers: Threads scoring one greedy step

    Returns:
        IclSequence
    """
    if source not in PSEUDO_SOURCES:
        raise ConfigError(f"pseudo response source must be one of {PSEUDO_SOURCES}, got {source}")
    instruction = library.instruction if instruction is None else instruction
    if n == 0:
        return IclSequence(instruction, (), query)
    if source == "rs":
        prompt = baseline_rs(query, library, n, rng, instruction)
    else:
        prompt = baseline_i2i(query, library, n, rng, instruction)
    pseudo = predict_label(scorer, instruction, prompt.demos(library), query)
    pool = candidate_pool(query, library, pool_size or len(library), rng)
    ids = oracle_greedy(query, pool, library, scorer, n, instruction, pseudo, max_workers)
    return IclSequence(instruction, tuple(ids), query)
