"""
Baseline sequence producers for the TACO demonstration configurator.

RS samples demonstrations uniformly, I2I and IQ2IQ retrieve by embedding
similarity, IQPR retrieves with a pseudo response, and DEmO orders a fixed
set of demonstrations by content-free entropy and influence.
"""
import itertools
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from taco_icl.core import Rng
from taco_icl.data.schema import DemoLibrary, IclSequence, QuerySample
from taco_icl.exceptions import SearchError, UnresolvedReferenceError
from taco_icl.selection.scorer import LABEL_PROBS, ScorerInterface, predict_label, require_capability
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("selection.baselines")

IQPR_WIDEN = 4


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize each row; all-zero rows stay zero."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)


def joint_features(*parts: np.ndarray) -> np.ndarray:
    """Concatenate L2-normalized components row by row."""
    return np.concatenate([normalize_rows(p) for p in parts], axis=1)


def rank_by_similarity(features: np.ndarray, probe: np.ndarray, ids: Sequence[str]) -> List[Tuple[str, float]]:
    """
    Rank rows by cosine similarity to a probe vector.

    Args:
        features: (n, d) candidate features
        probe: (d,) probe
        ids: Id of each row

    Returns:
        (id, similarity) pairs, most similar first, ties by id
    """
    sims = normalize_rows(features) @ normalize_rows(probe)[0]
    return sorted(zip(ids, sims.tolist()), key=lambda pair: (-pair[1], pair[0]))


def candidate_ids(query: QuerySample, library: DemoLibrary, n: int) -> List[str]:
    """Library ids usable for a query (the query itself excluded), checked against n."""
    ids = [i for i in library.ids if i != query.id]
    if len(ids) < n:
        raise SearchError(f"library offers {len(ids)} demonstrations for query {query.id}, need {n}")
    return ids


def _instruction(library: DemoLibrary, instruction: Optional[str]) -> str:
    return library.instruction if instruction is None else instruction


def baseline_rs(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    rng: Rng,
    instruction: Optional[str] = None
) -> IclSequence:
    """Sample n distinct demonstrations uniformly at random."""
    ids = candidate_ids(query, library, n)
    picked = rng.choice(len(ids), size=n, replace=False) if n else []
    return IclSequence(_instruction(library, instruction), tuple(ids[int(i)] for i in picked), query)


def baseline_i2i(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    rng: Optional[Rng] = None,
    instruction: Optional[str] = None
) -> IclSequence:
    """Top-n demonstrations by image-embedding cosine similarity, most similar first."""
    ids = candidate_ids(query, library, n)
    rows = [library.index[i] for i in ids]
    ranked = rank_by_similarity(library.matrix("image_emb")[rows], query.image_emb, ids)
    return IclSequence(_instruction(library, instruction), tuple(i for i, _ in ranked[:n]), query)


def baseline_iq2iq(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    rng: Optional[Rng] = None,
    instruction: Optional[str] = None
) -> IclSequence:
    """Top-n demonstrations by joint image and question similarity."""
    ranked = iq2iq_ranking(query, library)
    if len(ranked) < n:
        raise SearchError(f"library offers {len(ranked)} demonstrations for query {query.id}, need {n}")
    return IclSequence(_instruction(library, instruction), tuple(i for i, _ in ranked[:n]), query)


def iq2iq_ranking(query: QuerySample, library: DemoLibrary, exclude: Sequence[str] = ()) -> List[Tuple[str, float]]:
    """
    Rank the library by joint (image, question) similarity to a query.

    Args:
        query: Probe
        library: Demonstrations to rank
        exclude: Ids left out besides the query's own id

    Returns:
        (id, similarity) pairs, most similar first
    """
    skip = set(exclude) | {query.id}
    ids = [i for i in library.ids if i not in skip]
    if not ids:
        return []
    rows = [library.index[i] for i in ids]
    features = joint_features(library.matrix("image_emb")[rows], library.matrix("q_emb")[rows])
    probe = joint_features(query.image_emb, query.q_emb)[0]
    return rank_by_similarity(features, probe, ids)


def baseline_iqpr(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    scorer: ScorerInterface,
    rng: Rng,
    instruction: Optional[str] = None
) -> IclSequence:
    """
    Retrieve with a pseudo response.

    A random n-shot prompt yields a pseudo response for the query. The 4n
    demonstrations most similar in (image, question, response) are kept, and
    the n whose responses are closest to the pseudo response are returned.

    Args:
        query: Query to build a sequence for
        library: Demonstration library
        n: Shot count
        scorer: Scorer that predicts the pseudo response
        rng: Generator for the random prompt
        instruction: Instruction text, the library's when omitted

    Returns:
        IclSequence, most response-similar demonstration first
    """
    instruction = _instruction(library, instruction)
    ids = candidate_ids(query, library, n)
    if n == 0:
        return IclSequence(instruction, (), query)
    random_seq = baseline_rs(query, library, n, rng, instruction)
    pseudo = predict_label(scorer, instruction, random_seq.demos(library), query)
    try:
        pseudo_emb = library.response_embedding(pseudo)
    except UnresolvedReferenceError:
        logger.warning(f"Pseudo response {pseudo!r} for query {query.id} not in library, using IQ2IQ")
        return baseline_iq2iq(query, library, n, rng, instruction)

    rows = [library.index[i] for i in ids]
    features = joint_features(
        library.matrix("image_emb")[rows], library.matrix("q_emb")[rows], library.matrix("r_emb")[rows]
    )
    probe = joint_features(query.image_emb, query.q_emb, pseudo_emb)[0]
    shortlist = [i for i, _ in rank_by_similarity(features, probe, ids)[:IQPR_WIDEN * n]]
    short_rows = [library.index[i] for i in shortlist]
    ranked = rank_by_similarity(library.matrix("r_emb")[short_rows], pseudo_emb, shortlist)
    return IclSequence(instruction, tuple(i for i, _ in ranked[:n]), query)


def content_free_query(query: QuerySample) -> QuerySample:
    """The query with zeroed embeddings and no question text."""
    return query.with_changes(
        id=f"{query.id}#content-free",
        image_emb=np.zeros_like(query.image_emb),
        q_emb=np.zeros_like(query.q_emb),
        text_q="",
    )


def entropy(probs: Dict[str, float]) -> float:
    return -math.fsum(p * math.log(p) for p in probs.values() if p > 0)


def candidate_permutations(n: int, limit: int, rng: Rng) -> List[Tuple[int, ...]]:
    """
    All permutations of n positions when there are at most ``limit``, otherwise
    ``limit`` distinct uniformly sampled ones; lexicographic order either way.
    """
    if n == 0:
        return [()]
    if math.factorial(n) <= limit:
        return list(itertools.permutations(range(n)))
    seen = set()
    while len(seen) < limit:
        seen.add(tuple(int(p) for p in rng.permutation(n)))
    return sorted(seen)


def baseline_demo(
    query: QuerySample,
    library: DemoLibrary,
    n: int,
    scorer: ScorerInterface,
    rng: Rng,
    n_perm: int = 24,
    top_k: int = 4,
    instruction: Optional[str] = None,
    candidates: Optional[Sequence[str]] = None
) -> IclSequence:
    """
    Order n demonstrations with content-free entropy and influence.

    Stage one keeps the ``top_k`` permutations whose label distribution on a
    content-free query has the highest entropy. Stage two returns the one with
    the largest influence P(y*|x, C) - P(y*|C), y* being the label predicted
    for the real query. Ties go to the lexicographically first permutation.

    Args:
        query: Query to order demonstrations for
        library: Demonstration library
        n: Shot count
        scorer: Scorer with label probabilities
        rng: Generator for the candidate set and permutation sampling
        n_perm: Permutation budget
        top_k: Permutations kept after stage one
        instruction: Instruction text, the library's when omitted
        candidates: Demonstration ids to order; a random n-subset when omitted

    Returns:
        IclSequence

    Raises:
        CapabilityError: If the scorer has no label probabilities
    """
    require_capability(scorer, LABEL_PROBS)
    instruction = _instruction(library, instruction)
    if candidates is None:
        candidates = baseline_rs(query, library, n, rng, instruction).icd_ids
    base = sorted(candidates)
    if len(base) != n:
        raise SearchError(f"DEmO needs exactly {n} candidates, got {len(base)}")

    perms = candidate_permutations(n, max(1, n_perm), rng)
    if len(perms) == 1:
        return IclSequence(instruction, tuple(base[p] for p in perms[0]), query)

    blank = content_free_query(query)
    scored = []
    for perm in perms:
        icds = [library[base[p]] for p in perm]
        scored.append((entropy(scorer.label_probs(instruction, icds, blank)), perm))
    survivors = [perm for _, perm in sorted(scored, key=lambda item: (-item[0], item[1]))[:max(1, top_k)]]

    best_perm, best_influence = None, -np.inf
    for perm in sorted(survivors):
        icds = [library[base[p]] for p in perm]
        label = predict_label(scorer, instruction, icds, query)
        with_query = scorer.label_probs(instruction, icds, query)[label]
        without_query = scorer.label_probs(instruction, icds, blank).get(label, 0.0)
        influence = with_query - without_query
        if influence > best_influence:
            best_perm, best_influence = perm, influence
    return IclSequence(instruction, tuple(base[p] for p in best_perm), query)
