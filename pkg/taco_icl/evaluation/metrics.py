"""
Evaluation metrics for the TACO demonstration configurator: accuracy, the
disruption gap and order sensitivity.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from taco_icl.core import Rng
from taco_icl.data.schema import Demonstration, DemoLibrary, IclSequence, QuerySample, permute_sequence
from taco_icl.exceptions import ConfigError, DatasetValidationError, SearchError
from taco_icl.selection.baselines import iq2iq_ranking
from taco_icl.selection.scorer import LABEL_PROBS, LOGLIK, ScorerInterface, require_capability
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.metrics")

DELTA_METRICS = ("loglik", "accuracy")


@dataclass(frozen=True)
class Prompt:
    """An ICL sequence with its demonstrations resolved, so they can be perturbed per prompt."""
    instruction: str
    icds: Tuple[Demonstration, ...]
    query: QuerySample

    @classmethod
    def from_sequence(cls, seq: IclSequence, library: DemoLibrary) -> "Prompt":
        return cls(seq.instruction, tuple(seq.demos(library)), seq.query)

    @property
    def shot(self) -> int:
        return len(self.icds)

    @property
    def icd_ids(self) -> Tuple[str, ...]:
        return tuple(d.id for d in self.icds)

    def permuted(self, perm: Sequence[int]) -> "Prompt":
        order = permute_sequence(IclSequence(self.instruction, self.icd_ids, self.query), perm)
        by_id = {d.id: d for d in self.icds}
        return replace(self, icds=tuple(by_id[i] for i in order.icd_ids))

    def replaced(self, position: int, demo: Demonstration) -> "Prompt":
        icds = list(self.icds)
        icds[position] = demo
        return replace(self, icds=tuple(icds))


def materialize(sequences: Sequence[IclSequence], library: DemoLibrary) -> List[Prompt]:
    return [Prompt.from_sequence(seq, library) for seq in sequences]


def _ground_truth(prompt: Prompt) -> str:
    if not prompt.query.has_ground_truth:
        raise DatasetValidationError(f"query {prompt.query.id} has no ground truth")
    return prompt.query.ground_truth_r


def is_correct(prompt: Prompt, scorer: ScorerInterface) -> bool:
    """True when the most probable label is the ground truth and clears the scorer's accuracy threshold."""
    probs = scorer.label_probs(prompt.instruction, prompt.icds, prompt.query)
    labels = list(probs)
    predicted = max(labels, key=lambda label: (probs[label], -labels.index(label)))
    threshold = float(getattr(scorer, "accuracy_threshold", 0.0))
    return predicted == _ground_truth(prompt) and probs[predicted] >= threshold


def evaluate_accuracy(prompts: Sequence[Prompt], scorer: ScorerInterface) -> float:
    """
    Share of prompts whose predicted label equals the ground truth.

    Raises:
        DatasetValidationError: If there are no prompts or a query lacks ground truth
    """
    if not prompts:
        raise DatasetValidationError("cannot evaluate accuracy on an empty set")
    require_capability(scorer, LABEL_PROBS)
    return sum(is_correct(p, scorer) for p in prompts) / len(prompts)


def mean_loglik(prompts: Sequence[Prompt], scorer: ScorerInterface) -> float:
    if not prompts:
        raise DatasetValidationError("cannot average log-likelihoods over an empty set")
    require_capability(scorer, LOGLIK)
    values = [scorer.loglik(p.instruction, p.icds, p.query, _ground_truth(p)) for p in prompts]
    return math.fsum(values) / len(values)


def performance(prompt: Prompt, scorer: ScorerInterface, metric: str = "loglik") -> float:
    if metric == "loglik":
        return float(scorer.loglik(prompt.instruction, prompt.icds, prompt.query, _ground_truth(prompt)))
    if metric == "accuracy":
        return 1.0 if is_correct(prompt, scorer) else 0.0
    raise ConfigError(f"delta metric must be one of {DELTA_METRICS}, got {metric}")


def nearest_replacement(
    demo: Demonstration,
    library: DemoLibrary,
    exclude: Sequence[str],
    pool: int = 1,
    rng: Optional[Rng] = None
) -> Demonstration:
    """
    Most similar demonstration by joint (image, question) similarity.

    Args:
        demo: Demonstration to replace
        library: Library to draw the replacement from
        exclude: Ids that may not be used (the prompt's own demonstrations)
        pool: Choose uniformly among this many nearest neighbours
        rng: Generator for the choice; the nearest is taken when omitted

    Raises:
        SearchError: If the library has no demonstration left to replace with
    """
    ranked = iq2iq_ranking(QuerySample.from_demonstration(demo), library, exclude=exclude)
    if not ranked:
        raise SearchError(f"no replacement available for demonstration {demo.id}")
    top = ranked[:max(1, pool)]
    pick = int(rng.integers(len(top))) if rng is not None and len(top) > 1 else 0
    return library[top[pick][0]]


def disruption_terms(
    prompt: Prompt,
    library: DemoLibrary,
    scorer: ScorerInterface,
    metric: str = "loglik",
    repeats: int = 5,
    neighbor_pool: int = 1,
    rng: Optional[Rng] = None
) -> List[float]:
    """
    Mean absolute performance change per position when that demonstration is
    replaced by a nearest neighbour, averaged over ``repeats`` draws.
    """
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    base = performance(prompt, scorer, metric)
    exclude = prompt.icd_ids
    terms = []
    for position, demo in enumerate(prompt.icds):
        gaps = []
        for _ in range(repeats):
            swap = nearest_replacement(demo, library, exclude, neighbor_pool, rng)
            gaps.append(abs(base - performance(prompt.replaced(position, swap), scorer, metric)))
        terms.append(math.fsum(gaps) / repeats)
    return terms


def disruption_gap(
    prompt: Prompt,
    library: DemoLibrary,
    scorer: ScorerInterface,
    metric: str = "loglik",
    repeats: int = 5,
    neighbor_pool: int = 1,
    rng: Optional[Rng] = None
) -> float:
    """
    Disruption gap of one prompt: (1/N) sum_i |L(S) - L(S with ICD i replaced)|.

    Args:
        prompt: Prompt with ground truth
        library: Library replacements come from
        scorer: Scorer
        metric: "loglik" or "accuracy"
        repeats: Evaluations averaged per position
        neighbor_pool: Nearest neighbours a replacement is drawn from
        rng: Generator for replacement draws

    Returns:
        Non-negative gap; 0 for a prompt without demonstrations
    """
    terms = disruption_terms(prompt, library, scorer, metric, repeats, neighbor_pool, rng)
    return math.fsum(terms) / len(terms) if terms else 0.0


def population_std(values: Sequence[float]) -> float:
    values = [float(v) for v in values]
    if not values or max(values) == min(values):
        return 0.0
    return float(np.std(values))


def permutation_accuracies(prompts: Sequence[Prompt], scorer: ScorerInterface, k: int, rng: Rng) -> List[float]:
    """Accuracy of the whole set under each of k draws of one uniform permutation per prompt."""
    return [
        evaluate_accuracy([p.permuted(rng.permutation(p.shot)) for p in prompts], scorer)
        for _ in range(k)
    ]


def order_sensitivity(prompts: Sequence[Prompt], scorer: ScorerInterface, k: int, rng: Rng) -> float:
    """
    Population standard deviation of accuracy over k random orderings.

    Raises:
        ConfigError: If k < 2
    """
    if k < 2:
        raise ConfigError(f"order sensitivity needs at least 2 permutations, got {k}")
    return population_std(permutation_accuracies(prompts, scorer, k, rng))


@dataclass(frozen=True)
class CohesionReport:
    delta: float
    sigma: float
    accuracy_mean: float
    per_position: Tuple[float, ...]
    k_perms: int
    repeats: int


def cohesion_report(
    prompts: Sequence[Prompt],
    library: DemoLibrary,
    scorer: ScorerInterface,
    rng: Rng,
    k: int = 10,
    repeats: int = 5,
    metric: str = "loglik",
    neighbor_pool: int = 1
) -> CohesionReport:
    """
    Disruption gap and order sensitivity of a prompt set.

    Returns:
        CohesionReport; ``per_position`` is the mean gap at each shot position
    """
    if not prompts:
        raise DatasetValidationError("cannot measure cohesion on an empty set")
    per_prompt = [disruption_terms(p, library, scorer, metric, repeats, neighbor_pool, rng) for p in prompts]
    deltas = [math.fsum(t) / len(t) if t else 0.0 for t in per_prompt]
    width = max(len(t) for t in per_prompt)
    per_position = tuple(
        math.fsum(t[i] for t in per_prompt if len(t) > i) / max(1, sum(len(t) > i for t in per_prompt))
        for i in range(width)
    )
    accuracies = permutation_accuracies(prompts, scorer, k, rng)
    return CohesionReport(
        delta=math.fsum(deltas) / len(deltas),
        sigma=population_std(accuracies),
        accuracy_mean=math.fsum(accuracies) / len(accuracies),
        per_position=per_position,
        k_perms=k,
        repeats=repeats,
    )
