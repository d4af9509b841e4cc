"""
Synthetic scorer module for the TACO demonstration configurator.

Stands in for a vision-language model on a synthetic world. The query's task
is read off its question embedding and, when an instruction is present, pulled
toward the nearest task centroid. Each demonstration votes for the answer its
own question/response pair implies, weighted by how close its task is to the
query's or by how much its image resembles the query's image, whichever is
stronger, and a task prior votes for the nearest cluster's answer.
"""
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from taco_icl.data.schema import Demonstration, QuerySample
from taco_icl.evaluation.world import SyntheticWorld
from taco_icl.exceptions import CapabilityError, ConfigError
from taco_icl.selection.scorer import LABEL_PROBS, LOGLIK, predict_label
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.synthetic_scorer")

SCORER_MODES = ("order_invariant", "position_weighted")


@dataclass(frozen=True)
class ScorerSettings:
    mode: str = "order_invariant"
    alignment: float = 0.5
    cohesion: float = 0.05
    penalty: float = 2.0
    prior_weight: float = 1.0
    prior_sharpness: float = 3.0
    temperature: float = 0.25
    visual: float = 0.5
    instruction_hint: float = 0.5
    accuracy_threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in SCORER_MODES:
            raise ConfigError(f"scorer mode must be one of {SCORER_MODES}, got {self.mode}")
        if self.temperature <= 0:
            raise ConfigError("scorer temperature must be positive")
        weights = (self.alignment, self.cohesion, self.penalty, self.prior_weight, self.prior_sharpness, self.visual)
        if min(weights) < 0:
            raise ConfigError("scorer weights must be non-negative")
        if not 0.0 <= self.instruction_hint <= 1.0:
            raise ConfigError("instruction_hint must lie in [0, 1]")
        if not 0.0 <= self.accuracy_threshold <= 1.0:
            raise ConfigError("accuracy_threshold must lie in [0, 1]")

    @classmethod
    def from_run_config(cls, config: Dict[str, Any]) -> "ScorerSettings":
        return cls(**config["synthetic_scorer"])


def position_weights(n: int, mode: str) -> List[float]:
    """Per-position vote weights; later positions (nearer the query) weigh more when position-weighted."""
    if mode == "position_weighted":
        return [(i + 1) / n for i in range(n)]
    return [1.0] * n


class SyntheticScorer:
    """
    Class to score ICL sequences on a synthetic world.

    ``loglik`` is -a * sum(w_i |tau_i - tau_hat|^2) - gamma * sum |tau_i - mean tau|^2
    minus ``penalty`` per demonstration whose label differs from its clean
    label and once more when the response is not the predicted label.

    A demonstration's vote is ``w_i * max(exp(-a |tau_i - tau_hat|^2), visual * cos+)``
    where ``cos+`` is the clipped cosine between its image and the query image,
    so a look-alike image from another task pulls the answer toward its own mapping.
    """

    capabilities = frozenset({LOGLIK, LABEL_PROBS})

    def __init__(self, world: SyntheticWorld, settings: Optional[ScorerSettings] = None):
        self.world = world
        self.settings = settings or ScorerSettings()
        self.accuracy_threshold = self.settings.accuracy_threshold
        fingerprint = json.dumps(
            {"world": world.to_dict(), "settings": asdict(self.settings)}, sort_keys=True
        ).encode("utf-8")
        self.name = f"synthetic-{self.settings.mode}-{hashlib.sha256(fingerprint).hexdigest()[:12]}"

    def labels(self) -> List[str]:
        return self.world.labels + self.world.reserved

    # --- metadata access ---
    @staticmethod
    def _meta(sample, key: str):
        if key not in sample.meta:
            raise CapabilityError(f"sample {sample.id} carries no {key!r} metadata for the synthetic scorer")
        return sample.meta[key]

    def _task(self, demo: Demonstration) -> np.ndarray:
        return np.asarray(self._meta(demo, "tau"), dtype=np.float64)

    def task_estimate(self, query: QuerySample, instruction: str = "") -> np.ndarray:
        """
        Estimate the query's task vector.

        Args:
            query: Query sample
            instruction: Instruction text; a non-empty one moves the estimate
                ``instruction_hint`` of the way to the nearest task centroid

        Returns:
            Task estimate in the latent space
        """
        tau_hat = self.world.decode_task(query.q_emb)
        hint = self.settings.instruction_hint
        if instruction.strip() and hint > 0:
            centroid = self.world.centroids[self.world.nearest_cluster(tau_hat)]
            tau_hat = tau_hat + hint * (centroid - tau_hat)
        return tau_hat

    @staticmethod
    def image_similarity(demo: Demonstration, query: QuerySample) -> float:
        """Cosine between the two images clipped at zero; zero for an all-zero image."""
        norms = float(np.linalg.norm(demo.image_emb)) * float(np.linalg.norm(query.image_emb))
        if norms == 0.0:
            return 0.0
        return max(0.0, float(np.dot(demo.image_emb, query.image_emb)) / norms)

    def implied_label(self, demo: Demonstration, content: int) -> Optional[str]:
        """Answer for ``content`` under the mapping the demonstration's own pair shows."""
        n_labels = self.world.spec.n_labels
        for vocabulary in (self.world.labels, self.world.reserved):
            if demo.text_r in vocabulary:
                shift = vocabulary.index(demo.text_r) - int(self._meta(demo, "content"))
                return vocabulary[(int(content) + shift) % n_labels]
        return None

    # --- scoring ---
    def votes(self, icds: Sequence[Demonstration], query: QuerySample, instruction: str = "") -> Dict[str, float]:
        s = self.settings
        content = int(self._meta(query, "content"))
        tau_hat = self.task_estimate(query, instruction)
        parts: Dict[str, List[float]] = {label: [] for label in self.labels()}
        for weight, demo in zip(position_weights(len(icds), s.mode), icds):
            label = self.implied_label(demo, content)
            if label is None:
                continue
            gap = float(np.sum((self._task(demo) - tau_hat) ** 2))
            pull = max(math.exp(-s.alignment * gap), s.visual * self.image_similarity(demo, query))
            parts[label].append(weight * pull)
        cluster = self.world.nearest_cluster(tau_hat)
        prior_gap = float(np.sum((tau_hat - self.world.centroids[cluster]) ** 2))
        parts[self.world.label_for(content, cluster)].append(s.prior_weight * math.exp(-s.prior_sharpness * prior_gap))
        return {label: math.fsum(values) for label, values in parts.items()}

    def label_probs(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample) -> Dict[str, float]:
        votes = self.votes(icds, query, instruction)
        scaled = np.array(list(votes.values())) / self.settings.temperature
        weights = np.exp(scaled - scaled.max())
        probs = weights / weights.sum()
        return dict(zip(votes, probs.tolist()))

    def label_mismatches(self, icds: Sequence[Demonstration]) -> int:
        return sum(1 for demo in icds if demo.text_r != self._meta(demo, "true_label"))

    def loglik(self, instruction: str, icds: Sequence[Demonstration], query: QuerySample, response: str) -> float:
        s = self.settings
        tau_hat = self.task_estimate(query, instruction)
        taus = [self._task(demo) for demo in icds]
        weights = position_weights(len(icds), s.mode)
        alignment = math.fsum(w * float(np.sum((tau - tau_hat) ** 2)) for w, tau in zip(weights, taus))
        cohesion = 0.0
        if taus:
            stacked = np.stack(taus)
            mean = np.array([math.fsum(column) for column in stacked.T]) / len(taus)
            cohesion = math.fsum(float(np.sum((tau - mean) ** 2)) for tau in taus)
        wrong_answer = response != predict_label(self, instruction, icds, query)
        penalty = s.penalty * (self.label_mismatches(icds) + int(wrong_answer))
        return -s.alignment * alignment - s.cohesion * cohesion - penalty
