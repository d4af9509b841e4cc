"""
Synthetic task-mapping world module for the TACO demonstration configurator.

Every sample carries a latent task vector tau drawn around one of several
task centroids. Image embeddings mix tau with a style vector, question
embeddings observe tau through a second mixing matrix, and each cluster maps
a sample's content class to its label with its own cyclic shift. A world with
one cluster is a specific-mapping task; several clusters give a
generalized-mapping task.
"""
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from taco_icl.core import Rng
from taco_icl.data.schema import Demonstration, DemoLibrary, QuerySample
from taco_icl.exceptions import WorldSpecError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("evaluation.world")

MAPPINGS = ("specific", "generalized")
SEMANTIC_LABELS = ("yes", "no", "left", "right", "red", "blue", "up", "down")
RESERVED_LABELS = ("foo", "bar", "baz", "qux", "quux", "corge", "grault", "garply")
SEPARATION_FACTOR = 4.0
CENTROID_ATTEMPTS = 10
WORLD_FORMAT = "taco-world"


def semantic_labels(n: int) -> List[str]:
    return [SEMANTIC_LABELS[j] if j < len(SEMANTIC_LABELS) else f"label{j}" for j in range(n)]


def reserved_labels(n: int) -> List[str]:
    return [RESERVED_LABELS[j] if j < len(RESERVED_LABELS) else f"nonce{j}" for j in range(n)]


@dataclass(frozen=True)
class WorldSpec:
    mapping: str = "generalized"
    n_clusters: int = 4
    latent_dim: int = 4
    d_img: int = 64
    d_txt: int = 64
    n_demos: int = 300
    n_eval_queries: int = 100
    n_labels: int = 4
    centroid_spread: float = 3.0
    task_noise: float = 0.3
    image_noise: float = 0.1
    text_noise: float = 0.1
    style_scale: float = 0.0
    style_alignment: float = 1.0
    query_style_shift: float = 0.0
    label_noise: float = 0.2
    instruction: str = ""

    def __post_init__(self):
        if self.mapping not in MAPPINGS:
            raise WorldSpecError(f"mapping must be one of {MAPPINGS}, got {self.mapping}")
        sizes = ("n_clusters", "latent_dim", "d_img", "d_txt", "n_demos", "n_labels")
        for name in sizes:
            if int(getattr(self, name)) < 1:
                raise WorldSpecError(f"world {name} must be positive, got {getattr(self, name)}")
        if self.n_eval_queries < 0:
            raise WorldSpecError("n_eval_queries must be non-negative")
        if min(self.d_img, self.d_txt) < self.latent_dim:
            raise WorldSpecError(
                f"embedding widths ({self.d_img}, {self.d_txt}) must be at least latent_dim {self.latent_dim}"
            )
        for name in ("centroid_spread", "task_noise", "image_noise", "text_noise", "style_scale"):
            if getattr(self, name) < 0:
                raise WorldSpecError(f"world {name} must be non-negative")
        for name in ("style_alignment", "query_style_shift", "label_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise WorldSpecError(f"world {name} must lie in [0, 1]")

    @property
    def clusters(self) -> int:
        return 1 if self.mapping == "specific" else int(self.n_clusters)

    @classmethod
    def from_run_config(cls, config: Dict[str, Any]) -> "WorldSpec":
        section = config["world"]
        names = {f.name for f in fields(cls)}
        return cls(**{name: section[name] for name in names if name in section})


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    """
    Class to hold the generative parameters of a synthetic world.

    Attributes:
        spec: Generation settings
        centroids: (clusters, latent_dim) task centroids
        image_mix: (d_img, latent_dim) matrix A
        text_mix: (d_txt, latent_dim) matrix B
        styles: (clusters, d_img) style vectors
        response_codes: (n_labels, d_txt) response embedding per label index
        inst_emb: (d_txt,) simplified-instruction embedding
    """
    spec: WorldSpec
    centroids: np.ndarray
    image_mix: np.ndarray
    text_mix: np.ndarray
    styles: np.ndarray
    response_codes: np.ndarray
    inst_emb: np.ndarray

    @property
    def labels(self) -> List[str]:
        return semantic_labels(self.spec.n_labels)

    @property
    def reserved(self) -> List[str]:
        return reserved_labels(self.spec.n_labels)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def shift(self, cluster: int) -> int:
        """Cyclic label shift of a cluster's mapping."""
        return int(cluster) % self.spec.n_labels

    def label_index(self, content: int, cluster: int) -> int:
        return (int(content) + self.shift(cluster)) % self.spec.n_labels

    def label_for(self, content: int, cluster: int) -> str:
        return self.labels[self.label_index(content, cluster)]

    def decode_task(self, q_emb: np.ndarray) -> np.ndarray:
        """Least-squares estimate of tau from a question embedding."""
        tau, *_ = np.linalg.lstsq(self.text_mix, np.asarray(q_emb, dtype=np.float64), rcond=None)
        return tau

    def nearest_cluster(self, tau: np.ndarray) -> int:
        distances = np.sum((self.centroids - tau) ** 2, axis=1)
        return int(np.argmin(distances))

    def centroid_text(self, cluster: int) -> np.ndarray:
        """Noise-free question embedding of a cluster centroid."""
        return self.text_mix @ self.centroids[int(cluster)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": WORLD_FORMAT,
            "version": 1,
            "spec": asdict(self.spec),
            "centroids": self.centroids.tolist(),
            "image_mix": self.image_mix.tolist(),
            "text_mix": self.text_mix.tolist(),
            "styles": self.styles.tolist(),
            "response_codes": self.response_codes.tolist(),
            "inst_emb": self.inst_emb.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SyntheticWorld":
        if data.get("format") != WORLD_FORMAT:
            raise WorldSpecError(f"not a world file (format {data.get('format')!r})")
        arrays = {
            name: np.asarray(data[name], dtype=np.float64)
            for name in ("centroids", "image_mix", "text_mix", "styles", "response_codes", "inst_emb")
        }
        return cls(spec=WorldSpec(**data["spec"]), **arrays)


def save_world(world: SyntheticWorld, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(world.to_dict(), indent=1), encoding="utf-8")


def load_world(path: Union[str, Path]) -> SyntheticWorld:
    return SyntheticWorld.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _draw_centroids(spec: WorldSpec, rng: Rng) -> np.ndarray:
    required = SEPARATION_FACTOR * spec.task_noise
    for _ in range(CENTROID_ATTEMPTS):
        centroids = rng.normal(0.0, spec.centroid_spread, size=(spec.clusters, spec.latent_dim))
        if spec.clusters == 1:
            return centroids
        gaps = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=-1)
        closest = gaps[~np.eye(spec.clusters, dtype=bool)].min()
        if closest >= required:
            return centroids
    raise WorldSpecError(
        f"task centroids closer than {SEPARATION_FACTOR} x task_noise = {required:.3f}; "
        f"raise centroid_spread or lower task_noise"
    )


def _full_rank(matrix: np.ndarray, rank: int, name: str) -> None:
    if np.linalg.matrix_rank(matrix) < rank:
        raise WorldSpecError(f"mixing matrix {name} is rank deficient")


def build_world(spec: WorldSpec, rng: Rng) -> SyntheticWorld:
    """Draw the generative parameters of a world."""
    centroids = _draw_centroids(spec, rng)
    image_mix = rng.normal(size=(spec.d_img, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    text_mix = rng.normal(size=(spec.d_txt, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    _full_rank(image_mix, spec.latent_dim, "A")
    _full_rank(text_mix, spec.latent_dim, "B")
    styles = rng.normal(0.0, spec.style_scale, size=(spec.clusters, spec.d_img))
    response_codes = rng.normal(size=(spec.n_labels, spec.d_txt)) / np.sqrt(spec.d_txt)
    inst_emb = rng.normal(size=spec.d_txt) / np.sqrt(spec.d_txt)
    return SyntheticWorld(spec, centroids, image_mix, text_mix, styles, response_codes, inst_emb)


def _sample(world: SyntheticWorld, rng: Rng, style_keep: float, noisy_label: bool) -> Dict[str, Any]:
    spec = world.spec
    cluster = int(rng.integers(world.n_clusters))
    tau = world.centroids[cluster] + rng.normal(0.0, spec.task_noise, size=spec.latent_dim)
    content = int(rng.integers(spec.n_labels))
    style = cluster
    if world.n_clusters > 1 and rng.random() >= style_keep:
        style = (cluster + int(rng.integers(1, world.n_clusters))) % world.n_clusters
    image_emb = world.image_mix @ tau + world.styles[style] + rng.normal(0.0, spec.image_noise, size=spec.d_img)
    q_emb = world.text_mix @ tau + rng.normal(0.0, spec.text_noise, size=spec.d_txt)
    qr_emb = world.text_mix @ tau + rng.normal(0.0, spec.text_noise, size=spec.d_txt)
    clean = world.label_index(content, cluster)
    index = clean
    if noisy_label and spec.n_labels > 1 and rng.random() < spec.label_noise:
        index = (clean + int(rng.integers(1, spec.n_labels))) % spec.n_labels
    r_emb = world.response_codes[index] + rng.normal(0.0, spec.text_noise, size=spec.d_txt)
    return {
        "image_emb": image_emb,
        "q_emb": q_emb,
        "qr_emb": qr_emb,
        "r_emb": r_emb,
        "text_q": f"What answer does item {content} get?",
        "text_r": world.labels[index],
        "meta": {
            "tau": tau.tolist(),
            "cluster": cluster,
            "content": content,
            "style": style,
            "true_label": world.labels[clean],
        },
    }


def generate_world(spec: WorldSpec, rng: Rng) -> Tuple[SyntheticWorld, DemoLibrary, List[QuerySample]]:
    """
    Generate a world, its demonstration library and held-out queries.

    Demonstrations carry their cluster's home style with probability
    ``style_alignment``; held-out queries carry another cluster's style with
    probability ``query_style_shift``. A ``label_noise`` fraction of
    demonstrations is labelled wrongly; held-out ground truths are clean.

    Args:
        spec: Generation settings
        rng: Generator

    Returns:
        (world, library, held-out queries)

    Raises:
        WorldSpecError: If the centroids cannot be separated or a mixing matrix is rank deficient
    """
    world = build_world(spec, rng)
    demos = []
    for j in range(spec.n_demos):
        sample = _sample(world, rng, spec.style_alignment, noisy_label=True)
        demos.append(Demonstration(id=f"d{j:05d}", **sample))
    library = DemoLibrary.from_demos(demos, {
        "instruction": spec.instruction,
        "inst_emb": world.inst_emb.tolist(),
        "labels": world.labels,
    })

    queries = []
    for j in range(spec.n_eval_queries):
        sample = _sample(world, rng, 1.0 - spec.query_style_shift, noisy_label=False)
        queries.append(QuerySample(
            id=f"q{j:05d}",
            image_emb=sample["image_emb"],
            text_q=sample["text_q"],
            q_emb=sample["q_emb"],
            ground_truth_r=sample["text_r"],
            meta=sample["meta"],
        ))
    logger.info(
        f"Generated a {spec.mapping}-mapping world with {world.n_clusters} clusters, "
        f"{len(library)} demonstrations and {len(queries)} held-out queries"
    )
    return world, library, queries

