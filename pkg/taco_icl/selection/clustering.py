"""
Query-set selection module for the TACO demonstration configurator.
Clusters the library on image features and turns the samples nearest each
centroid into training queries.
"""
import warnings
from dataclasses import dataclass
from typing import Dict, List

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from taco_icl.core import derive_seed
from taco_icl.data.schema import DemoLibrary, QuerySample
from taco_icl.exceptions import ClusteringError
from taco_icl.utils.logger import get_logger

# Create logger
logger = get_logger("selection.clustering")

MAX_RESEEDS = 10


@dataclass(frozen=True)
class QuerySet:
    """Queries split out of a library, the reduced library and the clustering behind them."""
    queries: List[QuerySample]
    library: DemoLibrary
    assignments: Dict[str, int]
    centroids: np.ndarray


def _nearest_members(
    features: np.ndarray,
    ids: List[str],
    labels: np.ndarray,
    centroid: np.ndarray,
    cluster: int,
    m: int
) -> List[str]:
    members = np.flatnonzero(labels == cluster)
    distances = np.sum((features[members] - centroid) ** 2, axis=1)
    ranked = sorted(zip(distances.tolist(), (ids[i] for i in members)))
    return [demo_id for _, demo_id in ranked[:m]]


def select_query_set(library: DemoLibrary, k: int, m: int, seed: int = 0) -> QuerySet:
    """
    Pick m samples nearest each of k k-means centroids as queries.

    Clustering runs on image embeddings. The chosen samples become queries
    whose ground truth is their response; everything else stays in the library.

    Args:
        library: Full demonstration library
        k: Number of clusters
        m: Queries per cluster
        seed: Seed for the clustering

    Returns:
        QuerySet with k*m queries and the reduced library

    Raises:
        ClusteringError: If the reduced library would be empty, or a cluster
            keeps coming out with fewer than m members
    """
    library.require_non_empty()
    if k < 1 or m < 1:
        raise ClusteringError(f"k and m must be positive, got k={k}, m={m}")
    if k * m >= len(library):
        raise ClusteringError(
            f"k*m = {k * m} queries would leave no demonstrations in a library of {len(library)}"
        )

    ids = list(library.ids)
    features = library.matrix("image_emb")
    for attempt in range(MAX_RESEEDS):
        random_state = derive_seed(seed, f"kmeans:{attempt}") % (2 ** 32)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            kmeans = KMeans(n_clusters=k, random_state=random_state, n_init=10)
            labels = kmeans.fit_predict(features)
        sizes = np.bincount(labels, minlength=k)
        if sizes.min() >= m:
            break
        logger.warning(
            f"Cluster sizes {sizes.tolist()} leave a cluster short of {m} members, re-seeding "
            f"(attempt {attempt + 1}/{MAX_RESEEDS})"
        )
    else:
        raise ClusteringError(f"could not find {k} clusters with at least {m} members each")

    centroids = np.asarray(kmeans.cluster_centers_, dtype=np.float64)
    chosen: List[str] = []
    for cluster in range(k):
        chosen.extend(_nearest_members(features, ids, labels, centroids[cluster], cluster, m))

    queries = [QuerySample.from_demonstration(library[demo_id]) for demo_id in chosen]
    reduced = library.without(chosen)
    assignments = {demo_id: int(label) for demo_id, label in zip(ids, labels)}
    logger.info(f"Selected {len(queries)} queries from {k} clusters; {len(reduced)} demonstrations remain")
    return QuerySet(queries, reduced, assignments, centroids)
