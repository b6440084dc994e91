"""
Clustering substrate: DBSCAN pseudo-labelling, two-way K-means and silhouette scoring
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .core import NOISE, PseudoLabels, pairwise_distances
from .errors import SingleClusterError, TooFewSamplesError
from .observability import timed_stage

logger = logging.getLogger(__name__)

DEFAULT_MIN_PTS = 4
DEFAULT_EPS_PERCENTILE = 1.5
KMEANS_MAX_ITER = 100
# k-means++ restarts per split
KMEANS_N_INIT = 20
DEGENERATE_VARIANCE = 1e-12


# ==================== Domain Types ====================

class EpsRule(str, Enum):
    """How eps_heuristic reads a radius off the distance matrix"""
    PAIRWISE = "pairwise"
    KNN = "knn"


class DbscanParams(BaseModel):
    """DBSCAN radius and density threshold"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    eps: float = Field(..., gt=0)
    min_pts: int = Field(default=DEFAULT_MIN_PTS, ge=1)

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v):
        if not math.isfinite(v):
            raise ValueError("eps must be finite")
        return v


@dataclass(eq=False)
class ClusterQuality:
    """Silhouette-based quality of a clustering

    per_sample_silhouette is NaN for noise samples. sizes must cover every
    scored cluster.
    """
    per_sample_silhouette: np.ndarray
    msil: Dict[int, float]
    lambda_: float
    sizes: Dict[int, int]

    def __post_init__(self):
        missing = sorted(set(self.msil) - set(self.sizes))
        if missing:
            raise ValueError(f"ClusterQuality has no size for clusters {missing}")

    @property
    def mean_msil(self) -> float:
        if not self.msil:
            return float("nan")
        return float(np.mean(list(self.msil.values())))


@dataclass(eq=False)
class KMeansResult:
    """Outcome of a 2-means split

    degenerate is the flagged (non-raising) DegenerateSplit outcome.
    """
    labels: np.ndarray
    degenerate: bool
    inertia: float
    n_iter: int
    inertia_history: List[float] = field(default_factory=list)


# ==================== DBSCAN ====================

@timed_stage("cluster")
def dbscan(
    features: np.ndarray,
    params: DbscanParams,
    distances: Optional[np.ndarray] = None,
) -> PseudoLabels:
    """Density clustering with deterministic border assignment

    Core points have >= min_pts neighbours within eps, counting themselves.
    Clusters are expanded from core points scanned in ascending index order;
    a border point joins the first cluster that reaches it.

    Args:
        features: N x D matrix
        params: eps and min_pts
        distances: optional precomputed N x N distance matrix for features

    Returns:
        Compact pseudo labels, noise = -1
    """
    dist = pairwise_distances(features) if distances is None else np.asarray(distances)
    n = dist.shape[0]

    adjacency = dist <= params.eps
    neighbour_counts = adjacency.sum(axis=1)
    is_core = neighbour_counts >= params.min_pts

    labels = np.full(n, NOISE, dtype=np.int64)
    expanded = np.zeros(n, dtype=bool)
    cluster_id = 0

    for i in range(n):
        if expanded[i] or not is_core[i] or labels[i] != NOISE:
            continue

        labels[i] = cluster_id
        expanded[i] = True
        queue = deque([i])

        while queue:
            current = queue.popleft()
            for neighbour in np.flatnonzero(adjacency[current]):
                if labels[neighbour] == NOISE:
                    labels[neighbour] = cluster_id
                    if is_core[neighbour] and not expanded[neighbour]:
                        expanded[neighbour] = True
                        queue.append(neighbour)

        cluster_id += 1

    result = PseudoLabels(labels)
    logger.debug(
        "DBSCAN finished",
        extra={
            "eps": params.eps,
            "min_pts": params.min_pts,
            "num_clusters": result.num_clusters,
            "num_noise": result.num_noise,
            "num_core": int(is_core.sum()),
        },
    )
    return result


def eps_heuristic(
    features: np.ndarray,
    k: int = DEFAULT_MIN_PTS,
    percentile: float = DEFAULT_EPS_PERCENTILE,
    distances: Optional[np.ndarray] = None,
    rule: EpsRule = EpsRule.PAIRWISE,
) -> float:
    """Data-driven DBSCAN radius

    PAIRWISE: mean of the smallest `percentile` percent of the N(N-1)/2
    pairwise distances (at least one pair). The radius then tracks the
    typical same-identity distance regardless of how many samples share it.

    KNN: the k-th nearest-neighbour distance of each sample, counting the
    sample itself as its first neighbour (the min_pts convention), read at
    the requested percentile. Only that share of samples is core at the
    returned radius.

    Raises:
        TooFewSamplesError: if N <= k
    """
    dist = pairwise_distances(features) if distances is None else np.asarray(distances)
    n = dist.shape[0]
    if n <= k:
        raise TooFewSamplesError(f"eps heuristic needs N > k (N={n}, k={k})")
    rule = EpsRule(rule)
    if rule is EpsRule.KNN:
        kth = np.sort(dist, axis=1)[:, k - 1]
        eps = float(np.percentile(kth, percentile))
    else:
        upper = dist[np.triu_indices(n, k=1)]
        top = max(1, int(round(percentile / 100.0 * upper.size)))
        eps = float(np.partition(upper, top - 1)[:top].mean())
    if eps <= 0:
        logger.warning(
            "eps heuristic returned 0; all neighbourhoods are degenerate, override eps",
            extra={"k": k, "percentile": percentile, "rule": rule.value},
        )
    return eps


# ==================== K-means (K = 2) ====================

def _kmeans_pp_init(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.integers(0, x.shape[0]))
    centroids = np.empty((2, x.shape[1]), dtype=np.float64)
    centroids[0] = x[first]
    dist_sq = np.einsum("ij,ij->i", x - centroids[0], x - centroids[0])
    probs = dist_sq / dist_sq.sum()
    second = int(rng.choice(x.shape[0], p=probs))
    centroids[1] = x[second]
    return centroids


def _inertia(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> KMeansResult:
    labels = None
    history: List[float] = []
    n_iter = 0
    for n_iter in range(1, KMEANS_MAX_ITER + 1):
        d0 = np.einsum("ij,ij->i", x - centroids[0], x - centroids[0])
        d1 = np.einsum("ij,ij->i", x - centroids[1], x - centroids[1])
        new_labels = (d1 < d0).astype(np.int64)

        # Keep both clusters populated: move the worst-fitting point over
        for empty in (0, 1):
            if not np.any(new_labels == empty):
                own = np.where(new_labels == 0, d0, d1)
                new_labels[int(np.argmax(own))] = empty

        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centroids = np.stack([x[labels == 0].mean(axis=0), x[labels == 1].mean(axis=0)])
        history.append(_inertia(x, centroids, labels))

    return KMeansResult(
        labels=labels,
        degenerate=False,
        inertia=history[-1],
        n_iter=n_iter,
        inertia_history=history,
    )


def kmeans2(features: np.ndarray, seed: int, n_init: int = KMEANS_N_INIT) -> KMeansResult:
    """Split a set of vectors into two groups with k-means++ seeded Lloyd iterations

    Restarts draw their seeds from the given seed; the lowest-inertia run wins
    (first run on ties). Labels are renumbered so sample 0 carries label 0.
    A set whose variance is <= 1e-12 is returned flagged as degenerate with
    every label 0.
    """
    x = np.asarray(features, dtype=np.float64)
    m = x.shape[0]
    if m < 2:
        raise TooFewSamplesError(f"kmeans2 needs at least 2 samples, got {m}")

    centre = x.mean(axis=0)
    variance = float(np.einsum("ij,ij->", x - centre, x - centre)) / m
    if variance <= DEGENERATE_VARIANCE:
        return KMeansResult(
            labels=np.zeros(m, dtype=np.int64),
            degenerate=True,
            inertia=variance * m,
            n_iter=0,
        )

    rng = np.random.default_rng(seed)
    best: Optional[KMeansResult] = None
    for _ in range(max(1, n_init)):
        result = _lloyd(x, _kmeans_pp_init(x, rng))
        if best is None or result.inertia < best.inertia:
            best = result

    if best.labels[0] == 1:
        best.labels = 1 - best.labels
    return best


# ==================== Silhouette ====================

def silhouette_samples(
    features: Optional[np.ndarray],
    labels: PseudoLabels,
    distances: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-sample silhouette s(i) = (b - a) / max(a, b)

    Noise samples are excluded from every mean and come back as NaN.
    Members of singleton clusters score 0.

    Raises:
        SingleClusterError: if fewer than two non-noise clusters exist
    """
    if labels.num_clusters < 2:
        raise SingleClusterError(
            f"silhouette needs >= 2 clusters, got {labels.num_clusters}"
        )
    dist = pairwise_distances(features) if distances is None else np.asarray(distances)
    dist = dist.astype(np.float64, copy=False)

    n = len(labels)
    out = np.full(n, np.nan, dtype=np.float64)
    clustered = np.flatnonzero(labels.clustered_mask())
    y = labels.labels[clustered]
    sizes = labels.sizes().astype(np.float64)

    one_hot = np.zeros((clustered.size, labels.num_clusters), dtype=np.float64)
    one_hot[np.arange(clustered.size), y] = 1.0
    sums = dist[np.ix_(clustered, clustered)] @ one_hot

    own_size = sizes[y]
    rows = np.arange(clustered.size)
    a = np.zeros(clustered.size, dtype=np.float64)
    multi = own_size > 1
    a[multi] = sums[rows[multi], y[multi]] / (own_size[multi] - 1)

    means = sums / sizes[None, :]
    means[rows, y] = np.inf
    b = means.min(axis=1)

    denom = np.maximum(a, b)
    s = np.zeros(clustered.size, dtype=np.float64)
    ok = multi & (denom > 0)
    s[ok] = (b[ok] - a[ok]) / denom[ok]
    out[clustered] = s
    return out


def mean_silhouette_per_cluster(per_sample: np.ndarray, labels: PseudoLabels) -> Dict[int, float]:
    """Arithmetic mean of the silhouette over each non-noise cluster"""
    values = np.asarray(per_sample, dtype=np.float64)
    msil: Dict[int, float] = {}
    for cluster_id in labels.cluster_ids:
        msil[cluster_id] = float(values[labels.members(cluster_id)].mean())
    return msil


__all__ = [
    "EpsRule",
    "DbscanParams",
    "ClusterQuality",
    "KMeansResult",
    "dbscan",
    "eps_heuristic",
    "kmeans2",
    "silhouette_samples",
    "mean_silhouette_per_cluster",
]
