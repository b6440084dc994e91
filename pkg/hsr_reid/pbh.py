"""
Part-Based Homogeneity
Imperfect-cluster selection by mean silhouette and two-part K-means splitting
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .cluster import ClusterQuality, kmeans2, mean_silhouette_per_cluster, silhouette_samples
from .core import PseudoLabels
from .errors import EmptyInputError, SingleClusterError
from .metrics import clusters_split_total
from .observability import timed_stage

logger = logging.getLogger(__name__)

LAMBDA_STD_FACTOR = 3.0
DEFAULT_MIN_SPLIT_SIZE = 4


class LambdaMode(str, Enum):
    """Where the imperfectness threshold comes from"""
    AUTO = "auto"
    FIXED = "fixed"


# ==================== Domain Types ====================

class PbhConfig(BaseModel):
    """Threshold policy and split gate for PBH"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_mode: LambdaMode = LambdaMode.AUTO
    fixed_lambda: float = 0.0
    min_cluster_size_for_split: int = Field(default=DEFAULT_MIN_SPLIT_SIZE, ge=2)


@dataclass(frozen=True)
class PartLabelPair:
    """Temporary (upper, lower) 2-means labels of one member"""
    y_u: int
    y_l: int

    @property
    def group(self) -> int:
        return 2 * self.y_u + self.y_l


@dataclass(eq=False)
class SplitResult:
    """Lookup-table labels (0..3) over the members of one cluster"""
    members: np.ndarray
    labels: np.ndarray
    upper_degenerate: bool
    lower_degenerate: bool

    @property
    def num_groups(self) -> int:
        return int(np.unique(self.labels).size)

    @property
    def part_labels(self) -> List[PartLabelPair]:
        return [PartLabelPair(int(v) // 2, int(v) % 2) for v in self.labels]


@dataclass
class SplitReport:
    """Per-cluster outcome of one PBH pass"""
    cluster_id: int
    size: int
    msil: float
    selected: bool
    groups: int = 1
    new_ids: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "size": self.size,
            "msil": self.msil,
            "selected": self.selected,
            "groups": self.groups,
            "new_ids": list(self.new_ids),
        }


# ==================== Threshold and selection ====================

def compute_lambda(msil_values: Sequence[float]) -> float:
    """lambda = mean(mSil) - 3 * std(mSil), population std

    Raises:
        EmptyInputError: no cluster scores given
    """
    values = np.asarray(list(msil_values), dtype=np.float64)
    if values.size == 0:
        raise EmptyInputError("compute_lambda needs at least one cluster score")
    return float(values.mean() - LAMBDA_STD_FACTOR * values.std())


def assess_clusters(
    embeddings: Optional[np.ndarray],
    labels: PseudoLabels,
    config: Optional[PbhConfig] = None,
    distances: Optional[np.ndarray] = None,
) -> ClusterQuality:
    """Silhouette, per-cluster mSil and the lambda threshold of a clustering

    Raises:
        SingleClusterError: fewer than two non-noise clusters
    """
    config = config or PbhConfig()
    per_sample = silhouette_samples(embeddings, labels, distances=distances)
    msil = mean_silhouette_per_cluster(per_sample, labels)
    if config.lambda_mode == LambdaMode.FIXED:
        lambda_ = float(config.fixed_lambda)
    else:
        lambda_ = compute_lambda(msil.values())
    sizes = {c: int(s) for c, s in enumerate(labels.sizes().tolist())}
    return ClusterQuality(
        per_sample_silhouette=per_sample,
        msil=msil,
        lambda_=lambda_,
        sizes=sizes,
    )


def select_imperfect(
    quality: ClusterQuality,
    min_cluster_size_for_split: int = DEFAULT_MIN_SPLIT_SIZE,
) -> List[int]:
    """Clusters with mSil strictly below lambda and enough members, ascending id"""
    selected = []
    for cluster_id in sorted(quality.msil):
        if quality.msil[cluster_id] >= quality.lambda_:
            continue
        if quality.sizes[cluster_id] < min_cluster_size_for_split:
            continue
        selected.append(cluster_id)
    return selected


# ==================== Splitting ====================

def split_cluster(
    members: Sequence[int],
    upper_feats: np.ndarray,
    lower_feats: np.ndarray,
    seed: int,
) -> SplitResult:
    """Split one cluster with independent 2-means on its upper and lower parts

    upper_feats and lower_feats are indexed by sample, so members selects the
    rows. Member label = 2 * y_u + y_l. A degenerate part contributes a
    constant 0 bit; when both parts are degenerate every label is 0.
    """
    idx = np.asarray(members, dtype=np.int64)
    if idx.size < 2:
        raise ValueError(f"split_cluster needs at least 2 members, got {idx.size}")

    upper = kmeans2(np.asarray(upper_feats)[idx], seed)
    lower = kmeans2(np.asarray(lower_feats)[idx], seed)
    labels = 2 * upper.labels + lower.labels
    return SplitResult(
        members=idx,
        labels=labels.astype(np.int64),
        upper_degenerate=upper.degenerate,
        lower_degenerate=lower.degenerate,
    )


def cluster_seed(seed: int, cluster_id: int) -> int:
    """Order-independent per-cluster seed"""
    return int(np.random.SeedSequence([int(seed), int(cluster_id)]).generate_state(1)[0])


@timed_stage("pbh")
def refine_clusters(
    labels: PseudoLabels,
    quality: Optional[ClusterQuality],
    part_embeddings: Tuple[np.ndarray, np.ndarray],
    config: Optional[PbhConfig] = None,
    seed: int = 0,
) -> Tuple[PseudoLabels, List[SplitReport]]:
    """Replace every imperfect cluster by its lookup-table groups

    The group holding the lowest-index member keeps the cluster id, the other
    groups get fresh ids; the result is compacted. Noise is never touched.
    quality None (fewer than two clusters) returns the input unchanged.
    """
    config = config or PbhConfig()
    if quality is None:
        return labels, []

    upper, lower = part_embeddings
    selected = set(select_imperfect(quality, config.min_cluster_size_for_split))
    raw = labels.labels.copy()
    next_id = labels.num_clusters
    reports: List[SplitReport] = []

    for cluster_id in labels.cluster_ids:
        members = labels.members(cluster_id)
        report = SplitReport(
            cluster_id=cluster_id,
            size=int(members.size),
            msil=float(quality.msil.get(cluster_id, float("nan"))),
            selected=cluster_id in selected,
        )
        reports.append(report)
        if not report.selected:
            continue

        split = split_cluster(members, upper, lower, cluster_seed(seed, cluster_id))
        report.groups = split.num_groups
        if split.num_groups < 2:
            logger.debug(
                f"Cluster {cluster_id} left unsplit",
                extra={"cluster_id": cluster_id, "size": report.size},
            )
            continue

        # Groups ordered by their first member; the first keeps the id
        order: Dict[int, int] = {}
        for value in split.labels.tolist():
            order.setdefault(value, len(order))
        for value, rank in order.items():
            if rank == 0:
                continue
            raw[members[split.labels == value]] = next_id
            report.new_ids.append(next_id)
            next_id += 1

    refined = PseudoLabels.compact(raw)
    num_split = sum(1 for r in reports if r.groups > 1)
    if num_split:
        clusters_split_total.inc(num_split)
    logger.info(
        "PBH refinement finished",
        extra={
            "lambda": quality.lambda_,
            "selected": len(selected),
            "split": num_split,
            "clusters_before": labels.num_clusters,
            "clusters_after": refined.num_clusters,
        },
    )
    return refined, reports


def apply_pbh(
    labels: PseudoLabels,
    quality: Optional[ClusterQuality],
    part_embeddings: Tuple[np.ndarray, np.ndarray],
    config: Optional[PbhConfig] = None,
    seed: int = 0,
) -> PseudoLabels:
    """Refined pseudo labels only, see refine_clusters"""
    refined, _ = refine_clusters(labels, quality, part_embeddings, config, seed)
    return refined


def assess_or_none(
    embeddings: np.ndarray,
    labels: PseudoLabels,
    config: Optional[PbhConfig] = None,
    distances: Optional[np.ndarray] = None,
) -> Optional[ClusterQuality]:
    """assess_clusters, with None when the clustering has a single cluster"""
    try:
        return assess_clusters(embeddings, labels, config, distances)
    except SingleClusterError:
        logger.info(
            "PBH skipped: fewer than two clusters",
            extra={"num_clusters": labels.num_clusters},
        )
        return None


__all__ = [
    "LambdaMode",
    "PbhConfig",
    "PartLabelPair",
    "SplitResult",
    "SplitReport",
    "compute_lambda",
    "assess_clusters",
    "assess_or_none",
    "select_imperfect",
    "split_cluster",
    "cluster_seed",
    "refine_clusters",
    "apply_pbh",
]
