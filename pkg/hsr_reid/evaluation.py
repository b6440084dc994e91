"""
Re-ID evaluation
Rank-1 / mAP under the cross-camera protocol and mining diagnostics
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import NOISE, PseudoLabels, cross_distances
from .errors import EmptyInputError, NoRelevantError
from .icm import RankLists
from .observability import timed_stage

logger = logging.getLogger(__name__)


# ==================== Domain Types ====================

@dataclass(frozen=True, eq=False)
class EvalSplit:
    """Disjoint query / gallery index sets plus per-sample gt ids and cameras"""
    query: np.ndarray
    gallery: np.ndarray
    gt_ids: np.ndarray
    cameras: np.ndarray

    def __post_init__(self):
        query = np.array(self.query, dtype=np.int64)
        gallery = np.array(self.gallery, dtype=np.int64)
        gt_ids = np.array(self.gt_ids, dtype=np.int64)
        cameras = np.array(self.cameras, dtype=np.int64)
        if query.size == 0 or gallery.size == 0:
            raise EmptyInputError("EvalSplit needs at least one query and one gallery sample")
        if gt_ids.shape != cameras.shape:
            raise ValueError("gt_ids and cameras must be aligned")
        n = gt_ids.shape[0]
        for name, idx in (("query", query), ("gallery", gallery)):
            if np.any(idx < 0) or np.any(idx >= n):
                raise ValueError(f"{name} index out of range 0..{n - 1}")
        if np.intersect1d(query, gallery).size:
            raise ValueError("query and gallery indices must be disjoint")
        for name, value in (("query", query), ("gallery", gallery),
                            ("gt_ids", gt_ids), ("cameras", cameras)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def num_queries(self) -> int:
        return int(self.query.size)

    def roles(self) -> np.ndarray:
        """Per-sample role string: query, gallery or empty"""
        out = np.full(self.gt_ids.shape[0], "", dtype=object)
        out[self.query] = "query"
        out[self.gallery] = "gallery"
        return out


@dataclass
class EvalResult:
    r1: float
    map: float
    num_queries: int
    num_excluded: int

    def to_dict(self) -> dict:
        return {
            "r1": self.r1,
            "map": self.map,
            "num_queries": self.num_queries,
            "num_excluded": self.num_excluded,
        }


# ==================== Ranking metrics ====================

def average_precision(relevance: Sequence[int], num_relevant: int) -> float:
    """AP = (1/R) * sum_k rel(k) * precision@k over the ranked list

    Raises:
        NoRelevantError: num_relevant < 1
    """
    if num_relevant < 1:
        raise NoRelevantError("average precision needs at least one relevant item")
    rel = np.asarray(relevance, dtype=np.float64)
    if rel.size == 0:
        return 0.0
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1, dtype=np.float64)
    return float(np.sum(rel * hits / ranks) / num_relevant)


@timed_stage("evaluate")
def evaluate(embeddings: np.ndarray, split: EvalSplit) -> EvalResult:
    """Rank-1 and mAP, excluding same-id same-camera gallery entries per query

    Gallery ties are broken by ascending gallery index. Queries with no
    remaining relevant gallery entry are excluded and counted.
    """
    gallery = np.sort(split.gallery)
    dist = cross_distances(np.asarray(embeddings)[split.query], np.asarray(embeddings)[gallery])
    g_ids = split.gt_ids[gallery]
    g_cams = split.cameras[gallery]

    hits = []
    aps = []
    excluded = 0
    for row, q in enumerate(split.query.tolist()):
        q_id = split.gt_ids[q]
        keep = ~((g_ids == q_id) & (g_cams == split.cameras[q]))
        order = np.argsort(dist[row, keep], kind="stable")
        relevance = (g_ids[keep] == q_id)[order]
        try:
            ap = average_precision(relevance, int(relevance.sum()))
        except NoRelevantError:
            excluded += 1
            continue
        aps.append(ap)
        hits.append(float(relevance[0]))

    if excluded:
        logger.warning(
            f"{excluded} queries excluded from evaluation (no cross-camera match)",
            extra={"num_excluded": excluded, "num_queries": split.num_queries},
        )
    if not aps:
        return EvalResult(r1=0.0, map=0.0, num_queries=split.num_queries, num_excluded=excluded)
    return EvalResult(
        r1=float(np.mean(hits)),
        map=float(np.mean(aps)),
        num_queries=split.num_queries,
        num_excluded=excluded,
    )


# ==================== Mining diagnostics ====================

def rank_precision(rank: RankLists, gt_ids: Sequence[int]) -> float:
    """Mean over non-empty rank lists of the fraction of entries sharing the anchor's gt id

    NaN when every list is empty.
    """
    gt = np.asarray(gt_ids, dtype=np.int64)
    fractions = [
        float(np.mean(gt[entries] == gt[i]))
        for i, entries in enumerate(rank.entries)
        if entries.size
    ]
    return float(np.mean(fractions)) if fractions else float("nan")


def hard_positive_rate(rank: RankLists, gt_ids: Sequence[int], labels: PseudoLabels) -> float:
    """Mean over non-empty rank lists of the fraction of entries that are true
    matches of the anchor yet carry a different pseudo label

    Noise never shares a pseudo label with anything. NaN when every list is empty.
    """
    gt = np.asarray(gt_ids, dtype=np.int64)
    y = labels.labels
    fractions = []
    for i, entries in enumerate(rank.entries):
        if not entries.size:
            continue
        same_cluster = (y[entries] == y[i]) & (y[i] != NOISE)
        fractions.append(float(np.mean((gt[entries] == gt[i]) & ~same_cluster)))
    return float(np.mean(fractions)) if fractions else float("nan")


def cluster_purity(labels: PseudoLabels, gt_ids: Sequence[int]) -> float:
    """Size-weighted majority-gt share over non-noise clusters, NaN without clusters"""
    gt = np.asarray(gt_ids, dtype=np.int64)
    if labels.num_clusters == 0:
        return float("nan")
    majority = 0
    for cluster_id in labels.cluster_ids:
        members = labels.members(cluster_id)
        majority += int(np.bincount(gt[members]).max())
    return majority / int(labels.sizes().sum())


__all__ = [
    "EvalSplit",
    "EvalResult",
    "average_precision",
    "evaluate",
    "rank_precision",
    "hard_positive_rate",
    "cluster_purity",
]
