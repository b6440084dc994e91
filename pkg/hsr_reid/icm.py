"""
Inter-Camera Mining
Camera-filtered top-K rank lists, mutual best-buddy pairs and ICM triplet sampling
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .core import NOISE, PseudoLabels, SimilarityMatrix
from .errors import NoNegativeError, NoPositiveError
from .metrics import icm_anchors_skipped_total
from .observability import timed_stage

logger = logging.getLogger(__name__)

DEFAULT_RANK_K = 10


class NegativeMode(str, Enum):
    """How ICM negatives are drawn from the valid pool"""
    RANDOM = "random"
    HARD = "hard"


# ==================== Domain Types ====================

@dataclass(frozen=True, eq=False)
class RankLists:
    """Per-sample neighbour lists in descending similarity, at most k long"""
    entries: Tuple[np.ndarray, ...]
    k: int
    _members: Tuple[FrozenSet[int], ...] = field(init=False, repr=False)

    def __post_init__(self):
        entries = tuple(np.asarray(e, dtype=np.int64) for e in self.entries)
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_members", tuple(frozenset(e.tolist()) for e in entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.entries[i]

    def contains(self, i: int, j: int) -> bool:
        """True when j is in Rank(i)"""
        return j in self._members[i]

    def lengths(self) -> np.ndarray:
        return np.array([e.size for e in self.entries], dtype=np.int64)

    def mean_length(self) -> float:
        return float(self.lengths().mean()) if self.entries else 0.0


@dataclass(frozen=True, eq=False)
class MutualPairs:
    """Unordered (i, j), i < j, with j in Rank(i) and i in Rank(j)"""
    pairs: FrozenSet[Tuple[int, int]]
    partners: Dict[int, Tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.pairs)

    def partners_of(self, i: int) -> Tuple[int, ...]:
        return self.partners.get(i, ())

    def sorted_pairs(self) -> List[Tuple[int, int]]:
        return sorted(self.pairs)


@dataclass(eq=False)
class IcmSample:
    """Sampled (anchor, positive, negative) triples plus skip bookkeeping"""
    triplets: np.ndarray
    skipped_no_positive: List[int] = field(default_factory=list)
    skipped_no_negative: List[int] = field(default_factory=list)

    @property
    def num_triplets(self) -> int:
        return int(self.triplets.shape[0])


# ==================== Operations ====================

@timed_stage("icm")
def build_rank_lists(
    sim: SimilarityMatrix,
    cameras: Sequence[int],
    k: int = DEFAULT_RANK_K,
    cross_camera: bool = True,
) -> RankLists:
    """Top-k most similar samples of each anchor

    With cross_camera (the ICM setting) candidates sharing the anchor's camera
    are removed; otherwise only the anchor itself is removed. Ties are broken
    by ascending sample index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cams = np.asarray(cameras, dtype=np.int64)
    values = sim.values
    n = sim.size
    if cams.shape != (n,):
        raise ValueError(f"cameras has shape {cams.shape}, expected ({n},)")

    entries: List[np.ndarray] = []
    all_idx = np.arange(n)
    for i in range(n):
        if cross_camera:
            candidates = all_idx[cams != cams[i]]
        else:
            candidates = all_idx[all_idx != i]
        order = np.argsort(-values[i, candidates], kind="stable")
        entries.append(candidates[order[:k]])
    return RankLists(entries=tuple(entries), k=k)


def mutual_pairs(rank: RankLists) -> MutualPairs:
    """K mutual best-buddy pairs of the rank lists"""
    pairs = set()
    partners: Dict[int, List[int]] = {}
    for i in range(len(rank)):
        for j in rank[i].tolist():
            if j != i and rank.contains(j, i):
                pairs.add((min(i, j), max(i, j)))
    for i, j in pairs:
        partners.setdefault(i, []).append(j)
        partners.setdefault(j, []).append(i)
    return MutualPairs(
        pairs=frozenset(pairs),
        partners={i: tuple(sorted(p)) for i, p in partners.items()},
    )


def eligible_anchors(pairs: MutualPairs, labels: PseudoLabels) -> np.ndarray:
    """Non-noise samples with at least one mutual partner, ascending"""
    anchors = [i for i in sorted(pairs.partners) if labels.labels[i] != NOISE]
    return np.asarray(anchors, dtype=np.int64)


def sample_icm_triplets(
    rank: RankLists,
    pairs: MutualPairs,
    labels: PseudoLabels,
    anchors: Sequence[int],
    per_anchor: int,
    rng_seed,
    negative_mode: NegativeMode = NegativeMode.RANDOM,
    embeddings: Optional[np.ndarray] = None,
    strict: bool = False,
) -> IcmSample:
    """Draw per_anchor (a, p, n) triples for each anchor

    Positives come uniformly from the anchor's mutual partners (with
    replacement only when there are fewer than per_anchor). Negatives come
    from samples with a different, non-noise pseudo label that are not in
    Rank(anchor): uniformly, or the closest ones in embedding space when
    negative_mode is HARD. Anchors without positives or negatives are skipped
    and reported, or raise when strict is set.

    Args:
        rng_seed: int seed or a numpy Generator

    Raises:
        NoPositiveError: strict mode, anchor without a mutual partner
        NoNegativeError: strict mode, anchor with an empty negative pool
    """
    if per_anchor < 1:
        raise ValueError(f"per_anchor must be >= 1, got {per_anchor}")
    if negative_mode == NegativeMode.HARD and embeddings is None:
        raise ValueError("Hard negative mining needs embeddings")

    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    y = labels.labels
    valid_label = y != NOISE
    triplets: List[Tuple[int, int, int]] = []
    result = IcmSample(triplets=np.empty((0, 3), dtype=np.int64))

    for anchor in (int(a) for a in anchors):
        partners = pairs.partners_of(anchor)
        if not partners:
            if strict:
                raise NoPositiveError(f"Anchor {anchor} has no mutual partner")
            result.skipped_no_positive.append(anchor)
            continue

        pool_mask = valid_label & (y != y[anchor])
        pool_mask[rank[anchor]] = False
        pool = np.flatnonzero(pool_mask)
        if pool.size == 0:
            if strict:
                raise NoNegativeError(f"Anchor {anchor} has an empty negative pool")
            result.skipped_no_negative.append(anchor)
            continue

        positives = rng.choice(
            np.asarray(partners, dtype=np.int64), size=per_anchor,
            replace=len(partners) < per_anchor,
        )
        if negative_mode == NegativeMode.HARD:
            diff = embeddings[pool].astype(np.float64) - embeddings[anchor].astype(np.float64)
            order = np.argsort(np.einsum("ij,ij->i", diff, diff), kind="stable")
            negatives = pool[order[np.arange(per_anchor) % pool.size]]
        else:
            negatives = rng.choice(pool, size=per_anchor, replace=pool.size < per_anchor)

        for p, n in zip(positives.tolist(), negatives.tolist()):
            triplets.append((anchor, p, n))

    if result.skipped_no_positive:
        icm_anchors_skipped_total.labels(reason="no_positive").inc(len(result.skipped_no_positive))
    if result.skipped_no_negative:
        icm_anchors_skipped_total.labels(reason="no_negative").inc(len(result.skipped_no_negative))

    if triplets:
        result.triplets = np.asarray(triplets, dtype=np.int64)
    return result


__all__ = [
    "DEFAULT_RANK_K",
    "NegativeMode",
    "RankLists",
    "MutualPairs",
    "IcmSample",
    "build_rank_lists",
    "mutual_pairs",
    "eligible_anchors",
    "sample_icm_triplets",
]
