"""
Unit tests for re-ID evaluation and mining diagnostics
"""

import math

import numpy as np
import pytest

from hsr_reid.core import NOISE, PseudoLabels
from hsr_reid.errors import EmptyInputError, NoRelevantError
from hsr_reid.evaluation import (
    EvalSplit,
    average_precision, cluster_purity, evaluate, hard_positive_rate, rank_precision,
)
from hsr_reid.icm import RankLists


def brute_force_eval(x, split):
    r1, aps, excluded = [], [], 0
    for q in split.query.tolist():
        candidates = [
            g for g in sorted(split.gallery.tolist())
            if not (split.gt_ids[g] == split.gt_ids[q] and split.cameras[g] == split.cameras[q])
        ]
        candidates.sort(key=lambda g: (np.linalg.norm(x[q] - x[g]), g))
        rel = [int(split.gt_ids[g] == split.gt_ids[q]) for g in candidates]
        if sum(rel) == 0:
            excluded += 1
            continue
        hits, ap = 0, 0.0
        for k, r in enumerate(rel, start=1):
            if r:
                hits += 1
                ap += hits / k
        aps.append(ap / sum(rel))
        r1.append(rel[0])
    return float(np.mean(r1)), float(np.mean(aps)), excluded


def random_split(rng, n, ids, cams):
    gt = rng.integers(0, ids, size=n)
    cameras = rng.integers(0, cams, size=n)
    perm = rng.permutation(n)
    cut = max(1, n // 4)
    return EvalSplit(query=perm[:cut], gallery=perm[cut:], gt_ids=gt, cameras=cameras)


@pytest.fixture
def line_split():
    x = np.array([[0.0], [0.1], [10.0], [10.1], [0.05], [20.0], [20.1]])
    split = EvalSplit(
        query=[0, 2, 5],
        gallery=[1, 3, 4, 6],
        gt_ids=[0, 0, 1, 1, 0, 2, 2],
        cameras=[0, 1, 0, 1, 0, 0, 0],
    )
    return x, split


class TestAveragePrecision:
    """Average precision of a ranked relevance list"""

    def test_hand_values(self):
        """[1,0,1] with R=2 gives (1 + 2/3) / 2"""
        assert average_precision([1, 0, 1], 2) == pytest.approx((1 + 2 / 3) / 2)
        assert average_precision([0, 1], 1) == pytest.approx(0.5)
        assert average_precision([1], 1) == 1.0

    def test_no_relevant_raises(self):
        """R = 0 is undefined"""
        with pytest.raises(NoRelevantError):
            average_precision([0, 0], 0)


class TestEvaluate:
    """Rank-1 / mAP protocol"""

    def test_perfect_gallery(self, line_split):
        """Nearest cross-camera match of the same id gives R1 = mAP = 1"""
        x, split = line_split
        result = evaluate(x, EvalSplit(query=[0, 2], gallery=[1, 3, 4],
                                       gt_ids=split.gt_ids, cameras=split.cameras))
        assert result.r1 == 1.0
        assert result.map == 1.0
        assert result.num_excluded == 0

    def test_same_camera_match_excluded(self, line_split):
        """A query whose only match shares its camera is excluded and counted"""
        x, split = line_split
        result = evaluate(x, split)
        assert result.num_queries == 3
        assert result.num_excluded == 1
        assert result.r1 == 1.0

    def test_all_excluded(self):
        """No valid query gives zero scores"""
        split = EvalSplit(query=[0], gallery=[1], gt_ids=[0, 0], cameras=[0, 0])
        result = evaluate(np.array([[0.0], [1.0]]), split)
        assert (result.r1, result.map, result.num_excluded) == (0.0, 0.0, 1)

    def test_matches_brute_force(self):
        """20 random splits match a per-query brute-force loop"""
        for trial in range(20):
            rng = np.random.default_rng(700 + trial)
            n = int(rng.integers(10, 60))
            x = rng.standard_normal((n, 3))
            split = random_split(rng, n, ids=int(rng.integers(2, 6)), cams=3)
            r1, mean_ap, excluded = brute_force_eval(x, split)
            result = evaluate(x, split)
            assert result.num_excluded == excluded
            if excluded < split.num_queries:
                assert result.r1 == pytest.approx(r1)
                assert result.map == pytest.approx(mean_ap)

    def test_rotation_invariant(self, rng):
        """An orthogonal rotation of the embeddings keeps the scores"""
        x = rng.standard_normal((40, 5))
        split = random_split(rng, 40, ids=5, cams=3)
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        base, rotated = evaluate(x, split), evaluate(x @ q, split)
        assert rotated.r1 == pytest.approx(base.r1)
        assert rotated.map == pytest.approx(base.map)

    def test_split_validation(self):
        """Overlapping or empty query/gallery sets are rejected"""
        with pytest.raises(ValueError):
            EvalSplit(query=[0, 1], gallery=[1, 2], gt_ids=[0, 0, 1], cameras=[0, 1, 0])
        with pytest.raises(EmptyInputError):
            EvalSplit(query=[], gallery=[0], gt_ids=[0], cameras=[0])

    def test_roles(self, line_split):
        """Every sample gets its role"""
        _, split = line_split
        assert split.roles().tolist() == ["query", "gallery", "query", "gallery", "gallery", "query", "gallery"]


class TestRankPrecision:
    """Identity precision of rank lists"""

    def test_all_true_matches(self):
        """Lists holding only same-id entries give 1.0"""
        rank = RankLists(entries=(np.array([1]), np.array([0]), np.array([3]), np.array([2])), k=1)
        assert rank_precision(rank, [0, 0, 1, 1]) == 1.0

    def test_half_true_matches(self):
        """One match out of two entries gives 0.5"""
        rank = RankLists(entries=(np.array([1, 2]), np.array([0, 2]), np.array([0, 1])), k=2)
        assert rank_precision(rank, [0, 0, 1]) == pytest.approx((0.5 + 0.5 + 0.0) / 3)

    def test_empty_lists_nan(self):
        """All lists empty gives NaN"""
        rank = RankLists(entries=(np.array([], dtype=int),) * 2, k=3)
        assert math.isnan(rank_precision(rank, [0, 1]))


class TestHardPositiveRate:
    """True matches the clustering missed"""

    def test_zero_when_labels_match_identities(self):
        """Pseudo labels equal to gt leave no hard positives"""
        rank = RankLists(entries=(np.array([1, 2]), np.array([0, 2]), np.array([0, 1])), k=2)
        assert hard_positive_rate(rank, [0, 0, 1], PseudoLabels(np.array([0, 0, 1]))) == 0.0

    def test_all_noise_equals_rank_precision(self, rng):
        """With every sample noise each true match is a hard positive"""
        entries = tuple(rng.choice(10, size=3, replace=False) for _ in range(10))
        rank = RankLists(entries=entries, k=3)
        gt = rng.integers(0, 3, size=10)
        noise = PseudoLabels(np.full(10, NOISE))
        assert hard_positive_rate(rank, gt, noise) == pytest.approx(rank_precision(rank, gt))

    def test_split_identity(self):
        """An identity split across two clusters counts the cross-cluster match"""
        rank = RankLists(entries=(np.array([1]), np.array([0])), k=1)
        assert hard_positive_rate(rank, [0, 0], PseudoLabels(np.array([0, 1]))) == 1.0


class TestClusterPurity:
    """Majority-identity share"""

    def test_pure(self):
        """Labels equal to identities give 1.0"""
        assert cluster_purity(PseudoLabels(np.array([0, 0, 1, 1])), [5, 5, 7, 7]) == 1.0

    def test_mixed_cluster(self):
        """A 3/1 cluster gives 0.75"""
        assert cluster_purity(PseudoLabels(np.array([0, 0, 0, 0])), [1, 1, 1, 2]) == 0.75

    def test_noise_ignored(self):
        """Noise samples do not count"""
        assert cluster_purity(PseudoLabels(np.array([0, 0, -1])), [1, 1, 2]) == 1.0

    def test_no_clusters_nan(self):
        """All noise gives NaN"""
        assert math.isnan(cluster_purity(PseudoLabels(np.array([-1, -1])), [0, 1]))

    def test_matches_oracle(self, rng):
        """Random labellings match a counting oracle"""
        for _ in range(10):
            labels = PseudoLabels.compact(rng.integers(-1, 5, size=30))
            gt = rng.integers(0, 4, size=30)
            if labels.num_clusters == 0:
                continue
            total = 0
            for c in labels.cluster_ids:
                members = gt[labels.labels == c].tolist()
                total += max(members.count(v) for v in set(members))
            assert cluster_purity(labels, gt) == pytest.approx(total / np.sum(labels.labels != -1))
