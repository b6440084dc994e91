"""
Unit tests for inter-camera mining
"""

import numpy as np
import pytest

from hsr_reid.core import PseudoLabels, pairwise_similarity
from hsr_reid.errors import NoNegativeError, NoPositiveError
from hsr_reid.evaluation import rank_precision
from hsr_reid.icm import (
    NegativeMode, RankLists,
    build_rank_lists, eligible_anchors, mutual_pairs, sample_icm_triplets,
)
from hsr_reid.synth import SynthConfig, generate


def brute_force_rank_lists(sim, cameras, k):
    n = sim.shape[0]
    lists = []
    for i in range(n):
        candidates = [j for j in range(n) if cameras[j] != cameras[i]]
        candidates.sort(key=lambda j: (-sim[i, j], j))
        lists.append(candidates[:k])
    return lists


def brute_force_pairs(lists):
    pairs = set()
    for i in range(len(lists)):
        for j in range(len(lists)):
            if i < j and j in lists[i] and i in lists[j]:
                pairs.add((i, j))
    return pairs


@pytest.fixture
def three_samples():
    sim = pairwise_similarity(np.array([[0.0], [0.1], [5.0]]))
    return sim, np.array([0, 1, 1])


class TestBuildRankLists:
    """Camera-filtered top-K lists"""

    def test_three_sample_example(self, three_samples):
        """K=1 lists follow the hand-enumerated distances"""
        sim, cams = three_samples
        rank = build_rank_lists(sim, cams, k=1)
        assert [r.tolist() for r in rank.entries] == [[1], [0], [0]]

    def test_single_camera_empty(self, rng):
        """All samples on one camera give empty lists"""
        sim = pairwise_similarity(rng.standard_normal((6, 3)))
        rank = build_rank_lists(sim, np.zeros(6, dtype=int), k=3)
        assert all(r.size == 0 for r in rank.entries)
        assert rank.mean_length() == 0.0

    def test_default_k_bounds_lengths(self, rng):
        """Lists hold at most K = 10 entries"""
        sim = pairwise_similarity(rng.standard_normal((40, 4)))
        rank = build_rank_lists(sim, rng.integers(0, 3, size=40))
        assert rank.k == 10
        assert rank.lengths().max() <= 10

    def test_no_self_or_same_camera(self, rng):
        """Lists never contain the anchor or its camera"""
        cams = rng.integers(0, 4, size=50)
        rank = build_rank_lists(pairwise_similarity(rng.standard_normal((50, 3))), cams, k=8)
        for i, entries in enumerate(rank.entries):
            assert i not in entries.tolist()
            assert np.all(cams[entries] != cams[i])

    def test_short_lists_when_few_candidates(self):
        """A list is shorter than K only when candidates run out"""
        sim = pairwise_similarity(np.array([[0.0], [1.0], [2.0]]))
        rank = build_rank_lists(sim, np.array([0, 0, 1]), k=5)
        np.testing.assert_array_equal(rank.lengths(), [1, 1, 2])

    def test_ties_by_ascending_index(self):
        """Equal similarities are ordered by sample index"""
        sim = pairwise_similarity(np.array([[0.0], [1.0], [-1.0], [1.0]]))
        rank = build_rank_lists(sim, np.array([0, 1, 1, 1]), k=3)
        assert rank[0].tolist() == [1, 2, 3]

    def test_unfiltered_lists(self, three_samples):
        """cross_camera=False only drops the anchor"""
        sim, cams = three_samples
        rank = build_rank_lists(sim, cams, k=2, cross_camera=False)
        assert rank[2].tolist() == [1, 0]

    def test_invalid_k(self, three_samples):
        """K must be positive"""
        sim, cams = three_samples
        with pytest.raises(ValueError):
            build_rank_lists(sim, cams, k=0)


class TestMutualPairs:
    """K mutual best-buddy pairs"""

    def test_three_sample_example(self, three_samples):
        """Only (0, 1) is reciprocated"""
        sim, cams = three_samples
        pairs = mutual_pairs(build_rank_lists(sim, cams, k=1))
        assert pairs.sorted_pairs() == [(0, 1)]
        assert pairs.partners_of(0) == (1,)
        assert pairs.partners_of(2) == ()

    def test_empty_lists(self):
        """No lists means no pairs"""
        rank = RankLists(entries=(np.array([], dtype=int),) * 3, k=2)
        assert len(mutual_pairs(rank)) == 0

    def test_matches_brute_force(self):
        """Rank lists and pairs match brute force on 50 random instances"""
        for trial in range(50):
            rng = np.random.default_rng(trial)
            n = int(rng.integers(5, 201))
            c = int(rng.integers(2, 7))
            k = int(rng.integers(1, 11))
            cams = rng.integers(0, c, size=n)
            sim = pairwise_similarity(rng.standard_normal((n, 3)))
            rank = build_rank_lists(sim, cams, k=k)
            expected = brute_force_rank_lists(sim.values, cams, k)
            assert [r.tolist() for r in rank.entries] == expected
            assert mutual_pairs(rank).pairs == brute_force_pairs(expected)

    def test_symmetric_partners(self, rng):
        """Partner lists are symmetric"""
        sim = pairwise_similarity(rng.standard_normal((60, 3)))
        pairs = mutual_pairs(build_rank_lists(sim, rng.integers(0, 3, size=60), k=4))
        for i, partners in pairs.partners.items():
            for j in partners:
                assert i in pairs.partners_of(j)

    def test_permutation_invariant(self, rng):
        """Shuffling rows maps the pair set onto itself"""
        x = rng.standard_normal((50, 3))
        cams = rng.integers(0, 3, size=50)
        perm = rng.permutation(50)
        base = mutual_pairs(build_rank_lists(pairwise_similarity(x), cams, k=5)).pairs
        shuffled = mutual_pairs(build_rank_lists(pairwise_similarity(x[perm]), cams[perm], k=5)).pairs
        mapped = {tuple(sorted((int(perm[i]), int(perm[j])))) for i, j in shuffled}
        assert mapped == base


class TestSampleIcmTriplets:
    """ICM triplet sampling"""

    @pytest.fixture
    def hand_case(self):
        rank = RankLists(entries=(np.array([1]), np.array([0]), np.array([0])), k=1)
        return rank, mutual_pairs(rank), PseudoLabels(np.array([0, 1, 2]))

    def test_hand_enumerated_pool(self, hand_case):
        """The only valid negative is sample 2"""
        rank, pairs, labels = hand_case
        sample = sample_icm_triplets(rank, pairs, labels, [0], per_anchor=1, rng_seed=0)
        assert sample.triplets.tolist() == [[0, 1, 2]]

    def test_anchor_without_partner_skipped(self, hand_case):
        """Anchors without mutual partner are skipped and counted"""
        rank, pairs, labels = hand_case
        sample = sample_icm_triplets(rank, pairs, labels, [2], per_anchor=2, rng_seed=0)
        assert sample.num_triplets == 0
        assert sample.skipped_no_positive == [2]

    def test_empty_negative_pool_skipped(self):
        """Anchors whose pool is empty are skipped and counted"""
        rank = RankLists(entries=(np.array([1]), np.array([0])), k=1)
        labels = PseudoLabels(np.array([0, 0]))
        sample = sample_icm_triplets(rank, mutual_pairs(rank), labels, [0], per_anchor=1, rng_seed=0)
        assert sample.skipped_no_negative == [0]

    def test_strict_mode_raises(self, hand_case):
        """Strict sampling raises instead of skipping"""
        rank, pairs, labels = hand_case
        with pytest.raises(NoPositiveError):
            sample_icm_triplets(rank, pairs, labels, [2], per_anchor=1, rng_seed=0, strict=True)
        same = PseudoLabels(np.array([0, 0, 0]))
        with pytest.raises(NoNegativeError):
            sample_icm_triplets(rank, pairs, same, [0], per_anchor=1, rng_seed=0, strict=True)

    def test_per_anchor_count(self, hand_case):
        """per_anchor=4 gives four triples per eligible anchor"""
        rank, pairs, labels = hand_case
        sample = sample_icm_triplets(rank, pairs, labels, [0, 1], per_anchor=4, rng_seed=3)
        assert sample.num_triplets == 8
        assert np.all(sample.triplets[:4, 1] == 1)
        assert np.all(sample.triplets[4:, 1] == 0)

    def test_invariants_random_instance(self, rng):
        """Positives are cross-camera partners and negatives avoid the rank list"""
        x = rng.standard_normal((80, 3))
        cams = rng.integers(0, 4, size=80)
        labels = PseudoLabels.compact(rng.integers(-1, 8, size=80))
        rank = build_rank_lists(pairwise_similarity(x), cams, k=6)
        pairs = mutual_pairs(rank)
        anchors = eligible_anchors(pairs, labels)
        sample = sample_icm_triplets(rank, pairs, labels, anchors, per_anchor=4, rng_seed=11)
        y = labels.labels
        for a, p, n in sample.triplets.tolist():
            assert cams[p] != cams[a]
            assert p in pairs.partners_of(a)
            assert not rank.contains(a, n)
            assert y[n] != y[a] and y[n] != -1

    def test_deterministic(self, rng):
        """Same seed gives the same triples"""
        x = rng.standard_normal((60, 3))
        cams = rng.integers(0, 3, size=60)
        labels = PseudoLabels.compact(rng.integers(0, 6, size=60))
        rank = build_rank_lists(pairwise_similarity(x), cams, k=5)
        pairs = mutual_pairs(rank)
        anchors = eligible_anchors(pairs, labels)
        first = sample_icm_triplets(rank, pairs, labels, anchors, 4, rng_seed=7)
        second = sample_icm_triplets(rank, pairs, labels, anchors, 4, rng_seed=7)
        np.testing.assert_array_equal(first.triplets, second.triplets)

    def test_hard_negatives_are_closest(self):
        """Hard mode picks the closest valid negative"""
        emb = np.array([[0.0], [0.1], [1.0], [3.0], [2.0]])
        rank = RankLists(
            entries=(np.array([1]), np.array([0]), np.array([], dtype=int),
                     np.array([], dtype=int), np.array([], dtype=int)),
            k=1,
        )
        labels = PseudoLabels(np.array([0, 1, 2, 3, 4]))
        sample = sample_icm_triplets(
            rank, mutual_pairs(rank), labels, [0], per_anchor=2, rng_seed=0,
            negative_mode=NegativeMode.HARD, embeddings=emb,
        )
        assert sample.triplets[:, 2].tolist() == [2, 4]

    def test_hard_mode_needs_embeddings(self, hand_case):
        """Hard mode without embeddings is rejected"""
        rank, pairs, labels = hand_case
        with pytest.raises(ValueError):
            sample_icm_triplets(rank, pairs, labels, [0], 1, 0, negative_mode=NegativeMode.HARD)


class TestEligibleAnchors:
    """ICM anchor eligibility"""

    def test_noise_excluded(self):
        """Noise samples with partners are not anchors"""
        rank = RankLists(entries=(np.array([1]), np.array([0]), np.array([0])), k=1)
        labels = PseudoLabels(np.array([-1, 0, 1]))
        assert eligible_anchors(mutual_pairs(rank), labels).tolist() == [1]


class TestRankListPrecision:
    """Camera filtering on the camera-biased benchmark"""

    def test_filtered_lists_more_precise(self):
        """Cross-camera lists are at least as precise as unfiltered ones"""
        for seed in range(5):
            bench = generate(SynthConfig(seed=seed))
            features = bench.dataset.mean_part_features()
            sim = pairwise_similarity(features)
            cams = bench.dataset.cameras
            filtered = rank_precision(build_rank_lists(sim, cams, k=10), bench.dataset.gt_ids)
            unfiltered = rank_precision(
                build_rank_lists(sim, cams, k=10, cross_camera=False), bench.dataset.gt_ids
            )
            assert filtered >= unfiltered
