"""
Pytest configuration and fixtures for HSR re-ID tests
"""

import os

import numpy as np
import pytest

# Set test environment
os.environ.setdefault("HSR_LOG_LEVEL", "WARNING")
os.environ.setdefault("HSR_LOG_FORMAT", "text")

from hsr_reid.core import EmbeddingSet, PseudoLabels
from hsr_reid.synth import SynthConfig, generate
from hsr_reid.trainer import TrainConfig


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for random test instances"""
    return np.random.default_rng(1234)


@pytest.fixture
def two_blobs() -> np.ndarray:
    """Two 10-point blobs: intra distance < 0.1, inter distance ~ 10"""
    base = np.array([[0.0, 0.0], [10.0, 0.0]])
    offsets = np.linspace(0.0, 0.045, 10)
    points = [base[b] + np.stack([offsets, np.zeros(10)], axis=1) for b in range(2)]
    return np.concatenate(points)


@pytest.fixture
def tiny_dataset() -> EmbeddingSet:
    """Six samples, two parts of width 2, three cameras, three identities"""
    upper = np.array([
        [1.0, 0.0], [1.0, 0.1], [0.0, 1.0], [0.1, 1.0], [-1.0, 0.0], [-1.0, 0.1],
    ])
    lower = np.array([
        [0.0, 1.0], [0.1, 1.0], [1.0, 0.0], [1.0, 0.1], [0.0, -1.0], [0.1, -1.0],
    ])
    return EmbeddingSet.from_parts(
        [upper, lower],
        cameras=[0, 1, 0, 2, 1, 2],
        gt_ids=[0, 0, 1, 1, 2, 2],
    )


@pytest.fixture
def small_synth_config() -> SynthConfig:
    """Benchmark small enough for quick end-to-end runs"""
    return SynthConfig(
        num_ids=12,
        cams=3,
        samples_per_id_per_cam=2,
        D_part=8,
        alpha_cam=0.6,
        twin_fraction=0.34,
        noise_sigma=0.1,
        seed=3,
    )


@pytest.fixture
def small_benchmark(small_synth_config):
    return generate(small_synth_config)


@pytest.fixture
def fast_train_config() -> TrainConfig:
    """Two short iterations with a fixed radius"""
    return TrainConfig(
        iterations=2,
        epochs_per_iter=1,
        batches_per_epoch=2,
        P_ids=4,
        K_imgs=2,
        D_out=8,
        eps=0.6,
        min_pts=2,
        seed=5,
    )


@pytest.fixture
def labels_three_clusters() -> PseudoLabels:
    return PseudoLabels(np.array([0, 0, 1, 1, 2, 2, -1]))
