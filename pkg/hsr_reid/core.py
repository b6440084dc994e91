"""
Core data model for HSR re-identification
Embedding sets, pseudo labels and the shared distance/similarity kernels
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyInputError, NonFiniteError, ZeroVectorError

logger = logging.getLogger(__name__)

NOISE = -1
NORM_EPS = 1e-12
SYMMETRY_TOL = 1e-5

# Rows per block when materialising pairwise differences
_DISTANCE_CHUNK = 64


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _check_finite(features: np.ndarray, what: str = "features") -> None:
    if not np.all(np.isfinite(features)):
        bad = np.argwhere(~np.isfinite(features))[0]
        raise NonFiniteError(f"{what} contain NaN/Inf (first at {tuple(int(i) for i in bad)})")


# ==================== Domain Types ====================

@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Raw per-sample features (global + part blocks), camera IDs, optional ground truth

    Immutable after construction; every array is made read-only.
    """
    raw_global: np.ndarray
    raw_parts: Tuple[np.ndarray, ...]
    cameras: np.ndarray
    gt_ids: Optional[np.ndarray] = None
    num_cameras: int = 0

    def __post_init__(self):
        raw_global = np.array(self.raw_global, dtype=np.float32, order="C")
        parts = tuple(np.array(p, dtype=np.float32, order="C") for p in self.raw_parts)
        cameras = np.array(self.cameras, dtype=np.int64)

        if raw_global.ndim != 2 or raw_global.shape[0] < 1:
            raise EmptyInputError("EmbeddingSet requires at least one sample (N_t >= 1)")
        n = raw_global.shape[0]
        if not parts:
            raise EmptyInputError("EmbeddingSet requires at least one part block")
        for k, part in enumerate(parts):
            if part.ndim != 2 or part.shape[0] != n:
                raise ValueError(f"Part block {k} has shape {part.shape}, expected ({n}, D_part)")
        if cameras.shape != (n,):
            raise ValueError(f"cameras has shape {cameras.shape}, expected ({n},)")
        _check_finite(raw_global, "raw_global")
        for part in parts:
            _check_finite(part, "raw_parts")
        if not np.array_equal(np.concatenate(parts, axis=1), raw_global):
            raise ValueError("Concatenated part blocks do not reproduce raw_global")
        if np.any(cameras < 0):
            raise ValueError("Camera IDs must be non-negative")

        num_cameras = self.num_cameras or int(cameras.max()) + 1
        if np.any(cameras >= num_cameras):
            raise ValueError(f"Camera ID >= num_cameras ({num_cameras})")

        gt_ids = None
        if self.gt_ids is not None:
            gt_ids = np.array(self.gt_ids, dtype=np.int64)
            if gt_ids.shape != (n,):
                raise ValueError(f"gt_ids has shape {gt_ids.shape}, expected ({n},)")
            if np.any(gt_ids < 0):
                raise ValueError("Ground-truth IDs must be non-negative")
            gt_ids = _frozen(gt_ids)

        object.__setattr__(self, "raw_global", _frozen(raw_global))
        object.__setattr__(self, "raw_parts", tuple(_frozen(p) for p in parts))
        object.__setattr__(self, "cameras", _frozen(cameras))
        object.__setattr__(self, "gt_ids", gt_ids)
        object.__setattr__(self, "num_cameras", num_cameras)

    @classmethod
    def from_parts(
        cls,
        parts: Sequence[np.ndarray],
        cameras: Sequence[int],
        gt_ids: Optional[Sequence[int]] = None,
        num_cameras: int = 0,
    ) -> "EmbeddingSet":
        """Build a set whose global block is the concatenation of the parts"""
        parts = tuple(np.asarray(p, dtype=np.float32) for p in parts)
        return cls(
            raw_global=np.concatenate(parts, axis=1),
            raw_parts=parts,
            cameras=np.asarray(cameras),
            gt_ids=None if gt_ids is None else np.asarray(gt_ids),
            num_cameras=num_cameras,
        )

    @property
    def num_samples(self) -> int:
        return self.raw_global.shape[0]

    @property
    def num_parts(self) -> int:
        return len(self.raw_parts)

    @property
    def part_dim(self) -> int:
        return self.raw_parts[0].shape[1]

    @property
    def has_gt(self) -> bool:
        return self.gt_ids is not None

    def mean_part_features(self, indices: Optional[np.ndarray] = None) -> np.ndarray:
        """Average of the part blocks, the projector's global input"""
        parts = self.raw_parts if indices is None else [p[indices] for p in self.raw_parts]
        stacked = np.stack(parts, axis=0).astype(np.float64)
        return stacked.mean(axis=0).astype(np.float32)

    def subset(self, indices: Sequence[int]) -> "EmbeddingSet":
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingSet(
            raw_global=self.raw_global[idx],
            raw_parts=tuple(p[idx] for p in self.raw_parts),
            cameras=self.cameras[idx],
            gt_ids=None if self.gt_ids is None else self.gt_ids[idx],
            num_cameras=self.num_cameras,
        )


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """N x N negative Euclidean distances"""
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"Similarity matrix must be square, got {values.shape}")
        if not np.allclose(values, values.T, atol=SYMMETRY_TOL, rtol=0.0):
            raise ValueError("Similarity matrix is not symmetric")
        if np.any(values > 0):
            raise ValueError("Similarity values must be <= 0")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def distances(self) -> np.ndarray:
        return -self.values.astype(np.float64)


@dataclass(frozen=True, eq=False)
class PseudoLabels:
    """Per-sample cluster assignment with NOISE = -1, compact label space"""
    labels: np.ndarray
    _sizes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if np.any(labels < NOISE):
            raise ValueError("labels must be >= -1")
        clustered = labels[labels != NOISE]
        num_clusters = int(clustered.max()) + 1 if clustered.size else 0
        sizes = np.bincount(clustered, minlength=num_clusters)
        if np.any(sizes == 0):
            raise ValueError("Non-noise labels are not contiguous 0..k-1")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "_sizes", _frozen(sizes))

    @classmethod
    def compact(cls, raw_labels: Sequence[int]) -> "PseudoLabels":
        """Renumber arbitrary cluster ids to 0..k-1 in order of first appearance"""
        raw = np.asarray(raw_labels, dtype=np.int64)
        out = np.full(raw.shape, NOISE, dtype=np.int64)
        mapping: Dict[int, int] = {}
        for i, value in enumerate(raw.tolist()):
            if value < 0:
                continue
            if value not in mapping:
                mapping[value] = len(mapping)
            out[i] = mapping[value]
        return cls(out)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def num_clusters(self) -> int:
        return self._sizes.shape[0]

    @property
    def num_noise(self) -> int:
        return int(np.count_nonzero(self.labels == NOISE))

    @property
    def cluster_ids(self) -> List[int]:
        return list(range(self.num_clusters))

    def sizes(self) -> np.ndarray:
        return self._sizes

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    def clustered_mask(self) -> np.ndarray:
        return self.labels != NOISE


# ==================== Operations ====================

def l2_normalize(features: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm

    Raises:
        ZeroVectorError: if a row norm is <= 1e-12
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    small = np.flatnonzero(norms <= NORM_EPS)
    if small.size:
        row = int(small[0])
        raise ZeroVectorError(row, float(norms[row]))
    return (x / norms[:, None]).astype(np.float32)


def cross_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows of a and rows of b, float64

    Differences are formed explicitly, so identical rows give exactly 0 and
    d(a_i, b_j) is bit-identical to d(b_j, a_i).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    for start in range(0, a.shape[0], _DISTANCE_CHUNK):
        stop = min(start + _DISTANCE_CHUNK, a.shape[0])
        diff = a[start:stop, None, :] - b[None, :, :]
        out[start:stop] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def pairwise_distances(features: np.ndarray) -> np.ndarray:
    """Symmetric N x N Euclidean distance matrix, float64, zero diagonal"""
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[0] < 1:
        raise EmptyInputError("pairwise distances need an N x D matrix with N >= 1")
    _check_finite(x)
    dist = cross_distances(x, x)
    np.fill_diagonal(dist, 0.0)
    return dist


def pairwise_similarity(features: np.ndarray) -> SimilarityMatrix:
    """Similarity matrix S[i][j] = -||x_i - x_j||"""
    dist = pairwise_distances(features)
    return SimilarityMatrix(values=(-dist).astype(np.float32))


__all__ = [
    "NOISE",
    "EmbeddingSet",
    "SimilarityMatrix",
    "PseudoLabels",
    "l2_normalize",
    "cross_distances",
    "pairwise_distances",
    "pairwise_similarity",
]
