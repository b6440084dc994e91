"""
Trainable Embedding Projector
Shared linear projection + L2 normalization over raw part features, and the per-iteration classifier head
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import NORM_EPS, EmbeddingSet
from .errors import NonFiniteError, ZeroVectorError
from .observability import timed_stage

logger = logging.getLogger(__name__)

DEFAULT_D_OUT = 64


@dataclass(eq=False)
class Projection:
    """Forward cache needed to back-propagate through one projection"""
    inputs: np.ndarray
    norms: np.ndarray
    outputs: np.ndarray


@dataclass(eq=False)
class ProjectorModel:
    """embedding = normalize(W @ x + b), W shared by the global input and every part

    weight is D_out x D_in float32, bias D_out float32.
    """
    weight: np.ndarray
    bias: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float32)
        self.bias = np.array(self.bias, dtype=np.float32)
        if self.weight.ndim != 2:
            raise ValueError(f"weight must be 2-D, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias has shape {self.bias.shape}, expected ({self.weight.shape[0]},)"
            )
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise NonFiniteError("Projector parameters must be finite")

    @classmethod
    def initialize(cls, d_in: int, d_out: int = DEFAULT_D_OUT, seed: int = 0) -> "ProjectorModel":
        """Seeded random projector, W ~ N(0, 1/d_in), b = 0"""
        if d_in < 1 or d_out < 1:
            raise ValueError(f"Projector dimensions must be >= 1, got d_in={d_in}, d_out={d_out}")
        rng = np.random.default_rng(seed)
        weight = rng.standard_normal((d_out, d_in)) / np.sqrt(d_in)
        return cls(weight=weight, bias=np.zeros(d_out), seed=seed)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "ProjectorModel":
        return ProjectorModel(weight=self.weight.copy(), bias=self.bias.copy(), seed=self.seed)

    # ==================== Forward / backward ====================

    def forward(self, raw: np.ndarray) -> Projection:
        """Project and normalize rows of raw, keeping the cache for backward

        Raises:
            ZeroVectorError: a projected row has norm <= 1e-12
        """
        x = np.asarray(raw, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.d_in:
            raise ValueError(f"Input width {x.shape[1]} does not match projector d_in {self.d_in}")
        z = x @ self.weight.astype(np.float64).T + self.bias.astype(np.float64)
        norms = np.sqrt(np.einsum("ij,ij->i", z, z))
        small = np.flatnonzero(norms <= NORM_EPS)
        if small.size:
            row = int(small[0])
            raise ZeroVectorError(row, float(norms[row]))
        return Projection(inputs=x, norms=norms, outputs=z / norms[:, None])

    def backward(self, cache: Projection, grad_outputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Gradients of weight and bias given dL/d(embedding)

        d(z/|z|)/dz applied to g is (g - y (y . g)) / |z|.
        """
        g = np.asarray(grad_outputs, dtype=np.float64)
        y = cache.outputs
        radial = np.einsum("ij,ij->i", y, g)
        grad_z = (g - y * radial[:, None]) / cache.norms[:, None]
        grad_weight = grad_z.T @ cache.inputs
        grad_bias = grad_z.sum(axis=0)
        return grad_weight, grad_bias

    def embed(self, raw: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings of raw rows, float32"""
        return self.forward(raw).outputs.astype(np.float32)

    # ==================== Dataset helpers ====================

    @timed_stage("embed")
    def embed_global(self, dataset: EmbeddingSet, indices: Optional[np.ndarray] = None) -> np.ndarray:
        """Global embeddings: projection of the mean of the part blocks"""
        return self.embed(dataset.mean_part_features(indices))

    def embed_parts(self, dataset: EmbeddingSet) -> Tuple[np.ndarray, ...]:
        """One embedding matrix per part block, upper part first"""
        return tuple(self.embed(part) for part in dataset.raw_parts)


@dataclass(eq=False)
class ClassifierHead:
    """Linear pseudo-class head V (C x D_out), rebuilt whenever C changes"""
    weight: np.ndarray

    @classmethod
    def initialize(cls, num_classes: int, d_out: int, seed: int = 0) -> "ClassifierHead":
        """V ~ U(-1/sqrt(d_out), 1/sqrt(d_out))"""
        if num_classes < 1:
            raise ValueError(f"Classifier head needs at least one class, got {num_classes}")
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(d_out)
        return cls(weight=rng.uniform(-bound, bound, size=(num_classes, d_out)))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        return np.asarray(embeddings, dtype=np.float64) @ np.asarray(self.weight, dtype=np.float64).T


__all__ = [
    "DEFAULT_D_OUT",
    "Projection",
    "ProjectorModel",
    "ClassifierHead",
]
