"""
Training losses with analytic gradients
Softmax cross-entropy, batch-hard / batch-all triplet and the ICM triplet loss
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .core import cross_distances
from .errors import DegenerateBatchError
from .model import ClassifierHead

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.3


class TripletMode(str, Enum):
    """Which triplets of a PK batch enter L_trip"""
    BATCH_HARD = "batch_hard"
    BATCH_ALL = "batch_all"


@dataclass(eq=False)
class LossResult:
    """Mean loss, its gradient w.r.t. the embeddings and (CE only) the head"""
    loss: float
    grad_embeddings: np.ndarray
    grad_head: Optional[np.ndarray] = None
    num_terms: int = 0
    num_active: int = 0


# ==================== Cross-entropy ====================

def ce_loss_and_grad(head: ClassifierHead, embeddings: np.ndarray, labels: np.ndarray) -> LossResult:
    """Mean softmax cross-entropy of the head over labelled embeddings"""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    v = np.asarray(head.weight, dtype=np.float64)
    if np.any(y < 0) or np.any(y >= head.num_classes):
        raise ValueError(f"CE labels must lie in 0..{head.num_classes - 1}")
    b = e.shape[0]

    logits = e @ v.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    rows = np.arange(b)
    loss = float(-log_probs[rows, y].mean())

    grad_logits = np.exp(log_probs)
    grad_logits[rows, y] -= 1.0
    grad_logits /= b
    return LossResult(
        loss=loss,
        grad_embeddings=grad_logits @ v,
        grad_head=grad_logits.T @ e,
        num_terms=b,
        num_active=b,
    )


# ==================== Triplet hinge ====================

def _accumulate_distance_grad(
    grad: np.ndarray,
    e: np.ndarray,
    first: np.ndarray,
    second: np.ndarray,
    dist: np.ndarray,
    coef: np.ndarray,
) -> None:
    """Add coef * d||e_first - e_second|| to grad; zero distances give zero subgradient"""
    ok = dist > 0
    if not np.any(ok):
        return
    diff = e[first[ok]] - e[second[ok]]
    unit = diff / dist[ok][:, None] * coef[ok][:, None]
    np.add.at(grad, first[ok], unit)
    np.add.at(grad, second[ok], -unit)


def _hinge_triplets(
    e: np.ndarray,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
    dist: Optional[np.ndarray] = None,
) -> LossResult:
    if dist is None:
        dist = cross_distances(e, e)
    d_ap = dist[anchors, positives]
    d_an = dist[anchors, negatives]
    hinge = d_ap - d_an + margin
    active = hinge > 0
    count = anchors.size

    grad = np.zeros_like(e)
    if count and np.any(active):
        coef = active.astype(np.float64) / count
        _accumulate_distance_grad(grad, e, anchors, positives, d_ap, coef)
        _accumulate_distance_grad(grad, e, anchors, negatives, d_an, -coef)
    loss = float(np.maximum(hinge, 0.0).sum() / count) if count else 0.0
    return LossResult(
        loss=loss,
        grad_embeddings=grad,
        num_terms=int(count),
        num_active=int(active.sum()),
    )


def batch_hard_triplet_loss_and_grad(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float = DEFAULT_MARGIN,
) -> LossResult:
    """Hardest positive / hardest negative per anchor, mean hinge over anchors

    Batch positions are distinct samples even when an index repeats. An anchor
    without another position of its class uses d_ap = 0.

    Raises:
        DegenerateBatchError: the batch holds a single class
    """
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DegenerateBatchError("Triplet loss needs at least two classes in the batch")

    dist = cross_distances(e, e)
    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    diff_class = y[:, None] != y[None, :]

    anchors = np.arange(e.shape[0])
    pos_dist = np.where(same, dist, -np.inf)
    positives = np.argmax(pos_dist, axis=1)
    no_positive = ~same.any(axis=1)
    positives[no_positive] = anchors[no_positive]
    negatives = np.argmin(np.where(diff_class, dist, np.inf), axis=1)
    return _hinge_triplets(e, anchors, positives, negatives, margin, dist=dist)


def batch_all_triplet_loss_and_grad(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float = DEFAULT_MARGIN,
) -> LossResult:
    """Mean hinge over every valid (a, p, n) of the batch

    Raises:
        DegenerateBatchError: the batch holds a single class
    """
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise DegenerateBatchError("Triplet loss needs at least two classes in the batch")

    same = y[:, None] == y[None, :]
    np.fill_diagonal(same, False)
    valid = same[:, :, None] & (y[:, None, None] != y[None, None, :])
    anchors, positives, negatives = np.nonzero(valid)
    return _hinge_triplets(e, anchors, positives, negatives, margin)


def triplet_loss_and_grad(
    embeddings: np.ndarray,
    labels: np.ndarray,
    margin: float = DEFAULT_MARGIN,
    mode: TripletMode = TripletMode.BATCH_HARD,
) -> LossResult:
    if TripletMode(mode) == TripletMode.BATCH_ALL:
        return batch_all_triplet_loss_and_grad(embeddings, labels, margin)
    return batch_hard_triplet_loss_and_grad(embeddings, labels, margin)


def icm_triplet_loss_and_grad(
    embeddings: np.ndarray,
    triplets: np.ndarray,
    margin: float = DEFAULT_MARGIN,
) -> LossResult:
    """Mean hinge over explicit (a, p, n) rows of positions into embeddings

    An empty triplet list gives loss 0 and zero gradients.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if t.shape[0] == 0:
        return LossResult(loss=0.0, grad_embeddings=np.zeros_like(e))
    return _hinge_triplets(e, t[:, 0], t[:, 1], t[:, 2], margin)


__all__ = [
    "DEFAULT_MARGIN",
    "TripletMode",
    "LossResult",
    "ce_loss_and_grad",
    "batch_hard_triplet_loss_and_grad",
    "batch_all_triplet_loss_and_grad",
    "triplet_loss_and_grad",
    "icm_triplet_loss_and_grad",
]
