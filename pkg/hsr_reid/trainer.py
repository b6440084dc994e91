"""
HSR Training Loop
PK sampling, plain SGD and the iterated cluster -> rectify -> train scheme
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .cluster import (
    DEFAULT_EPS_PERCENTILE, DEFAULT_MIN_PTS, DbscanParams, EpsRule, dbscan, eps_heuristic,
)
from .core import EmbeddingSet, PseudoLabels, SimilarityMatrix, pairwise_distances
from .errors import NonFiniteError, TooFewClustersError
from .evaluation import EvalSplit, cluster_purity, evaluate, hard_positive_rate, rank_precision
from .icm import (
    DEFAULT_RANK_K, MutualPairs, NegativeMode, RankLists,
    build_rank_lists, eligible_anchors, mutual_pairs, sample_icm_triplets,
)
from .losses import (
    DEFAULT_MARGIN, TripletMode,
    ce_loss_and_grad, icm_triplet_loss_and_grad, triplet_loss_and_grad,
)
from .metrics import record_iteration, sgd_steps_skipped_total
from .model import DEFAULT_D_OUT, ClassifierHead, ProjectorModel
from .observability import timed_stage
from .pbh import LambdaMode, PbhConfig, assess_or_none, refine_clusters

logger = logging.getLogger(__name__)

# Lower bound on eps when the heuristic collapses to 0
MIN_EPS = 1e-6

HISTORY_COLUMNS = [
    "iter", "num_clusters", "mean_msil", "loss_ce", "loss_trip", "loss_icm",
    "r1", "map", "rank_precision",
]


# ==================== Configuration ====================

class TrainConfig(BaseModel):
    """Every knob of the HSR loop; None for eps / batches_per_epoch means auto"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lr: float = Field(default=0.005, gt=0)
    epochs_per_iter: int = Field(default=10, ge=1)
    iterations: int = Field(default=30, ge=0)
    P_ids: int = Field(default=8, ge=1)
    K_imgs: int = Field(default=4, ge=1)
    margin: float = Field(default=DEFAULT_MARGIN, ge=0)
    D_out: int = Field(default=DEFAULT_D_OUT, ge=1)
    use_icm: bool = True
    use_pbh: bool = True
    K: int = Field(default=DEFAULT_RANK_K, ge=1)
    min_pts: int = Field(default=DEFAULT_MIN_PTS, ge=1)
    eps: Optional[float] = Field(default=None, gt=0)
    eps_percentile: float = Field(default=DEFAULT_EPS_PERCENTILE, ge=0, le=100)
    eps_rule: EpsRule = EpsRule.PAIRWISE
    lambda_mode: LambdaMode = LambdaMode.AUTO
    fixed_lambda: float = 0.0
    min_cluster_size_for_split: int = Field(default=4, ge=2)
    triplet_mode: TripletMode = TripletMode.BATCH_HARD
    icm_negative: NegativeMode = NegativeMode.RANDOM
    batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    eval_every: int = Field(default=1, ge=0)
    seed: int = Field(default=0, ge=0)

    @property
    def batch_size(self) -> int:
        return self.P_ids * self.K_imgs

    def pbh_config(self) -> PbhConfig:
        return PbhConfig(
            lambda_mode=self.lambda_mode,
            fixed_lambda=self.fixed_lambda,
            min_cluster_size_for_split=self.min_cluster_size_for_split,
        )


# ==================== Records ====================

@dataclass
class IterationRecord:
    """Per-iteration bookkeeping; evaluation fields are None without ground truth"""
    iteration: int
    num_clusters: int
    num_noise: int
    eps: float
    mean_msil: float = float("nan")
    lambda_: float = float("nan")
    clusters_split: int = 0
    num_pairs: int = 0
    num_icm_triplets: int = 0
    loss_ce: float = 0.0
    loss_trip: float = 0.0
    loss_icm: float = 0.0
    r1: Optional[float] = None
    map: Optional[float] = None
    rank_precision: Optional[float] = None
    hard_positive_rate: Optional[float] = None
    purity: Optional[float] = None
    num_batches: int = 0
    skipped_steps: int = 0
    skipped: bool = False

    @property
    def loss_total(self) -> float:
        return self.loss_ce + self.loss_trip + self.loss_icm

    def to_dict(self) -> dict:
        return {
            "iter": self.iteration,
            "num_clusters": self.num_clusters,
            "num_noise": self.num_noise,
            "eps": self.eps,
            "mean_msil": self.mean_msil,
            "lambda": self.lambda_,
            "clusters_split": self.clusters_split,
            "num_pairs": self.num_pairs,
            "num_icm_triplets": self.num_icm_triplets,
            "loss_ce": self.loss_ce,
            "loss_trip": self.loss_trip,
            "loss_icm": self.loss_icm,
            "loss_total": self.loss_total,
            "r1": self.r1,
            "map": self.map,
            "rank_precision": self.rank_precision,
            "hard_positive_rate": self.hard_positive_rate,
            "purity": self.purity,
            "num_batches": self.num_batches,
            "skipped_steps": self.skipped_steps,
            "skipped": self.skipped,
        }


@dataclass(eq=False)
class TrainResult:
    """Trained projector plus per-iteration history and pseudo labels"""
    model: ProjectorModel
    history: List[IterationRecord] = field(default_factory=list)
    label_history: List[PseudoLabels] = field(default_factory=list)

    @property
    def final_labels(self) -> Optional[PseudoLabels]:
        return self.label_history[-1] if self.label_history else None


# ==================== Batching and optimisation ====================

def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def pk_sample(labels: PseudoLabels, P_ids: int, K_imgs: int, rng_seed) -> np.ndarray:
    """P distinct clusters without replacement, K members each

    Members are drawn with replacement only when a cluster has fewer than K.

    Raises:
        TooFewClustersError: fewer than P_ids clusters
    """
    if labels.num_clusters < P_ids:
        raise TooFewClustersError(
            f"PK sampling needs {P_ids} clusters, only {labels.num_clusters} available"
        )
    rng = _as_rng(rng_seed)
    chosen = rng.choice(labels.num_clusters, size=P_ids, replace=False)
    batch = []
    for cluster_id in chosen.tolist():
        members = labels.members(cluster_id)
        batch.append(rng.choice(members, size=K_imgs, replace=members.size < K_imgs))
    return np.concatenate(batch).astype(np.int64)


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    lr: float,
) -> Dict[str, np.ndarray]:
    """p <- p - lr * g for every named parameter, dtypes preserved

    Raises:
        NonFiniteError: a gradient holds NaN/Inf; nothing is updated
    """
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"Gradient for unknown parameter '{name}'")
        if np.shape(grad) != np.shape(params[name]):
            raise ValueError(
                f"Gradient shape {np.shape(grad)} does not match parameter '{name}' {np.shape(params[name])}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient for '{name}'")

    updated = {}
    for name, value in params.items():
        value = np.asarray(value)
        if name in grads:
            step = value.astype(np.float64) - lr * np.asarray(grads[name], dtype=np.float64)
            updated[name] = step.astype(value.dtype)
        else:
            updated[name] = value
    return updated


# ==================== HSR loop ====================

def _icm_batch(
    batch: np.ndarray,
    rank: RankLists,
    pairs: MutualPairs,
    labels: PseudoLabels,
    eligible: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    embeddings: np.ndarray,
):
    """Extend a PK batch with mined positives/negatives

    Returns the extended sample list and (anchor, positive, negative) rows of
    positions into it. Anchors sit at their first batch position.
    """
    first_position: Dict[int, int] = {}
    for pos, sample in enumerate(batch.tolist()):
        first_position.setdefault(sample, pos)
    anchors = [s for s in first_position if eligible[s]]
    if not anchors:
        return batch, np.empty((0, 3), dtype=np.int64)

    sample = sample_icm_triplets(
        rank, pairs, labels, sorted(anchors), config.K_imgs, rng,
        negative_mode=config.icm_negative, embeddings=embeddings,
    )
    if sample.num_triplets == 0:
        return batch, np.empty((0, 3), dtype=np.int64)

    t = sample.triplets
    base = batch.size
    extra = t[:, 1:].reshape(-1)
    positions = np.empty_like(t)
    positions[:, 0] = [first_position[a] for a in t[:, 0].tolist()]
    positions[:, 1] = base + 2 * np.arange(t.shape[0])
    positions[:, 2] = base + 2 * np.arange(t.shape[0]) + 1
    return np.concatenate([batch, extra]), positions


@timed_stage("train")
def _train_iteration(
    model: ProjectorModel,
    dataset: EmbeddingSet,
    labels: PseudoLabels,
    config: TrainConfig,
    rng: np.random.Generator,
    record: IterationRecord,
    head_seed: int,
    rank: Optional[RankLists] = None,
    pairs: Optional[MutualPairs] = None,
    embeddings: Optional[np.ndarray] = None,
) -> ProjectorModel:
    head = ClassifierHead.initialize(labels.num_clusters, model.d_out, seed=head_seed)
    p_eff = min(config.P_ids, labels.num_clusters)
    if config.batches_per_epoch:
        batches = config.batches_per_epoch
    else:
        labelled = int(labels.sizes().sum())
        batches = max(1, math.ceil(labelled / (p_eff * config.K_imgs)))

    eligible = np.zeros(len(labels), dtype=bool)
    use_icm = config.use_icm and rank is not None and pairs is not None
    if use_icm:
        eligible[eligible_anchors(pairs, labels)] = True

    sums = {"ce": 0.0, "trip": 0.0, "icm": 0.0}
    steps = 0
    for _epoch in range(config.epochs_per_iter):
        for _ in range(batches):
            batch = pk_sample(labels, p_eff, config.K_imgs, rng)
            samples, icm_positions = batch, np.empty((0, 3), dtype=np.int64)
            if use_icm:
                samples, icm_positions = _icm_batch(
                    batch, rank, pairs, labels, eligible, config, rng, embeddings
                )
            record.num_icm_triplets += int(icm_positions.shape[0])

            cache = model.forward(dataset.mean_part_features(samples))
            emb = cache.outputs
            y = labels.labels[batch]
            ce = ce_loss_and_grad(head, emb[: batch.size], y)
            trip = triplet_loss_and_grad(emb[: batch.size], y, config.margin, config.triplet_mode)
            icm = icm_triplet_loss_and_grad(emb, icm_positions, config.margin)

            grad_emb = icm.grad_embeddings.copy()
            grad_emb[: batch.size] += ce.grad_embeddings + trip.grad_embeddings
            grad_weight, grad_bias = model.backward(cache, grad_emb)

            try:
                params = sgd_step(
                    {"weight": model.weight, "bias": model.bias, "head": head.weight},
                    {"weight": grad_weight, "bias": grad_bias, "head": ce.grad_head},
                    config.lr,
                )
            except NonFiniteError as e:
                record.skipped_steps += 1
                sgd_steps_skipped_total.inc()
                logger.warning(
                    f"SGD step skipped: {e}",
                    extra={"iteration": record.iteration, "step": steps},
                )
                continue
            model.weight, model.bias, head.weight = params["weight"], params["bias"], params["head"]
            sums["ce"] += ce.loss
            sums["trip"] += trip.loss
            sums["icm"] += icm.loss
            steps += 1

    record.num_batches = steps
    if steps:
        record.loss_ce = sums["ce"] / steps
        record.loss_trip = sums["trip"] / steps
        record.loss_icm = sums["icm"] / steps
    return model


def run_hsr(
    dataset: EmbeddingSet,
    config: Optional[TrainConfig] = None,
    split: Optional[EvalSplit] = None,
    model: Optional[ProjectorModel] = None,
    seed: Optional[int] = None,
) -> TrainResult:
    """Iterate embed -> DBSCAN -> PBH -> ICM mining -> PK training

    use_icm and use_pbh both off is the baseline pipeline; iterations = 0
    returns the untrained projector. Iterations with fewer than two clusters
    skip training and are recorded as skipped. Evaluation fields are filled
    when a split is given (R1/mAP) or the dataset carries ground truth
    (diagnostics).
    """
    config = config or TrainConfig()
    seed = config.seed if seed is None else seed
    if model is None:
        model = ProjectorModel.initialize(dataset.part_dim, config.D_out, seed=seed)
    else:
        model = model.copy()
    if model.d_in != dataset.part_dim:
        raise ValueError(f"Projector d_in {model.d_in} does not match part width {dataset.part_dim}")

    result = TrainResult(model=model)
    pbh_config = config.pbh_config()
    logger.info(
        "HSR training started",
        extra={
            "num_samples": dataset.num_samples,
            "iterations": config.iterations,
            "use_icm": config.use_icm,
            "use_pbh": config.use_pbh,
            "seed": seed,
        },
    )

    for iteration in range(1, config.iterations + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, iteration]))
        emb = model.embed_global(dataset)
        dist = pairwise_distances(emb)

        eps = config.eps
        if eps is None:
            eps = eps_heuristic(
                emb, config.min_pts, config.eps_percentile, distances=dist, rule=config.eps_rule,
            )
        eps = max(eps, MIN_EPS)
        labels = dbscan(emb, DbscanParams(eps=eps, min_pts=config.min_pts), distances=dist)
        record = IterationRecord(
            iteration=iteration,
            num_clusters=labels.num_clusters,
            num_noise=labels.num_noise,
            eps=eps,
        )

        quality = assess_or_none(emb, labels, pbh_config, distances=dist)
        if quality is not None:
            record.mean_msil = quality.mean_msil
            record.lambda_ = quality.lambda_
        if config.use_pbh and quality is not None:
            parts = model.embed_parts(dataset)
            pbh_seed = int(np.random.SeedSequence([seed, iteration, 2]).generate_state(1)[0])
            labels, reports = refine_clusters(
                labels, quality, (parts[0], parts[-1]), pbh_config, seed=pbh_seed
            )
            record.clusters_split = sum(1 for r in reports if r.groups > 1)
            record.num_clusters = labels.num_clusters

        rank = pairs = None
        if config.use_icm or dataset.has_gt:
            sim = SimilarityMatrix((-dist).astype(np.float32))
            rank = build_rank_lists(sim, dataset.cameras, config.K)
        if config.use_icm:
            pairs = mutual_pairs(rank)
            record.num_pairs = len(pairs)

        if dataset.has_gt:
            record.rank_precision = rank_precision(rank, dataset.gt_ids)
            record.hard_positive_rate = hard_positive_rate(rank, dataset.gt_ids, labels)
            record.purity = cluster_purity(labels, dataset.gt_ids)

        if labels.num_clusters < 2:
            record.skipped = True
            logger.warning(
                f"Iteration {iteration} skipped: {labels.num_clusters} clusters",
                extra={"iteration": iteration, "eps": eps, "num_noise": labels.num_noise},
            )
        else:
            head_seed = int(np.random.SeedSequence([seed, iteration, 1]).generate_state(1)[0])
            model = _train_iteration(
                model, dataset, labels, config, rng, record, head_seed,
                rank=rank, pairs=pairs, embeddings=emb,
            )

        last = iteration == config.iterations
        if split is not None and (last or (config.eval_every and iteration % config.eval_every == 0)):
            scores = evaluate(model.embed_global(dataset), split)
            record.r1 = scores.r1
            record.map = scores.map

        result.history.append(record)
        result.label_history.append(labels)
        record_iteration(record)
        logger.info(
            f"Iteration {iteration}/{config.iterations} finished",
            extra=record.to_dict(),
        )

    result.model = model
    return result


__all__ = [
    "HISTORY_COLUMNS",
    "TrainConfig",
    "IterationRecord",
    "TrainResult",
    "pk_sample",
    "sgd_step",
    "run_hsr",
]
