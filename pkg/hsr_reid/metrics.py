"""
Prometheus metrics instrumentation for the HSR training pipeline
"""

import logging
from typing import Optional

from prometheus_client import (
    CollectorRegistry, Counter, Gauge, Histogram, Info,
    write_to_textfile,
)

from . import __version__

logger = logging.getLogger(__name__)

# Private registry so repeated imports (tests, multiple runs) never collide
REGISTRY = CollectorRegistry(auto_describe=True)

# ==================== Metrics Definitions ====================

stage_duration_seconds = Histogram(
    'hsr_stage_duration_seconds',
    'Pipeline stage duration in seconds',
    ['stage'],
    buckets=(0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 30.0),
    registry=REGISTRY,
)

iterations_total = Counter(
    'hsr_iterations_total',
    'Clustering/training iterations completed',
    ['status'],
    registry=REGISTRY,
)

clusters_current = Gauge(
    'hsr_clusters',
    'Number of non-noise pseudo-label clusters in the latest iteration',
    registry=REGISTRY,
)

noise_samples_current = Gauge(
    'hsr_noise_samples',
    'Samples labelled as noise by DBSCAN in the latest iteration',
    registry=REGISTRY,
)

mutual_pairs_current = Gauge(
    'hsr_mutual_pairs',
    'Inter-camera mutual pairs mined in the latest iteration',
    registry=REGISTRY,
)

clusters_split_total = Counter(
    'hsr_clusters_split_total',
    'Imperfect clusters split by part-based homogeneity',
    registry=REGISTRY,
)

icm_anchors_skipped_total = Counter(
    'hsr_icm_anchors_skipped_total',
    'ICM anchors skipped during triplet sampling',
    ['reason'],
    registry=REGISTRY,
)

sgd_steps_skipped_total = Counter(
    'hsr_sgd_steps_skipped_total',
    'SGD steps aborted because of non-finite gradients',
    registry=REGISTRY,
)

loss_value = Gauge(
    'hsr_loss',
    'Mean loss of the latest iteration',
    ['component'],
    registry=REGISTRY,
)

eval_score = Gauge(
    'hsr_eval_score',
    'Latest evaluation score',
    ['metric'],
    registry=REGISTRY,
)

build_info = Info(
    'hsr_build',
    'HSR toolkit information',
    registry=REGISTRY,
)
build_info.info({'version': __version__, 'service': 'hsr-reid'})


# ==================== Helpers ====================

def record_iteration(record) -> None:
    """Push one iteration record into the gauges"""
    status = "skipped" if record.skipped else "trained"
    iterations_total.labels(status=status).inc()
    clusters_current.set(record.num_clusters)
    noise_samples_current.set(record.num_noise)
    mutual_pairs_current.set(record.num_pairs)
    loss_value.labels(component="ce").set(record.loss_ce)
    loss_value.labels(component="trip").set(record.loss_trip)
    loss_value.labels(component="icm").set(record.loss_icm)
    if record.r1 is not None:
        eval_score.labels(metric="r1").set(record.r1)
    if record.map is not None:
        eval_score.labels(metric="map").set(record.map)
    if record.rank_precision is not None:
        eval_score.labels(metric="rank_precision").set(record.rank_precision)


def write_metrics(path: Optional[str]) -> None:
    """Export the registry in text exposition format"""
    if not path:
        return
    write_to_textfile(path, REGISTRY)
    logger.info(f"Metrics written to {path}")


__all__ = [
    'REGISTRY',
    'stage_duration_seconds',
    'clusters_split_total',
    'icm_anchors_skipped_total',
    'sgd_steps_skipped_total',
    'eval_score',
    'record_iteration',
    'write_metrics',
]
