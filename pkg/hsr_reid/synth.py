"""
Synthetic camera-biased benchmark
Gaussian identities with per-camera offsets (hard positives) and part twins (hard negatives)
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .core import EmbeddingSet
from .errors import ConfigError
from .evaluation import EvalSplit

logger = logging.getLogger(__name__)

# Camera offset scales are drawn per camera and part from this range
CAMERA_SCALE_RANGE = (0.5, 1.5)


class TwinPart(str, Enum):
    """Part shared exactly by the two identities of a twin pair"""
    UPPER = "upper"
    LOWER = "lower"


class SynthConfig(BaseModel):
    """Generator settings; twin_part None draws the shared part per pair

    alpha_cam is the camera bias relative to the identity spread. Each camera
    shifts each part by alpha_cam * s * sqrt(D_part / 2) along a fixed unit
    direction, s ~ U(0.5, 1.5). Two cameras of one identity then sit about
    alpha_cam * sqrt(D_part) apart per part, against an identity gap of about
    sigma_id * sqrt(2 * D_part), so the ratio does not depend on D_part.
    alpha_cam = 0 removes the bias.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    num_ids: int = Field(default=60, ge=1)
    cams: int = Field(default=6, ge=2)
    samples_per_id_per_cam: int = Field(default=3, ge=2)
    D_part: int = Field(default=32, ge=1)
    sigma_id: float = Field(default=1.0, ge=0)
    alpha_cam: float = Field(default=1.2, ge=0)
    twin_fraction: float = Field(default=0.3, ge=0, le=1)
    twin_part: Optional[TwinPart] = None
    noise_sigma: float = Field(default=0.15, ge=0)
    seed: int = Field(default=0, ge=0)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "SynthConfig":
        """Validate a plain mapping, raising ConfigError on any violation"""
        try:
            return cls.model_validate(dict(values))
        except ValidationError as e:
            first = e.errors()[0]
            key = ".".join(str(p) for p in first.get("loc", ())) or "<root>"
            raise ConfigError(f"Invalid synthetic config key '{key}': {first.get('msg')}") from e

    @property
    def num_samples(self) -> int:
        return self.num_ids * self.cams * self.samples_per_id_per_cam


@dataclass(eq=False)
class SyntheticBenchmark:
    """Generated dataset with its evaluation split and twin bookkeeping"""
    dataset: EmbeddingSet
    split: EvalSplit
    config: SynthConfig
    twin_pairs: List[Tuple[int, int, TwinPart]] = field(default_factory=list)


def camera_offset_norm(config: SynthConfig) -> float:
    """Offset length per part before the per-camera scale"""
    return config.alpha_cam * float(np.sqrt(config.D_part / 2.0))


def _camera_offsets(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """cams x 2 x D_part offsets: camera_offset_norm * scale * unit direction"""
    directions = rng.standard_normal((config.cams, 2, config.D_part))
    directions /= np.linalg.norm(directions, axis=2, keepdims=True)
    scales = rng.uniform(*CAMERA_SCALE_RANGE, size=(config.cams, 2, 1))
    return camera_offset_norm(config) * scales * directions


def generate(config: SynthConfig) -> SyntheticBenchmark:
    """Draw a benchmark deterministically from config.seed

    Samples are laid out identity-major, then camera, then repeat. The first
    sample of every (identity, camera) is a query, the rest form the gallery.
    """
    if not isinstance(config, SynthConfig):
        config = SynthConfig.from_mapping(config)
    rng = np.random.default_rng(config.seed)
    d = config.D_part

    centers = rng.normal(0.0, config.sigma_id, size=(2, config.num_ids, d))

    twin_pairs: List[Tuple[int, int, TwinPart]] = []
    num_pairs = int(config.twin_fraction * config.num_ids) // 2
    if num_pairs:
        order = rng.permutation(config.num_ids)
        for k in range(num_pairs):
            a, b = int(order[2 * k]), int(order[2 * k + 1])
            if config.twin_part is not None:
                part = config.twin_part
            else:
                part = TwinPart.UPPER if rng.random() < 0.5 else TwinPart.LOWER
            block = 0 if part == TwinPart.UPPER else 1
            centers[block, b] = centers[block, a]
            twin_pairs.append((min(a, b), max(a, b), part))

    offsets = _camera_offsets(config, rng)

    gt_ids = np.repeat(np.arange(config.num_ids), config.cams * config.samples_per_id_per_cam)
    cameras = np.tile(
        np.repeat(np.arange(config.cams), config.samples_per_id_per_cam), config.num_ids
    )
    repeat = np.tile(np.arange(config.samples_per_id_per_cam), config.num_ids * config.cams)
    n = gt_ids.size

    parts = []
    for block in range(2):
        noise = rng.normal(0.0, config.noise_sigma, size=(n, d)) if config.noise_sigma else 0.0
        parts.append((centers[block, gt_ids] + offsets[cameras, block] + noise).astype(np.float32))

    dataset = EmbeddingSet.from_parts(parts, cameras, gt_ids, num_cameras=config.cams)
    split = EvalSplit(
        query=np.flatnonzero(repeat == 0),
        gallery=np.flatnonzero(repeat != 0),
        gt_ids=gt_ids,
        cameras=cameras,
    )
    logger.info(
        "Synthetic benchmark generated",
        extra={
            "num_samples": n,
            "num_ids": config.num_ids,
            "cams": config.cams,
            "twin_pairs": len(twin_pairs),
            "seed": config.seed,
        },
    )
    return SyntheticBenchmark(dataset=dataset, split=split, config=config, twin_pairs=twin_pairs)


__all__ = [
    "TwinPart",
    "SynthConfig",
    "camera_offset_norm",
    "SyntheticBenchmark",
    "generate",
]
