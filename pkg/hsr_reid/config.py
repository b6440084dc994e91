"""
Run configuration
Flat `key = value` config files validated into a single pydantic model
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .cluster import DEFAULT_EPS_PERCENTILE, DEFAULT_MIN_PTS, EpsRule
from .errors import ConfigTypeError, ParseError, UnknownKeyError
from .icm import DEFAULT_RANK_K, NegativeMode
from .losses import DEFAULT_MARGIN, TripletMode
from .model import DEFAULT_D_OUT
from .pbh import LambdaMode, PbhConfig
from .synth import SynthConfig, TwinPart
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

AUTO = "auto"

# Keys whose value may be `auto`, mapped to None before validation
_AUTO_KEYS = {"eps", "lambda", "batches_per_epoch", "twin_part"}


class RunConfig(BaseModel):
    """Every tunable of the toolkit in one flat namespace"""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    # Mining / clustering
    K: int = Field(default=DEFAULT_RANK_K, ge=1)
    min_pts: int = Field(default=DEFAULT_MIN_PTS, ge=1)
    eps: Optional[float] = Field(default=None, gt=0)
    eps_percentile: float = Field(default=DEFAULT_EPS_PERCENTILE, ge=0, le=100)
    eps_rule: EpsRule = EpsRule.PAIRWISE
    lambda_: Optional[float] = Field(default=None, alias="lambda")
    min_cluster_size_for_split: int = Field(default=4, ge=2)
    icm_negative: NegativeMode = NegativeMode.RANDOM

    # Training
    margin: float = Field(default=DEFAULT_MARGIN, ge=0)
    lr: float = Field(default=0.005, gt=0)
    epochs_per_iter: int = Field(default=10, ge=1)
    iterations: int = Field(default=30, ge=0)
    P_ids: int = Field(default=8, ge=1)
    K_imgs: int = Field(default=4, ge=1)
    D_out: int = Field(default=DEFAULT_D_OUT, ge=1)
    use_icm: bool = True
    use_pbh: bool = True
    triplet_mode: TripletMode = TripletMode.BATCH_HARD
    batches_per_epoch: Optional[int] = Field(default=None, ge=1)
    eval_every: int = Field(default=1, ge=0)
    seed: int = Field(default=0, ge=0)

    # Synthetic benchmark
    num_ids: int = Field(default=60, ge=1)
    cams: int = Field(default=6, ge=2)
    samples_per_id_per_cam: int = Field(default=3, ge=2)
    D_part: int = Field(default=32, ge=1)
    sigma_id: float = Field(default=1.0, ge=0)
    alpha_cam: float = Field(default=1.2, ge=0)
    twin_fraction: float = Field(default=0.3, ge=0, le=1)
    twin_part: Optional[TwinPart] = None
    noise_sigma: float = Field(default=0.15, ge=0)

    @classmethod
    def known_keys(cls) -> Dict[str, str]:
        """File key -> field name"""
        return {(info.alias or name): name for name, info in cls.model_fields.items()}

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        return parse_config(Path(path).read_text(encoding="utf-8"))

    def with_overrides(self, **values) -> "RunConfig":
        """Copy with some fields replaced, revalidated"""
        data = self.model_dump(by_alias=True)
        for name, value in values.items():
            field = type(self).model_fields[name]
            data[field.alias or name] = value
        try:
            return RunConfig.model_validate(data)
        except ValidationError as e:
            first = e.errors()[0]
            key = str(first["loc"][0]) if first.get("loc") else "<root>"
            raise ConfigTypeError(key, data.get(key), first.get("msg", "invalid value")) from e

    def train_config(self, **overrides) -> TrainConfig:
        values = dict(
            lr=self.lr,
            epochs_per_iter=self.epochs_per_iter,
            iterations=self.iterations,
            P_ids=self.P_ids,
            K_imgs=self.K_imgs,
            margin=self.margin,
            D_out=self.D_out,
            use_icm=self.use_icm,
            use_pbh=self.use_pbh,
            K=self.K,
            min_pts=self.min_pts,
            eps=self.eps,
            eps_percentile=self.eps_percentile,
            eps_rule=self.eps_rule,
            lambda_mode=LambdaMode.AUTO if self.lambda_ is None else LambdaMode.FIXED,
            fixed_lambda=0.0 if self.lambda_ is None else self.lambda_,
            min_cluster_size_for_split=self.min_cluster_size_for_split,
            triplet_mode=self.triplet_mode,
            icm_negative=self.icm_negative,
            batches_per_epoch=self.batches_per_epoch,
            eval_every=self.eval_every,
            seed=self.seed,
        )
        values.update(overrides)
        return TrainConfig(**values)

    def pbh_config(self) -> PbhConfig:
        return self.train_config().pbh_config()

    def synth_config(self, seed: Optional[int] = None) -> SynthConfig:
        return SynthConfig(
            num_ids=self.num_ids,
            cams=self.cams,
            samples_per_id_per_cam=self.samples_per_id_per_cam,
            D_part=self.D_part,
            sigma_id=self.sigma_id,
            alpha_cam=self.alpha_cam,
            twin_fraction=self.twin_fraction,
            twin_part=self.twin_part,
            noise_sigma=self.noise_sigma,
            seed=self.seed if seed is None else seed,
        )


def parse_config(text: str) -> RunConfig:
    """Parse `key = value` lines (`#` starts a comment) into a RunConfig

    Omitted keys keep their defaults.

    Raises:
        ParseError: malformed or duplicate line, with its line number
        UnknownKeyError: key that RunConfig does not define
        ConfigTypeError: value that cannot be converted for its key
    """
    known = RunConfig.known_keys()
    values: Dict[str, object] = {}
    raw_values: Dict[str, str] = {}
    lines: Dict[str, int] = {}

    for line_no, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ParseError(line_no, f"expected 'key = value', got {content!r}")
        key, _, value = (part.strip() for part in content.partition("="))
        if not key:
            raise ParseError(line_no, "missing key before '='")
        if not value:
            raise ParseError(line_no, f"missing value for key '{key}'")
        if key not in known:
            raise UnknownKeyError(key, line_no)
        if key in values:
            raise ParseError(line_no, f"duplicate key '{key}' (first on line {lines[key]})")

        lines[key] = line_no
        raw_values[key] = value
        values[key] = None if key in _AUTO_KEYS and value.lower() == AUTO else value

    try:
        config = RunConfig.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first.get("loc", ())
        key = str(loc[0]) if loc else "<root>"
        raise ConfigTypeError(key, raw_values.get(key), first.get("msg", "invalid value")) from e

    logger.debug("Config parsed", extra={"keys": sorted(values)})
    return config


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """RunConfig from a file, or all defaults when path is None"""
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)


__all__ = [
    "RunConfig",
    "parse_config",
    "load_config",
]
