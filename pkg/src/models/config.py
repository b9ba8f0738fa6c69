"""
Run configuration for the Beamsight workbench.

A run is described by one JSON file whose sections map onto the pydantic
models below. Values are merged as defaults < file < environment
(``BEAMSIGHT_<SECTION>__<FIELD>``, ``.env`` honored) < command-line overrides.
"""

import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from models.channel import ArrayGeometry, SubcarrierGrid
from models.errors import ConfigError
from models.scene import Trajectory

ENV_PREFIX = "BEAMSIGHT_"
POSITION_VOCAB = "Position: 0123456789.,-"


class ModelKind(str, Enum):
    """Architectures the trainer can build."""
    MLM_BP = "mlm-bp"
    DNN_POS = "dnn-pos"
    CNN_VIS = "cnn-vis"
    FUSION = "fusion"


class ScenePreset(str, Enum):
    URBAN = "urban"
    EMPTY = "empty"
    BLOCKAGE = "blockage"


class SceneConfig(BaseModel):
    """Parametric urban layout."""
    length: float = Field(200.0, gt=0)
    width: float = Field(200.0, gt=0)
    n_buildings: int = Field(4, ge=0)  # building complexes
    n_roads: int = Field(8, ge=1)
    road_width: float = Field(12.0, gt=0)
    boxes_per_building: int = Field(2, ge=1)
    building_height: Tuple[float, float] = (10.0, 40.0)
    bs_xy: Optional[Tuple[float, float]] = None
    bs_height: float = Field(6.0, gt=0)
    ms_height: float = Field(1.5, gt=0)
    reflection_loss: float = Field(0.5, ge=0, le=1)
    ground_reflection: bool = False
    max_paths: int = Field(25, ge=1)
    phase_jitter: float = Field(0.5, ge=0)

    @field_validator("building_height")
    @classmethod
    def _ordered_heights(cls, value):
        low, high = value
        if low <= 0 or high < low:
            raise ValueError(f"building_height must satisfy 0 < low <= high, got {value}")
        return value


class ArrayConfig(BaseModel):
    n_h: int = Field(8, ge=1)
    n_v: int = Field(8, ge=1)
    spacing: float = Field(0.5, gt=0)
    oversampling_h: int = Field(1, ge=1)
    oversampling_v: int = Field(1, ge=1)

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_h, self.n_v, self.spacing)

    @property
    def codebook_size(self) -> int:
        return self.n_h * self.oversampling_h * self.n_v * self.oversampling_v


class GridConfig(BaseModel):
    n_subcarriers: int = Field(16, ge=1)
    center_frequency: float = Field(28e9, gt=0)
    spacing: float = Field(120e3, gt=0)

    def grid(self) -> SubcarrierGrid:
        return SubcarrierGrid(self.n_subcarriers, self.center_frequency, self.spacing)


class RenderConfig(BaseModel):
    width: int = Field(32, ge=1)
    height: int = Field(32, ge=1)
    fov_deg: float = Field(90.0, gt=0, lt=180)
    max_range: float = Field(100.0, gt=0)


class TrajectoryConfig(BaseModel):
    lane: int = Field(0, ge=0)
    speed: float = Field(10.0, gt=0)
    duration: float = Field(20.0, gt=0)
    start_offset: float = 0.0

    def trajectory(self) -> Trajectory:
        return Trajectory(self.lane, self.speed, self.duration, self.start_offset)


def _default_trajectories() -> List[TrajectoryConfig]:
    # Three vehicles on different roads at different speeds.
    return [
        TrajectoryConfig(lane=0, speed=8.0, duration=20.0),
        TrajectoryConfig(lane=3, speed=12.0, duration=20.0),
        TrajectoryConfig(lane=5, speed=16.0, duration=20.0),
    ]


class DataConfig(BaseModel):
    seed: int = 0
    sample_interval: float = Field(0.1, gt=0)
    trajectories: List[TrajectoryConfig] = Field(default_factory=_default_trajectories)
    ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)
    max_samples: Optional[int] = Field(None, ge=1)

    @field_validator("ratios")
    @classmethod
    def _ratios_sum_to_one(cls, value):
        if any(r < 0 for r in value) or abs(sum(value) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to 1, got {value}")
        return value


class ModelConfig(BaseModel):
    """Architecture hyperparameters; desk-scale defaults."""
    kind: ModelKind = ModelKind.MLM_BP
    d_m: int = Field(64, ge=2)
    d_v: int = Field(64, ge=2)
    n_heads: int = Field(4, ge=1)
    n_encoder_blocks: int = Field(2, ge=0)
    n_decoder_blocks: int = Field(2, ge=0)
    encoder_mlp_ratio: int = Field(2, ge=1)
    decoder_ffn_ratio: int = Field(2, ge=1)
    L_p: int = Field(32, ge=1)
    patch_size: int = Field(8, ge=1)
    lora_rank: int = Field(8, ge=1)
    lora_alpha: float = Field(32.0, gt=0)
    rope_base: float = Field(10000.0, gt=0)
    scale_by_model_dim: bool = False  # literal sqrt(d_m) attention scaling
    vocab: str = POSITION_VOCAB
    codebook_size: int = Field(64, ge=1)
    baseline_width: int = Field(128, ge=1)
    cnn_channels: Tuple[int, int, int] = (16, 32, 64)
    dropout: float = Field(0.1, ge=0, lt=1)
    init_seed: int = 0

    @model_validator(mode="after")
    def _heads_divide_width(self):
        if self.d_m % self.n_heads or self.d_v % self.n_heads:
            raise ValueError(f"d_m={self.d_m} and d_v={self.d_v} must be divisible by n_heads={self.n_heads}")
        if (self.d_m // self.n_heads) % 2:
            raise ValueError("decoder head dimension must be even for rotary embeddings")
        return self


class TrainConfig(BaseModel):
    batch_size: int = Field(10, ge=1)
    learning_rate: float = Field(1e-4, ge=0)
    epochs: int = Field(30, ge=0)
    seed: int = 0
    few_shot_ratio: Optional[float] = Field(None, gt=0, le=1)
    warm_start_epochs: int = Field(2, ge=0)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class RunConfig(BaseModel):
    """Everything needed to reproduce one run."""
    scene: SceneConfig = Field(default_factory=SceneConfig)
    array: ArrayConfig = Field(default_factory=ArrayConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    render: RenderConfig = Field(default_factory=RenderConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def _codebook_matches_array(self):
        self.model.codebook_size = self.array.codebook_size
        return self

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


SCENE_PRESETS: Dict[ScenePreset, Dict[str, Any]] = {
    ScenePreset.URBAN: {},
    ScenePreset.EMPTY: {"n_buildings": 0},
    ScenePreset.BLOCKAGE: {"n_buildings": 14, "boxes_per_building": 3, "building_height": (15.0, 45.0)},
}


def _set_path(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Collect ``BEAMSIGHT_<SECTION>__<FIELD>=value`` variables as dotted overrides."""
    if environ is None:
        load_dotenv()
        environ = dict(os.environ)
    overrides = {}
    for key, raw in environ.items():
        if key.startswith(ENV_PREFIX) and "__" in key:
            dotted = key[len(ENV_PREFIX):].lower().replace("__", ".")
            overrides[dotted] = _parse_value(raw)
    return overrides


def parse_set_args(pairs: List[str]) -> Dict[str, Any]:
    """Turn ``section.field=value`` strings into an override mapping."""
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' is not of the form section.field=value")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = _parse_value(raw.strip())
    return overrides


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    preset: Optional[str] = None,
    use_env: bool = True,
) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        path: JSON config file (defaults only when None)
        overrides: Dotted-key overrides applied last
        preset: Scene preset name applied on top of the file
        use_env: Whether to read ``BEAMSIGHT_*`` environment overrides

    Returns:
        Validated RunConfig
    """
    tree: Dict[str, Any] = {}
    if path is not None:
        try:
            tree = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e

    if preset is not None:
        try:
            preset_values = SCENE_PRESETS[ScenePreset(preset)]
        except ValueError as e:
            raise ConfigError(f"unknown scene preset '{preset}'") from e
        for key, value in preset_values.items():
            _set_path(tree, f"scene.{key}", value)

    merged = dict(env_overrides()) if use_env else {}
    merged.update(overrides or {})
    for dotted, value in merged.items():
        _set_path(tree, dotted, value)

    try:
        return RunConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration:\n{e}") from e
