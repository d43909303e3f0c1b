"""
Configuration loader for VI-Net experiments
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from common.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = 'configs/app.yaml'

# Channels carried by each known input stream
STREAM_CHANNELS = {'radial': 1, 'rgb': 3}

PROFILES: Dict[str, Dict[str, Any]] = {
    'tiny': {'stage_widths': [16, 32, 64, 128], 'channels': 64, 'vp_channels': 128},
    'resnet18': {'stage_widths': [64, 128, 256, 512], 'channels': 128, 'vp_channels': 256},
}


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    profile: Literal['tiny', 'resnet18'] = 'tiny'
    stage_widths: Optional[List[int]] = None
    channels: Optional[int] = None
    vp_channels: Optional[int] = None
    input_height: int = 64
    input_width: int = 64
    streams: List[str] = ['radial', 'rgb']
    k_neighbors: int = 3
    i_branch_depth: int = 3
    v_branch_mode: Literal['two_branch', 'one_branch', 'regression'] = 'two_branch'
    rotation_head: Literal['vi', 'direct'] = 'vi'
    feature_transform: bool = True
    spherical_padding: bool = True
    symmetric: bool = True
    fpn_smoothing: bool = True
    dtype: Literal['float64', 'float32'] = 'float64'

    @model_validator(mode='after')
    def _apply_profile(self) -> 'NetworkConfig':
        defaults = PROFILES[self.profile]
        for key, value in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, list(value) if isinstance(value, list) else value)
        if not self.stage_widths or any(w < 1 for w in self.stage_widths):
            raise ValueError("stage_widths must be a non-empty list of positive widths")
        if self.channels < 1 or self.vp_channels < 1:
            raise ValueError("channels and vp_channels must be positive")
        if self.k_neighbors < 1 or self.i_branch_depth < 1:
            raise ValueError("k_neighbors and i_branch_depth must be positive")
        # stem halves once, then every stage after the first halves again
        factor = 2 ** len(self.stage_widths)
        for name, size in (('input_height', self.input_height), ('input_width', self.input_width)):
            if size % factor or size // factor < 1:
                raise ValueError(f"{name}={size} must be divisible by {factor} for {len(self.stage_widths)} stages")
        if (self.input_width // factor) % 2:
            raise ValueError(f"input_width={self.input_width} leaves an odd azimuth size at the deepest stage")
        if self.rotation_head == 'vi':
            out = self.input_height // 2
            if out % (2 ** self.i_branch_depth):
                raise ValueError(f"Feature map of {out} rows cannot take {self.i_branch_depth} stride-2 blocks")
        return self

    @field_validator('streams')
    @classmethod
    def _known_streams(cls, streams: List[str]) -> List[str]:
        if not streams:
            raise ValueError("at least one input stream is required")
        unknown = [s for s in streams if s not in STREAM_CHANNELS]
        if unknown:
            raise ValueError(f"unknown streams {unknown}; known: {sorted(STREAM_CHANNELS)}")
        if len(set(streams)) != len(streams):
            raise ValueError("streams must not repeat")
        return streams

    @property
    def output_resolution(self):
        return self.input_height // 2, self.input_width // 2

    @property
    def stream_channels(self) -> List[int]:
        return [STREAM_CHANNELS[s] for s in self.streams]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    iterations: int = 20000
    batch_size: int = 16
    learning_rate: float = 0.001
    schedule: Literal['cosine'] = 'cosine'
    lambda_vp: float = 100.0
    focal_alpha: float = 0.5
    focal_gamma: float = 2.0
    seed: int = 0
    train_count: int = 2000
    held_out_count: int = 200
    eval_interval: int = 1000
    log_interval: int = 50

    @model_validator(mode='after')
    def _positive(self) -> 'TrainConfig':
        for name in ('iterations', 'batch_size', 'train_count', 'eval_interval', 'log_interval'):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or self.lambda_vp < 0:
            raise ValueError("learning_rate and lambda_vp must be >= 0")
        if not 0 < self.focal_alpha <= 1 or self.focal_gamma < 0:
            raise ValueError("focal_alpha must be in (0, 1] and focal_gamma >= 0")
        if self.held_out_count < 0:
            raise ValueError("held_out_count must be >= 0")
        return self


class LoggingConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    level: str = 'INFO'
    jsonl: bool = True
    max_bytes: int = 10_000_000
    backup_count: int = 5


class RuntimeSettings(BaseSettings):
    """Process-level settings taken from the environment (VINET_*)"""
    model_config = SettingsConfigDict(env_prefix='VINET_', extra='ignore')

    log_dir: str = 'logs'
    log_level: Optional[str] = None
    threads: int = 1
    config_path: str = DEFAULT_CONFIG_PATH


def _validate(model, section: str, values: Dict[str, Any]):
    try:
        return model(**(values or {}))
    except ValidationError as e:
        raise ConfigError(f"Invalid '{section}' section: {e.errors(include_url=False)}") from e
    except TypeError as e:
        raise ConfigError(f"Section '{section}' must be a mapping") from e


class Config:
    """Configuration class that loads from YAML"""

    SECTIONS = ('network', 'train', 'logging')

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Dict[str, Any]]] = None):
        self.config_path = config_path
        raw = self._load_config(config_path) if config_path else {}
        for section, values in (overrides or {}).items():
            raw[section] = {**(raw.get(section) or {}), **values}
        unknown = sorted(set(raw) - set(self.SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown config sections {unknown}")
        self._config = raw
        self._network = _validate(NetworkConfig, 'network', raw.get('network'))
        self._train = _validate(TrainConfig, 'train', raw.get('train'))
        self._logging = _validate(LoggingConfig, 'logging', raw.get('logging'))

    @staticmethod
    def _load_config(config_path: str) -> Dict[str, Any]:
        """Load configuration from YAML file"""
        path = Path(config_path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {config_path}")
        try:
            with open(path, 'r') as f:
                config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {config_path} is not valid YAML: {e}") from e
        if config is None:
            return {}
        if not isinstance(config, dict):
            raise ConfigError(f"Config file {config_path} must hold a mapping of sections")
        logger.debug(f"Loaded config from {config_path}")
        return config

    def get(self, key: str, default: Any = None) -> Any:
        return self._config.get(key, default)

    @property
    def network(self) -> NetworkConfig:
        return self._network

    @property
    def train(self) -> TrainConfig:
        return self._train

    @property
    def logging(self) -> LoggingConfig:
        return self._logging

    def with_seed(self, seed: Optional[int]) -> 'Config':
        if seed is not None:
            self._train.seed = int(seed)
        return self
