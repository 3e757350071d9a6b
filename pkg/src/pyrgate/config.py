"""
Run configuration: a flat TOML file of typed scalars and arrays.
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import toml

from pyrgate.errors import ConfigError
from pyrgate.gate import GateMode, Placement
from pyrgate.isg import SAMPLING_STRIDES
from pyrgate.pyramids import ConnectorTopology


@dataclass
class RunConfig:
    connector: str = "dsic"
    isg: bool = True
    isg_mode: str = "rectified_tanh"
    csg_mode: str = "rectified_tanh"
    placement: str = "signal"
    sampling_stride: int = 1
    fs_enabled: bool = True
    d: int = 32
    ccu_hidden: int = 32
    image_size: int = 64
    channels: list[int] = field(default_factory=lambda: [8, 16, 32, 64])
    blocks: list[int] = field(default_factory=lambda: [3, 4, 4, 3])
    seed: int = 1
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    steps: int = 2000
    batch_size: int = 4
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.1
    lr_milestones: list[float] = field(default_factory=lambda: [2 / 3, 8 / 9])
    log_every: int = 10
    record_every: int = 100
    n_val: int = 100
    blob_count: list[int] = field(default_factory=lambda: [1, 4])
    gate_init_scale: float = 0.1
    head_prior: float = 0.01
    fpn_smooth: bool = True
    cascade_up: bool = False
    workers: int = 1
    out_dir: str = "runs/default"

    def __post_init__(self) -> None:
        self.validate()


    def validate(self) -> None:
        """
        Raise a ConfigError describing the first invalid field or combination.
        """
        topology = ConnectorTopology(self.connector, "sum", self.d)
        isg_mode = GateMode.parse(self.isg_mode)
        csg_mode = GateMode.parse(self.csg_mode)
        placement = Placement.parse(self.placement)
        if placement is Placement.OUTER:
            if self.isg and isg_mode is GateMode.SOFTMAX_GROUP:
                raise ConfigError("outer placement cannot be combined with isg_mode softmax_group")
            if topology.gated and csg_mode is GateMode.SOFTMAX_GROUP:
                raise ConfigError("outer placement cannot be combined with csg_mode softmax_group")
        if self.sampling_stride not in SAMPLING_STRIDES:
            raise ConfigError(f"sampling_stride must be one of {SAMPLING_STRIDES}, got {self.sampling_stride}")
        if len(self.channels) != 4 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must list 4 positive widths, got {self.channels}")
        if len(self.blocks) != 4 or any(not 1 <= n <= 4 for n in self.blocks):
            raise ConfigError(f"blocks must list 4 counts in 1..4, got {self.blocks}")
        size = self.image_size
        if size < 32 or size & (size - 1):
            raise ConfigError(f"image_size must be a power of two >= 32, got {size}")
        if self.ccu_hidden < 1:
            raise ConfigError(f"ccu_hidden must be positive, got {self.ccu_hidden}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.steps < 0 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("steps must be >= 0, batch_size and workers >= 1")
        if self.log_every < 1 or self.record_every < 1 or self.n_val < 0:
            raise ConfigError("log_every and record_every must be >= 1, n_val >= 0")
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.weight_decay < 0 or self.lr_decay <= 0:
            raise ConfigError("need lr > 0, 0 <= momentum < 1, weight_decay >= 0, lr_decay > 0")
        if any(not 0 < m <= 1 for m in self.lr_milestones):
            raise ConfigError(f"lr_milestones are fractions of the run in (0, 1], got {self.lr_milestones}")
        if len(self.blob_count) != 2 or not 0 <= self.blob_count[0] <= self.blob_count[1]:
            raise ConfigError(f"blob_count must be [lo, hi] with 0 <= lo <= hi, got {self.blob_count}")
        if self.gate_init_scale < 0:
            raise ConfigError(f"gate_init_scale must be >= 0, got {self.gate_init_scale}")
        if not 0 < self.head_prior < 1:
            raise ConfigError(f"head_prior must lie in (0, 1), got {self.head_prior}")


    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_DEFAULTS = RunConfig()


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if not isinstance(value, list):
        raise ConfigError(f"{key} must be an array, got {value!r}")
    return [_coerce(f"{key}[{i}]", v, default[0]) for i, v in enumerate(value)]


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    """
    Build a validated RunConfig from flat key/value pairs; missing keys take
    their defaults.
    """
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    values = {key: _coerce(key, value, getattr(_DEFAULTS, key)) for key, value in data.items()}
    return RunConfig(**values)


def parse_config(text: str) -> RunConfig:
    """
    Raises
    ------
    toml.TomlDecodeError
        If `text` is not valid TOML.
    ConfigError
        If it is valid TOML but not a valid configuration.
    """
    return config_from_dict(toml.loads(text))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise OSError(f"cannot decode {path} as UTF-8: {e}") from e
    return parse_config(text)


def dump_config(config: RunConfig) -> str:
    return toml.dumps(dataclasses.asdict(config))
