"""INI-style run configuration.

Every key has a default, so an empty (or missing) file is a valid config.
Unknown sections or keys are rejected.

.. code-block:: ini

    [synth]      num_sequences T d_visual d_language latent_dim drift_scale
                 noise_scale seed map_seed
    [model]      d_proj d_out d_prompt d_emb heads init_seed
    [loss]       tau lambda1 lambda2 k mask_rate symmetric
    [train]      seed epochs batch_size learning_rate optimizer beta1 beta2
                 adam_eps ablation
    [eval]       seed
    [gradcheck]  seed d T batch_size epsilon tolerance
    [paths]      dataset checkpoint metrics
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import TsadpError
from .objectives import LossConfig
from .synthbench import SynthConfig
from .trainer import TrainConfig


class ConfigError(TsadpError, ValueError):
    """Malformed or unknown configuration entry."""


@dataclass(frozen=True)
class ModelConfig:
    d_proj: int = 16
    d_out: int = 16
    d_prompt: int = 16
    d_emb: int = 16
    heads: int = 1
    init_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0


@dataclass(frozen=True)
class GradcheckConfig:
    seed: int = 0
    d: int = 8
    T: int = 6
    batch_size: int = 2
    epsilon: float = 1e-6
    tolerance: float = 1e-5


@dataclass(frozen=True)
class PathConfig:
    dataset: str = "dataset.tsds"
    checkpoint: str = "model.tsdp"
    metrics: str = "metrics.jsonl"


@dataclass(frozen=True)
class CliConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, loss=self.loss)


_SECTIONS = {
    "synth": SynthConfig, "model": ModelConfig, "loss": LossConfig,
    "train": TrainConfig, "eval": EvalConfig, "gradcheck": GradcheckConfig,
    "paths": PathConfig,
}


def _convert(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def parse_config(text: str) -> CliConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (T)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        cls = _SECTIONS[name]
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls) if f.name != "loss"}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in [{name}]")
            values[key] = _convert(name, key, raw, getattr(defaults, key))
        try:
            sections[name] = cls(**values)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    cfg = CliConfig(**sections)
    try:
        cfg.train_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> CliConfig:
    if path is None:
        return CliConfig()
    return parse_config(Path(path).read_text())


def with_seed(cfg: CliConfig, section: str, seed: int) -> CliConfig:
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), seed=seed)})
