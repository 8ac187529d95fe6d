"""Run configuration: an INI file with a fixed set of sections and keys.

Unknown sections or keys are rejected. Keys left out take the defaults below,
and the fully resolved configuration is written into every checkpoint.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

DATASETS = ("mnist", "fashion-mnist", "cifar10")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    name: str = "mnist"
    path: str = "train-images-idx3-ubyte"
    limit: int = 0  # 0 keeps every image


@dataclass
class RunSection:
    seed: int = 0
    out: str = "out"


@dataclass
class AutoencoderConfig:
    epochs: int = 3
    batch: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    decay: float = 0.999
    l2: float = 1e-4
    dropout: float = 0.5
    leaky_slope: float = 0.01
    channels: int = 128


@dataclass
class CapsuleConfig:
    capsule_dim: int = 8
    capsules: int = 20
    dim: int = 16
    routing_iterations: int = 3
    epochs: int = 3
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 0.999
    l2: float = 1e-4
    init_scale: float = 0.01


@dataclass
class GenerateConfig:
    samples_per_capsule: int = 4


@dataclass
class DiagramConfig:
    sample_index: int = 0
    edge_threshold: float = 0.01


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSection = field(default_factory=RunSection)
    autoencoder: AutoencoderConfig = field(default_factory=AutoencoderConfig)
    capsules: CapsuleConfig = field(default_factory=CapsuleConfig)
    generate: GenerateConfig = field(default_factory=GenerateConfig)
    diagram: DiagramConfig = field(default_factory=DiagramConfig)

    def validate(self) -> "RunConfig":
        if self.data.name not in DATASETS:
            raise ConfigError(f"data.name must be one of {DATASETS}, got {self.data.name!r}")
        if self.data.limit < 0:
            raise ConfigError("data.limit must be nonnegative")
        if not 0 <= self.run.seed < 2**64:
            raise ConfigError("run.seed must be an unsigned 64-bit integer")
        for sec_name in ("autoencoder", "capsules"):
            sec = getattr(self, sec_name)
            for key in ("epochs", "batch"):
                if getattr(sec, key) < 1:
                    raise ConfigError(f"{sec_name}.{key} must be at least 1")
            if sec.lr <= 0:
                raise ConfigError(f"{sec_name}.lr must be positive")
            if not 0 <= sec.momentum < 1:
                raise ConfigError(f"{sec_name}.momentum must lie in [0, 1)")
            if not 0 < sec.decay <= 1:
                raise ConfigError(f"{sec_name}.decay must lie in (0, 1]")
            if sec.l2 < 0:
                raise ConfigError(f"{sec_name}.l2 must be nonnegative")
        ae = self.autoencoder
        if not 0 <= ae.dropout < 1:
            raise ConfigError("autoencoder.dropout must lie in [0, 1)")
        if not 0 < ae.leaky_slope < 1:
            raise ConfigError("autoencoder.leaky_slope must lie in (0, 1)")
        caps = self.capsules
        for key in ("capsule_dim", "capsules", "dim", "routing_iterations"):
            if getattr(caps, key) < 1:
                raise ConfigError(f"capsules.{key} must be at least 1")
        if caps.init_scale <= 0:
            raise ConfigError("capsules.init_scale must be positive")
        if ae.channels < 1 or ae.channels % caps.capsule_dim:
            raise ConfigError("autoencoder.channels must be a positive multiple of capsules.capsule_dim")
        if self.generate.samples_per_capsule < 1:
            raise ConfigError("generate.samples_per_capsule must be at least 1")
        if self.diagram.sample_index < 0:
            raise ConfigError("diagram.sample_index must be nonnegative")
        return self

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"[{f.name}]")
            section = getattr(self, f.name)
            for sf in dataclasses.fields(section):
                lines.append(f"{sf.name} = {_format(getattr(section, sf.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def _format(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(raw: str, kind, where: str):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = RunConfig()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        section = getattr(cfg, name)
        kinds = {sf.name: type(getattr(section, sf.name)) for sf in dataclasses.fields(section)}
        for key, raw in parser.items(name):
            if key not in kinds:
                raise ConfigError(f"unknown key {name}.{key}")
            setattr(section, key, _coerce(raw.strip(), kinds[key], f"{name}.{key}"))
    return cfg.validate()


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
