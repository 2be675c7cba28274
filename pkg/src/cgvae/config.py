"""Run configuration: sectioned ``key = value`` files with unknown keys rejected."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

from .baselines import AutoGrainConfig, BaselineTrainConfig
from .datasets import ChainSpec
from .errors import ConfigError
from .model import LossWeights, ModelConfig
from .training import TrainConfig


@dataclass
class DataSection:
    pattern: str = "CCCCCCCCCC"
    frames: int = 2000
    noise: float = 0.5
    chiral_bias: float = 1.0
    tumble: bool = True
    seed: int = 0
    test_frames: int = 200


@dataclass
class MappingSection:
    mode: str = "autograin"        # autograin | segments | file
    N: int = 3
    weights: str = "uniform"
    path: str = ""
    epochs: int = 1500
    seed: int = 0


@dataclass
class ModelSection:
    F: int = 16
    K: int = 8
    enc_depth: int = 2
    prior_depth: int = 2
    dec_depth: int = 3
    fg_cutoff: float = 3.0
    cg_cutoff: float = 12.0
    pseudo_init: bool = True
    cross_terms: bool = True
    seed: int = 0


@dataclass
class TrainSection:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    patience: int = 15
    factor: float = 0.3
    min_lr: float = 1e-7
    val_fraction: float = 0.1
    seed: int = 0
    grad_clip: float = 0.0
    gamma: float = 25.0
    beta: float = 0.05


@dataclass
class BaselineSection:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    gamma: float = 5.0
    seed: int = 0


@dataclass
class EvaluateSection:
    samples: int = 32
    folds: int = 5
    seed: int = 0
    threads: int = 1


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    mapping: MappingSection = field(default_factory=MappingSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def __post_init__(self):
        validate(self)

    # -- conversions to the library configs
    def chain_spec(self):
        d = self.data
        return ChainSpec(pattern=d.pattern, frames=d.frames, noise=d.noise, seed=d.seed, chiral_bias=d.chiral_bias,
                         tumble=d.tumble)

    def model_config(self):
        return ModelConfig(**vars(self.model))

    def train_config(self):
        t = vars(self.train).copy()
        weights = LossWeights(t.pop("gamma"), t.pop("beta"))
        return TrainConfig(model=self.model_config(), weights=weights, **t)

    def baseline_config(self):
        return BaselineTrainConfig(**vars(self.baseline))

    def autograin_config(self):
        return AutoGrainConfig(epochs=self.mapping.epochs, seed=self.mapping.seed)


def validate(cfg: RunConfig):
    positive = [("data.frames", cfg.data.frames), ("mapping.N", cfg.mapping.N), ("model.F", cfg.model.F),
                ("model.K", cfg.model.K), ("train.batch_size", cfg.train.batch_size),
                ("evaluate.samples", cfg.evaluate.samples), ("evaluate.folds", cfg.evaluate.folds),
                ("evaluate.threads", cfg.evaluate.threads), ("baseline.batch_size", cfg.baseline.batch_size)]
    for name, value in positive:
        if value < 1:
            raise ConfigError(f"{name} must be positive, got {value}")
    if cfg.train.epochs < 0 or cfg.baseline.epochs < 0 or cfg.mapping.epochs < 0:
        raise ConfigError("epoch counts must be nonnegative")
    if not 0 < cfg.train.factor < 1:
        raise ConfigError("train.factor must lie in (0, 1)")
    if cfg.mapping.mode not in ("autograin", "segments", "file"):
        raise ConfigError(f"unknown mapping.mode {cfg.mapping.mode!r}")
    if cfg.mapping.mode == "file" and not cfg.mapping.path:
        raise ConfigError("mapping.mode = file needs mapping.path")
    if cfg.mapping.weights not in ("uniform", "mass"):
        raise ConfigError(f"unknown mapping.weights {cfg.mapping.weights!r}")
    if not 0 <= cfg.data.test_frames < cfg.data.frames:
        raise ConfigError("data.test_frames must be below data.frames")
    if min(cfg.model.fg_cutoff, cfg.model.cg_cutoff) <= 0:
        raise ConfigError("cutoffs must be positive")


def _convert(raw, typ, where):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {typ.__name__}") from None


def parse_config(text) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = {f.name: f.default_factory for f in fields(RunConfig)}
    values = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}]")
        proto = sections[name]()
        types = {f.name: type(getattr(proto, f.name)) for f in fields(proto)}
        kwargs = {}
        for key, raw in parser.items(name):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            kwargs[key] = _convert(raw, types[key], f"[{name}] {key}")
        values[name] = type(proto)(**kwargs)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        parser[f.name] = {k.name: _fmt(getattr(section, k.name)) for k in fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
