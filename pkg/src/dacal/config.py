"""Structured run configuration: one TOML file, dotted-path overrides.

Every hyperparameter is a key; unknown keys are rejected by name. Defaults
follow the published training setup where one exists (penalty weight 10,
decay 0.99, bound 0.05, cycle weight 10000, identity weight 1000, 20 epochs
per stage) and desk-scale choices elsewhere.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import tomli_w

from .adaswgan import PenaltyState
from .critic import CriticSpec
from .enhancer import EnhancerSpec
from .errors import ConfigurationError
from .image_ops import BlurKernel
from .objective import ObjectiveWeights
from .toy import ToyConfig

MODES = ("supervised", "weakly_supervised", "video")


@dataclass
class TrainConfig:
    mode: str = "supervised"
    stage: int = 1
    epochs_per_stage: int = 20
    batch_size: int = 4
    lr_generator: float = 1e-4
    lr_critic: float = 2e-4
    lr_theta: float = 0.0  # 0 -> same as lr_critic
    betas: list = field(default_factory=lambda: [0.9, 0.999])
    critic_iters_per_gen: int = 5
    alt_epochs: int = -1  # -1 -> one third of the stage-1 epochs
    max_steps: int = 0  # 0 -> no cap
    val_every: int = 50
    low_height: int = 32
    low_width: int = 64
    previous_checkpoint: str = ""  # checkpoint of the preceding stage (stages 2 and 3)
    init_checkpoint: str = ""

    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"trainer.mode must be one of {MODES}, got {self.mode!r}")
        if self.stage not in (1, 2, 3):
            raise ConfigurationError(f"trainer.stage must be 1, 2 or 3, got {self.stage}")
        if self.mode == "video" and self.stage != 1:
            raise ConfigurationError("video training runs at a single scale (trainer.stage must be 1)")
        if self.epochs_per_stage < 1:
            raise ConfigurationError("trainer.epochs_per_stage must be >= 1")
        if self.batch_size < 1 or self.critic_iters_per_gen < 1:
            raise ConfigurationError("trainer.batch_size and trainer.critic_iters_per_gen must be >= 1")
        if not (self.lr_generator > 0 and self.lr_critic > 0 and self.lr_theta >= 0):
            raise ConfigurationError("learning rates must be positive")

    @property
    def theta_lr(self) -> float:
        return self.lr_theta if self.lr_theta > 0 else self.lr_critic

    @property
    def alternation_epochs(self) -> int:
        return self.epochs_per_stage // 3 if self.alt_epochs < 0 else self.alt_epochs

    @property
    def low_size(self):
        return (self.low_height, self.low_width)

    @property
    def high_size(self):
        return (2 * self.low_height, 2 * self.low_width)


@dataclass
class PenaltyConfig:
    lam: float = 10.0
    eta: float = 0.99
    tau: float = 0.05
    lambda_min: float = 1e-3
    lambda_max: float = 1e4
    statistic: str = "hinge"

    def initial_state(self) -> PenaltyState:
        return PenaltyState(self.lam, 0.0, self.eta, self.tau, self.lambda_min, self.lambda_max)


@dataclass
class EnhancerConfig:
    depth: int = 4
    base_channels: int = 16
    beta: float = 1.0
    global_channels: int = 32
    head_channels: int = 16
    refine_channels: int = 16

    def spec(self, scale_level="low", temporal=False) -> EnhancerSpec:
        return EnhancerSpec(scale_level=scale_level, temporal=temporal, **dataclasses.asdict(self))


@dataclass
class CriticConfig:
    depth: int = 4
    base_channels: int = 16
    feature_dim: int = 64
    slices: int = 32
    window: int = 3

    def spec(self, scale_level="low", window=1) -> CriticSpec:
        kw = dataclasses.asdict(self)
        kw["window"] = window
        return CriticSpec(scale_level=scale_level, **kw)


@dataclass
class BlurConfig:
    sigma: float = 3.0
    radius: int = 9

    def kernel(self) -> BlurKernel:
        return BlurKernel(self.sigma, self.radius)


@dataclass
class DataConfig:
    """Either directories on disk or a built-in synthetic task."""

    train_dir: str = ""
    val_dir: str = ""
    synthetic: str = ""  # "", "identity", "gamma" or "tone"
    synthetic_count: int = 32
    synthetic_val_count: int = 8
    video_clip_length: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"


@dataclass
class Config:
    run: RunConfig = field(default_factory=RunConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    objective: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    enhancer: EnhancerConfig = field(default_factory=EnhancerConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    blur: BlurConfig = field(default_factory=BlurConfig)
    data: DataConfig = field(default_factory=DataConfig)
    toy: ToyConfig = field(default_factory=ToyConfig)

    def validate(self) -> "Config":
        self.trainer.validate()
        try:
            self.penalty.initial_state()
            self.critic.spec()
            self.enhancer.spec()
            self.blur.kernel()
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            section = getattr(self, f.name)
            out[f.name] = {sf.name: _plain(getattr(section, sf.name)) for sf in fields(section)}
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        cfg = cls()
        for section, values in data.items():
            if section not in {f.name for f in fields(cls)}:
                raise ConfigurationError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigurationError(f"config section {section!r} must be a table")
            for key, value in values.items():
                cfg.set(f"{section}.{key}", value)
        return cfg

    def set(self, dotted: str, value) -> None:
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ConfigurationError(f"config keys look like section.key, got {dotted!r}")
        section, key = parts
        if section not in {f.name for f in fields(self)}:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        obj = getattr(self, section)
        names = {f.name: f for f in fields(obj)}
        if key not in names:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        current = getattr(obj, key)
        try:
            value = _coerce(value, current)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {dotted!r}: {exc}") from exc
        kw = {f: getattr(obj, f) for f in names}
        kw[key] = value
        try:
            setattr(self, section, type(obj)(**kw))
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {dotted!r}: {exc}") from exc


def _plain(v):
    if isinstance(v, tuple):
        return list(v)
    if v is None:
        return ""
    return v


def _coerce(value, current):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise TypeError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float) or current is None:
        if isinstance(value, str) and current is None and value == "":
            return None
        if isinstance(value, bool):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if isinstance(current, (list, tuple)):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"expected a list, got {value!r}")
        return type(current)(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    return value


def parse_override(text: str):
    """``"section.key=value"`` -> ``(key, value)``; the value uses TOML syntax."""
    if "=" not in text:
        raise ConfigurationError(f"override must look like section.key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def load_config(path=None, overrides=(), env=None) -> Config:
    """Read a TOML file (optional), apply ``section.key=value`` overrides.

    ``DACAL_SEED`` in the environment replaces ``run.seed``.
    """
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    cfg = Config.from_dict(data)
    for item in overrides:
        cfg.set(*parse_override(item))
    env = os.environ if env is None else env
    if env.get("DACAL_SEED"):
        cfg.set("run.seed", int(env["DACAL_SEED"]))
    return cfg.validate()
