"""Run configuration: typed sections stored as one YAML file."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .attacks import AttackConfig
from .evaluation import ATTACK_SUITE, EVAL_TAMPERS, ISP_MODES
from .imaging import PATTERNS, IspParams
from .mpfnet import MpfConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass
class DataConfig:
    n_raws: int = 64
    size: int = 128
    seed: int = 1000
    pattern: str = "RGGB"
    n_test: int = 16
    test_seed: int = 2000

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.size % 16 or self.size <= 0:
            raise ValueError(f"size must be a positive multiple of 16, got {self.size}")
        if self.n_raws < 1 or self.n_test < 1:
            raise ValueError("n_raws and n_test must be positive")


@dataclass
class IspConfig:
    wb_gains: tuple = IspParams.wb_gains
    ccm: tuple = IspParams.ccm
    gamma: str = "srgb"
    gamma_exponent: float = 2.4
    pretrain_steps: int = 500
    pretrain_lr: float = 1e-2

    def __post_init__(self):
        p = self.params()  # validates and normalizes
        self.wb_gains, self.ccm = p.wb_gains, p.ccm
        if self.pretrain_steps < 0 or not self.pretrain_lr > 0:
            raise ValueError("pretrain_steps must be >= 0 and pretrain_lr > 0")

    def params(self) -> IspParams:
        return IspParams(self.wb_gains, self.ccm, self.gamma, self.gamma_exponent)


@dataclass
class DetectorConfig:
    architecture_id: str = "unet"
    base: int = 32
    stages: int = 4

    def __post_init__(self):
        if self.base < 8 or self.base % 8 or self.stages < 2:
            raise ValueError("detector base must be a positive multiple of 8 and stages >= 2")


@dataclass
class EvalConfig:
    attacks: tuple = tuple(ATTACK_SUITE)
    tampers: tuple = EVAL_TAMPERS
    isp: str = "conventional"
    area_range: tuple = (0.05, 0.3)
    seed: int = 0

    def __post_init__(self):
        self.attacks, self.tampers = tuple(self.attacks), tuple(self.tampers)
        self.area_range = tuple(float(v) for v in self.area_range)
        if set(self.attacks) - set(ATTACK_SUITE):
            raise ValueError(f"unknown attacks; choose from {list(ATTACK_SUITE)}")
        if set(self.tampers) - set(EVAL_TAMPERS + ("coincident_splice",)):
            raise ValueError(f"unknown tamper kinds; choose from {EVAL_TAMPERS}")
        if self.isp not in ISP_MODES:
            raise ValueError(f"isp must be one of {ISP_MODES}")


SECTIONS = {"data": DataConfig, "isp": IspConfig, "mpf": MpfConfig, "detector": DetectorConfig,
            "attack": AttackConfig, "train": TrainConfig, "eval": EvalConfig}


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    isp: IspConfig = field(default_factory=IspConfig)
    mpf: MpfConfig = field(default_factory=MpfConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, raw: dict | None) -> "RunConfig":
        raw = dict(raw or {})
        unknown = set(raw) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kwargs = {}
        if "seed" in raw:
            if not isinstance(raw["seed"], int):
                raise ConfigError(f"seed must be an integer, got {raw['seed']!r}")
            kwargs["seed"] = raw["seed"]
        for name, typ in SECTIONS.items():
            section = raw.get(name)
            section = {} if section is None else section
            if not isinstance(section, dict):
                raise ConfigError(f"section [{name}] must be a mapping")
            allowed = {f.name for f in fields(typ)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}; allowed: {sorted(allowed)}")
            try:
                kwargs[name] = typ(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}] {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in SECTIONS:
            out[name] = _plain(asdict(getattr(self, name)))
        return out


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at the top level")
    return RunConfig.from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg))
    return path
