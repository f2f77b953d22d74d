"""Run configuration: ``key = value`` text files with explicit defaults.

Lines are ``key = value``; ``#`` starts a comment. Every key of
:class:`RunConfig` may appear; unknown keys are rejected. The default file is
taken from ``$DFAST_CONFIG`` when set; command-line flags override both.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

from .errors import ContractError
from .fusion import MODALITIES, STRATEGIES

CONFIG_ENV = "DFAST_CONFIG"


@dataclass
class RunConfig:
    # data
    subjects: int = 40
    delta: float = 0.6
    sigma: float = 1.0
    seed: int = 0
    # model
    modalities: tuple = MODALITIES
    fusion: str = "attention"
    face_preset: str = "base"
    voice_preset: str = "tiny"
    pose_preset: str = "default"
    dropout: float = 0.1
    freeze_encoders: bool = False
    # optimization
    epochs: int = 300
    lr: float = 1e-4
    batch_size: int = 8
    # proxy pretraining
    pretrain: str = "none"
    pretrain_epochs: int = 20
    pretrain_lr: float = 1e-4
    pretrain_subjects: int = 16
    # ablation
    seeds: tuple = (0, 1, 2, 3, 4)

    def validate(self):
        if not self.modalities or any(m not in MODALITIES for m in self.modalities):
            raise ContractError(f"modalities must be a non-empty subset of {MODALITIES}")
        if self.fusion not in STRATEGIES:
            raise ContractError(f"fusion must be one of {STRATEGIES}")
        if self.pretrain not in ("none", "proxy"):
            raise ContractError("pretrain must be 'none' or 'proxy'")
        if not self.seeds:
            raise ContractError("seeds must not be empty")
        if self.subjects < 3:
            raise ContractError("subjects must be at least 3")
        return self

    def lines(self):
        """Resolved configuration as sorted ``key = value`` lines."""
        return [f"{k} = {format_value(v)}" for k, v in sorted(asdict(self).items())]


_FIELDS = {f.name: f for f in fields(RunConfig)}
_DEFAULTS = RunConfig()


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_value(key, text):
    """Convert ``text`` to the type of the ``key`` default."""
    if key not in _FIELDS:
        raise ContractError(f"unknown config key {key!r}")
    default = getattr(_DEFAULTS, key)
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            return tuple(int(s) for s in items) if key == "seeds" else tuple(items)
    except ValueError:
        raise ContractError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the config file (explicit or ``$DFAST_CONFIG``), then overrides."""
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        with open(path) as f:
            for k, v in parse_config_text(f.read()).items():
                setattr(cfg, k, v)
    for k, v in (overrides or {}).items():
        if k not in _FIELDS:
            raise ContractError(f"unknown config key {k!r}")
        setattr(cfg, k, v)
    return cfg.validate()


def write_config(path, cfg: RunConfig):
    with open(path, "w") as f:
        f.write("\n".join(cfg.lines()) + "\n")
