"""Architecture and optimization hyperparameters."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    K: int = 10
    channels: tuple[int, int] = (32, 64)
    d_h: int = 256
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 1
    seed: int = 0
    temporal_agg: str = "mean"        # mean | last
    response: str = "o"               # LSTM per-step response: o (output gate) | h (hidden state)
    precision: str = "float64"        # float64 | float32
    segments: int = 12
    scale_lo: float = 0.98
    scale_hi: float = 1.02
    use_attend: bool = True
    lambda_policy: str = "fixed"      # fixed | estimate (pooled graphs)
    grad_clip: float = 0.0            # 0 disables; global-norm clip
    lr_decay: float = 0.0             # 0 disables; lr / (1 + decay * epoch)
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if len(self.channels) != 2 or min(self.channels) < 1:
            raise ConfigError(f"channels must be two positive widths, got {self.channels}")
        if self.d_h < 1:
            raise ConfigError(f"d_h must be positive, got {self.d_h}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 0 or self.batch_size < 1 or self.segments < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and segments >= 1 are required")
        if self.temporal_agg not in ("mean", "last"):
            raise ConfigError(f"temporal_agg must be 'mean' or 'last', got {self.temporal_agg!r}")
        if self.response not in ("o", "h"):
            raise ConfigError(f"response must be 'o' or 'h', got {self.response!r}")
        if self.precision not in ("float64", "float32"):
            raise ConfigError(f"precision must be 'float64' or 'float32', got {self.precision!r}")
        if self.lambda_policy not in ("fixed", "estimate"):
            raise ConfigError(f"lambda_policy must be 'fixed' or 'estimate', got {self.lambda_policy!r}")
        if not self.scale_lo <= self.scale_hi:
            raise ConfigError("scale_lo must not exceed scale_hi")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.keys()}
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; valid keys: {', '.join(cls.keys())}")
        data = dict(data)
        if "channels" in data:
            data["channels"] = tuple(int(c) for c in data["channels"])
        return cls(**data)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: dict[str, str]) -> "TrainConfig":
        """Apply textual ``key=value`` overrides, coercing to the field types."""
        unknown = sorted(set(pairs) - set(self.keys()))
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}; valid keys: {', '.join(self.keys())}")
        changes = {k: _coerce(k, v, getattr(self, k)) for k, v in pairs.items()}
        return self.replace(**changes)


def _coerce(key, text, current):
    if not isinstance(text, str):
        return text
    text = text.strip()
    try:
        if isinstance(current, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            return tuple(int(p) for p in text.replace("(", "").replace(")", "").split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc
    return text


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> TrainConfig:
    cfg = TrainConfig()
    if path is not None:
        cfg = cfg.with_overrides(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
