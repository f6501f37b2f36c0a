"""Pipeline configuration and its flat ``key = value`` file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

MODES = ("propagation-only", "weighted")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    epsilon: float = 5.0
    local_length: int = 10       # clip length of feature propagation
    clip_length: int = 20        # inference clip length; clips overlap by half
    num_blocks: int = 8
    window: tuple = (5, 9)
    kv_stride: int = 2
    mode: str = "propagation-only"
    max_passes: int = 4
    sweep_order: str = "backward-first"
    seed: int = 0
    channels: int = 64
    token_channels: int = 128
    heads: int = 4
    flow_channels: int = 32
    split_kernel: tuple = (7, 7)
    split_stride: tuple = (3, 3)
    expand: bool = True
    global_tokens: bool = True
    mask_mode: str = "any"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sweep_order not in ("backward-first", "forward-first"):
            raise ConfigError(f"unknown sweep_order {self.sweep_order!r}")
        if self.mask_mode not in ("any", "nearest"):
            raise ConfigError(f"unknown mask_mode {self.mask_mode!r}")
        positive = ("epsilon", "local_length", "clip_length", "num_blocks", "kv_stride",
                    "max_passes", "channels", "token_channels", "heads", "flow_channels")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("window", "split_kernel", "split_stride"):
            value = getattr(self, name)
            if len(value) != 2 or min(value) <= 0:
                raise ConfigError(f"{name} must be two positive integers")
        if self.local_length < 2 or self.clip_length < 2:
            raise ConfigError("clip lengths must be at least 2")
        if self.token_channels % self.heads:
            raise ConfigError("token_channels must be divisible by heads")
        if self.channels % 2:
            raise ConfigError("channels must be even")

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = "x".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def _parse_value(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = raw.replace(",", "x").split("x")
            return tuple(int(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, base: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) over ``base``."""
    defaults = {f.name: getattr(base, f.name) for f in fields(base)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, defaults[key])
    return replace(base, **values)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
