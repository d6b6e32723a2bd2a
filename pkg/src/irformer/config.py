"""Model configuration and the plain-text key=value config format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .exceptions import ConfigError


@dataclass
class ModelConfig:
    base_channels: int = 8
    efm_scales: list[int] = field(default_factory=lambda: [2, 4, 8])
    num_transformer_blocks: int = 1
    num_attention_heads: int = 2
    use_epa: bool = True
    use_dfa: bool = True
    input_channels: int = 3
    output_channels: int = 1
    ffn_expansion: float = 2.0

    def validate(self, resolution: tuple[int, int] | int | None = None) -> "ModelConfig":
        c = self.base_channels
        if c < 4 or c % 4:
            raise ConfigError(f"base_channels must be a positive multiple of 4, got {c}")
        if not self.efm_scales or any(s < 1 for s in self.efm_scales):
            raise ConfigError(f"efm_scales must be positive, got {self.efm_scales}")
        if self.num_transformer_blocks < 0:
            raise ConfigError("num_transformer_blocks must be >= 0")
        if self.num_attention_heads < 1 or c % self.num_attention_heads:
            raise ConfigError(
                f"num_attention_heads={self.num_attention_heads} does not divide base_channels={c}")
        if self.input_channels != 3 or self.output_channels != 1:
            raise ConfigError("the model maps 3-channel visible input to 1-channel infrared output")
        if self.ffn_expansion <= 0:
            raise ConfigError("ffn_expansion must be positive")
        if resolution is not None:
            h, w = (resolution, resolution) if isinstance(resolution, int) else resolution
            for s in self.efm_scales:
                if h % s or w % s:
                    raise ConfigError(f"EFM scale {s} does not divide resolution {h}x{w}")
        return self

    @property
    def ffn_hidden(self) -> int:
        return math.ceil(self.ffn_expansion * self.base_channels)

    @property
    def attn_reduce(self) -> int:
        return max(self.base_channels // 2, 1)

    def to_dict(self) -> dict[str, str]:
        return {f"model.{k}": format_value(v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            key = f"model.{f.name}"
            if key in values:
                kwargs[f.name] = parse_value(values[key], type(getattr(cls(), f.name)))
        return cls(**kwargs)


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(text: str, kind: type):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is list:
        try:
            return [int(p) for p in text.replace(" ", "").split(",") if p]
        except ValueError as exc:
            raise ConfigError(f"not an integer list: {text!r}") from exc
    if kind is int:
        try:
            return int(text)
        except ValueError as exc:
            raise ConfigError(f"not an integer: {text!r}") from exc
    if kind is float:
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"not a number: {text!r}") from exc
    return text


# ---------------------------------------------------------------------------
# run configuration (cli-facing)
# ---------------------------------------------------------------------------

_MODEL_DEFAULTS = ModelConfig()

# key -> (type, default); None default means "required when used"
RUN_KEYS: dict[str, tuple[type, object]] = {
    "data.root": (str, None),
    "data.val_root": (str, ""),
    "data.resolution": (int, 256),
    "data.synthetic": (int, 0),
    "data.synthetic_seed": (int, 0),
    "train.epochs": (int, 400),
    "train.batch_size": (int, 1),
    "train.lr": (float, 2e-4),
    "train.lr_min": (float, 0.0),
    "train.seed": (int, 0),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.weight_decay": (float, 1e-2),
    "train.checkpoint_every": (int, 0),
    "loss.literal_eq7": (bool, False),
    "out.dir": (str, "runs/irformer"),
}
for _f in fields(ModelConfig):
    RUN_KEYS[f"model.{_f.name}"] = (type(getattr(_MODEL_DEFAULTS, _f.name)), getattr(_MODEL_DEFAULTS, _f.name))


class RunConfig(dict):
    """Flat mapping of dotted keys to typed values, defaults filled in."""

    @classmethod
    def defaults(cls) -> "RunConfig":
        cfg = cls()
        for key, (_, default) in RUN_KEYS.items():
            cfg[key] = list(default) if isinstance(default, list) else default
        return cfg

    def set(self, key: str, text: str) -> None:
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        kind = RUN_KEYS[key][0]
        self[key] = parse_value(text, kind)

    def update_from_text(self, text: str) -> None:
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            self.set(key.strip(), value)

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls.defaults()
        if path is not None:
            cfg.update_from_text(Path(path).read_text())
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            cfg.set(k.strip(), v)
        return cfg

    def model_config(self) -> ModelConfig:
        kwargs = {f.name: self[f"model.{f.name}"] for f in fields(ModelConfig)}
        kwargs["efm_scales"] = list(kwargs["efm_scales"])
        return ModelConfig(**kwargs)

    def require(self, key: str):
        value = self.get(key)
        if value in (None, ""):
            raise ConfigError(f"config key {key!r} is required for this command")
        return value

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(self.items()) if v is not None)
