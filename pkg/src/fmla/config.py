"""Plain-text run configuration: ``key = value`` lines with dotted keys.

    # comment
    model.mask_ratio = 0.5
    model.dcn_channels = 128,128,64,64
    train.lr = 0.001

Sections are ``model`` (ModelConfig) and ``train`` (TrainConfig). Unknown
keys and unparsable values raise ConfigError.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, FmlaError
from .model import ModelConfig
from .train import TrainConfig

_SECTIONS = {"model": ModelConfig, "train": TrainConfig}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, template):
    raw = raw.strip()
    try:
        if isinstance(template, bool):
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(raw)
            return low in _TRUE
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    explicit: set = field(default_factory=set)

    def apply(self, overrides: dict[str, str]) -> "RunConfig":
        updates = {name: {} for name in _SECTIONS}
        for key, raw in overrides.items():
            section, _, name = key.partition(".")
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(self, section)
            if name not in {f.name for f in fields(current)}:
                raise ConfigError(f"unknown config key {key!r}")
            updates[section][name] = _coerce(key, raw, getattr(current, name))
        try:
            model = replace(self.model, **updates["model"])
            train = replace(self.train, **updates["train"])
        except FmlaError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return RunConfig(model, train, self.explicit | set(overrides))

    def lines(self) -> list[str]:
        out = []
        for section in _SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = str(value).lower()
                out.append(f"{section}.{f.name} = {value}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.lines()) + "\n")


def load_run_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        cfg = cfg.apply(parse_lines(p.read_text().splitlines()))
    if overrides:
        cfg = cfg.apply(overrides)
    return cfg


TOY_GRADCHECK = {
    "model.num_blocks": "2",
    "model.d": "8",
    "model.num_heads": "2",
    "model.C": "4",
    "model.dcn_channels": "4,4",
    "model.seq_len": "16",
    "model.num_classes": "3",
    "model.mask_ratio": "0.5",
    "model.alpha": "1.0",
    "model.beta": "1.0",
    "model.self_distill_n": "3",
}
