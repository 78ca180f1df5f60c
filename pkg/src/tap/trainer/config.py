"""Run configuration: dataclasses plus a line-oriented ``key=value`` text format.

Every field is addressable by a dotted key such as ``photo.layers`` or
``train.lr0``. A ``preset=desk|paper`` line selects the base values; later
lines and CLI overrides win.
"""

from __future__ import annotations

import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

from tap.backbone import EncoderConfig
from tap.decoder2d import DESK_STAGES, PAPER_STAGES, DecoderConfig
from tap.errors import ConfigError
from tap.objective import LossWeights
from tap.photograph import PhotoConfig


POSE_SAMPLING = ("fixed", "continuous")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    weight_decay: float = 5e-2
    epochs: int = 100
    batch: int = 32
    warmup_epochs: int = 0
    seed: int = 0
    precision: int = 32
    lr_min: float = -1.0  # negative: lr0 / 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int = 0  # >0 truncates the schedule length
    ckpt_every: int = 1  # epochs between checkpoints; 0 keeps only the final one
    # "fixed": poses come from the dataset's rendered views; "continuous": a fresh
    # azimuth per sample, rendered on the fly at the dataset elevation
    pose_sampling: str = "fixed"

    def validate(self) -> TrainConfig:
        if self.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.pose_sampling not in POSE_SAMPLING:
            raise ConfigError(f"pose_sampling must be one of {POSE_SAMPLING}, got {self.pose_sampling!r}")
        return self

    @property
    def min_lr(self) -> float:
        return self.lr0 / 100 if self.lr_min < 0 else self.lr_min


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 60
    batch: int = 16
    lr0: float = 5e-4
    weight_decay: float = 5e-2
    warmup_epochs: int = 10
    head_hidden: int = 128
    per_class: int = 0  # labeled training shapes per class; 0 uses all


@dataclass(frozen=True)
class ProbeConfig:
    steps: int = 400
    lr0: float = 1e-2
    weight_decay: float = 1e-4


@dataclass(frozen=True)
class TapConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    photo: PhotoConfig = field(default_factory=PhotoConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def validate(self) -> TapConfig:
        self.photo.validate()
        self.decoder.validate()
        self.train.validate()
        if self.decoder.stages[0][0] != self.photo.channels:
            raise ConfigError(f"decoder input {self.decoder.stages[0][0]} != photograph channels {self.photo.channels}")
        if self.encoder.k > 0 and self.encoder.centers < 1:
            raise ConfigError("encoder needs at least one center")
        return self

    @property
    def image_size(self) -> int:
        return self.decoder.output_size(self.photo.grid)

    def replace(self, **overrides) -> TapConfig:
        """Return a copy with dotted-key overrides applied."""
        return apply_overrides(self, overrides)

    def to_text(self) -> str:
        lines = []
        for section in dataclasses.fields(self):
            sub = getattr(self, section.name)
            for f in dataclasses.fields(sub):
                lines.append(f"{section.name}.{f.name}={_format(getattr(sub, f.name))}")
        return "\n".join(lines) + "\n"

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()


def paper_preset() -> TapConfig:
    return TapConfig(decoder=DecoderConfig(PAPER_STAGES))


def desk_preset() -> TapConfig:
    return TapConfig(
        encoder=EncoderConfig(centers=32),
        photo=PhotoConfig(layers=2, channels=128, grid=4),
        decoder=DecoderConfig(DESK_STAGES),
        train=TrainConfig(batch=8),
    )


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def _format(value) -> str:
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return ";".join(",".join(str(x) for x in row) for row in value)
    if isinstance(value, tuple):
        return ",".join(str(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, typ, key: str):
    text = text.strip()
    try:
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return text
        origin = typing.get_origin(typ)
        if origin is tuple:
            args = typing.get_args(typ)
            inner = args[0]
            if typing.get_origin(inner) is tuple or inner is tuple:
                return tuple(tuple(int(x) for x in row.split(",")) for row in text.split(";") if row.strip())
            return tuple(_parse(x, inner, key) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    raise ConfigError(f"unsupported field type for {key}: {typ}")


def apply_overrides(cfg: TapConfig, overrides: dict[str, str]) -> TapConfig:
    sections = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    for key, value in overrides.items():
        if key == "preset":
            continue
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ConfigError(f"unknown config key {key!r}")
        sub = sections[section]
        hints = typing.get_type_hints(type(sub))
        if name not in hints:
            raise ConfigError(f"unknown config key {key!r}")
        if not isinstance(value, str):
            value = _format(value) if isinstance(value, tuple) else str(value)
        sections[section] = dataclasses.replace(sub, **{name: _parse(value, hints[name], key)})
    return TapConfig(**sections)


def parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def config_from_text(text: str, overrides: dict[str, str] | None = None) -> TapConfig:
    items = parse_lines(text)
    items.update(overrides or {})
    preset = items.get("preset", "paper")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    return apply_overrides(PRESETS[preset](), items).validate()


def load_config(path=None, overrides: dict[str, str] | None = None, preset: str | None = None) -> TapConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    if preset:
        text = f"preset={preset}\n" + text
    return config_from_text(text, overrides)
