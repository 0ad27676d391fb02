"""Flat ``section.key=value`` run configuration.

Every run writes its fully resolved config; checkpoints store the text and
its sha256 digest. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .degrade import KernelDistribution
from .nets.blocks import CorrectorConfig
from .nets.checkpoint import config_digest
from .nets.model import MODES, SrConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


# sr.scale is not serialized; it always follows data.scale
_SKIP = {("sr", "scale")}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    return str(v)


def _parse(text: str, like, key: str):
    try:
        if isinstance(like, bool):
            if text.lower() not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return text.lower() in ("true", "1")
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            return tuple(float(x) for x in text.split(",") if x.strip()) if text.strip() else ()
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    data: KernelDistribution = field(default_factory=KernelDistribution)
    corrector: CorrectorConfig = field(default_factory=CorrectorConfig)
    sr: SrConfig = field(default_factory=lambda: SrConfig(scale=2))
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "case3"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}")
        if self.sr.scale != self.data.scale:
            object.__setattr__(self, "sr", dataclasses.replace(self.sr, scale=self.data.scale))

    def sections(self):
        return (("data", self.data), ("corrector", self.corrector), ("sr", self.sr), ("train", self.train))

    def items(self) -> list[tuple[str, str]]:
        out = []
        for sec, obj in self.sections():
            for f in dataclasses.fields(obj):
                if (sec, f.name) not in _SKIP:
                    out.append((f"{sec}.{f.name}", _format(getattr(obj, f.name))))
        out.append(("run.mode", self.mode))
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def digest(self) -> bytes:
        return config_digest(self.to_text())

    def replace(self, overrides: dict) -> "RunConfig":
        """Apply ``{"section.key": "text value"}`` overrides."""
        groups: dict[str, dict] = {}
        mode = self.mode
        objs = dict(self.sections())
        for key, text in overrides.items():
            sec, _, name = key.partition(".")
            if key == "run.mode":
                mode = text.strip()
                continue
            obj = objs.get(sec)
            names = {f.name for f in dataclasses.fields(obj)} if obj is not None else set()
            if name not in names or (sec, name) in _SKIP:
                raise ConfigError(f"unknown config key {key!r}")
            groups.setdefault(sec, {})[name] = _parse(text.strip(), getattr(obj, name), key)
        try:
            new = {sec: dataclasses.replace(obj, **groups.get(sec, {})) for sec, obj in objs.items()}
            return RunConfig(new["data"], new["corrector"], new["sr"], new["train"], mode)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        return (base or cls()).replace(parse_lines(text.splitlines()))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_lines(lines: Iterable[str]) -> dict:
    out = {}
    for n, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out
