"""Pipeline configuration: one YAML file, one section per pipeline stage.

Unknown keys are rejected and every section re-runs its own invariant
checks at load time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .curate import CurationConfig
from .features import DEFAULT_FILE_OPS, FeatureConfig
from .lrfit import FitConfig
from .mapreduce import EXCLUDE, FAILURE_POLICIES
from .partition import SplitPolicy
from .scoring import ScoringFunction, default_scoring


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturesSection:
    file_ops: tuple = tuple(sorted(DEFAULT_FILE_OPS))
    early_window: int = 5
    recovery_window: int = 3

    def build(self) -> FeatureConfig:
        return FeatureConfig(frozenset(self.file_ops), self.early_window, self.recovery_window)


@dataclass(frozen=True)
class ScoringSection:
    functions: tuple = tuple(default_scoring())


@dataclass(frozen=True)
class ScreenSection:
    tau_global: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.tau_global <= 1.0:
            raise ValueError("tau_global must be in [0, 1]")


@dataclass(frozen=True)
class JudgeSection:
    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "JUDGE_API_KEY"
    concurrency: int = 4
    timeout: float = 60.0
    max_retries: int = 3
    failure_policy: str = EXCLUDE
    memory_cap: int = 2000
    reduce: str = "deterministic"

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError("judge.kind must be 'mock' or 'remote'")
        if self.kind == "remote" and not (self.endpoint and self.model):
            raise ValueError("a remote judge needs endpoint and model")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ValueError(f"judge.failure_policy must be one of {FAILURE_POLICIES}")
        if self.reduce not in ("deterministic", "judge"):
            raise ValueError("judge.reduce must be 'deterministic' or 'judge'")
        if self.concurrency < 1 or self.memory_cap < 1 or self.max_retries < 0 or self.timeout <= 0:
            raise ValueError("judge limits must be positive")


@dataclass(frozen=True)
class CurateSection:
    tau_seg: float = 7.0
    emit_mode: str = "segments"


@dataclass(frozen=True)
class IoSection:
    trajectories: str | None = None
    features: str | None = None
    model: str | None = None
    decisions: str | None = None
    kept: str | None = None
    partitions: str | None = None
    segments: str | None = None
    dataset: str | None = None
    report: str | None = None


_SECTIONS = {
    "features": FeaturesSection,
    "scoring": ScoringSection,
    "fit": FitConfig,
    "screen": ScreenSection,
    "partition": SplitPolicy,
    "judge": JudgeSection,
    "curate": CurateSection,
    "io": IoSection,
}


@dataclass(frozen=True)
class PipelineConfig:
    features: FeaturesSection = field(default_factory=FeaturesSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)
    fit: FitConfig = field(default_factory=FitConfig)
    screen: ScreenSection = field(default_factory=ScreenSection)
    partition: SplitPolicy = field(default_factory=SplitPolicy)
    judge: JudgeSection = field(default_factory=JudgeSection)
    curate: CurateSection = field(default_factory=CurateSection)
    io: IoSection = field(default_factory=IoSection)

    def __post_init__(self):
        self.curation()  # cross-section validation

    def curation(self) -> CurationConfig:
        return CurationConfig(self.screen.tau_global, self.curate.tau_seg, self.curate.emit_mode,
                              self.judge.failure_policy)

    def override(self, section: str, **values) -> "PipelineConfig":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        sec = getattr(self, section)
        try:
            new = replace(sec, **_coerce_fields(type(sec), values, section))
            return replace(self, **{section: new})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}: {e}") from e

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            sec = getattr(self, name)
            d = {}
            for f in fields(sec):
                v = getattr(sec, f.name)
                if name == "scoring" and f.name == "functions":
                    v = [fn.to_dict() for fn in v]
                elif isinstance(v, tuple):
                    v = list(v)
                d[f.name] = v
            out[name] = d
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _coerce(value: Any, default: Any, where: str) -> Any:
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"{where}: value required")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string")
    return value


def _defaults(cls) -> dict:
    out = {}
    for f in fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        else:
            out[f.name] = f.default_factory()
    return out


def _coerce_fields(cls, values: Mapping, section: str) -> dict:
    defaults = _defaults(cls)
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")
    out = {}
    for k, v in values.items():
        if section == "scoring" and k == "functions":
            if not isinstance(v, (list, tuple)):
                raise ConfigError("scoring.functions: expected a list")
            out[k] = tuple(f if isinstance(f, ScoringFunction) else ScoringFunction.from_dict(f) for f in v)
        else:
            out[k] = _coerce(v, defaults[k], f"{section}.{k}")
    return out


def from_dict(d: Mapping | None) -> PipelineConfig:
    d = d or {}
    if not isinstance(d, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = set(d) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        raw = d.get(name) or {}
        if not isinstance(raw, Mapping):
            raise ConfigError(f"section {name} must be a mapping")
        try:
            kwargs[name] = cls(**_coerce_fields(cls, raw, name))
        except (TypeError, ValueError, KeyError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"{name}: {e}") from e
    try:
        return PipelineConfig(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def loads(text: str) -> PipelineConfig:
    return from_dict(yaml.safe_load(text))


def load(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return loads(Path(path).read_text(encoding="utf-8"))
