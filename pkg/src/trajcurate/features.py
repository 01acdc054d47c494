"""Agentic feature extraction and Z-score normalization.

Feature ordering is fixed by ``DEFAULT_FEATURES``; fitted models record the
names they were trained on so vectors from another ordering are refused.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .trajectory import Trajectory

DEFAULT_FEATURES = (
    "lines_changed",
    "file_ops",
    "tool_calls",
    "agent_turns",
    "tool_success_rate",
    "early_tool_success_rate",
    "max_consecutive_failures",
    "tool_diversity",
    "total_tokens",
    "recovery_attempts",
)

DEFAULT_FILE_OPS = frozenset({"read", "write", "edit", "create", "delete", "str_replace"})


class UnknownFeature(KeyError):
    pass


class FeatureMismatch(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    file_ops: frozenset = DEFAULT_FILE_OPS
    early_window: int = 5
    recovery_window: int = 3

    def __post_init__(self):
        object.__setattr__(self, "file_ops", frozenset(self.file_ops))
        if self.early_window < 1:
            raise ValueError("early_window must be >= 1")
        if self.recovery_window < 1:
            raise ValueError("recovery_window must be >= 1")


# -- unified diff statistics ------------------------------------------------

_HUNK = re.compile(r"^@@ -\d+(?:,(\d+))? \+\d+(?:,(\d+))? @@")
_FENCE = re.compile(r"```(?:diff|patch)[^\n]*\n(.*?)```", re.S)


def diff_stats(text: str) -> tuple[int, int]:
    """Count (added, removed) body lines of a unified diff.

    Hunk headers are honoured so ``---``/``+++`` lines inside a hunk body
    are counted; file headers outside hunks are not. Text without any hunk
    header falls back to counting ``+``/``-`` lines that are not file headers.
    """
    lines = text.splitlines()
    added = removed = 0
    saw_hunk = False
    old_left = new_left = 0
    for ln in lines:
        if old_left > 0 or new_left > 0:
            if ln.startswith("+"):
                added += 1
                new_left -= 1
            elif ln.startswith("-"):
                removed += 1
                old_left -= 1
            elif ln.startswith("\\"):
                pass  # "\ No newline at end of file"
            else:
                old_left -= 1
                new_left -= 1
            continue
        m = _HUNK.match(ln)
        if m:
            saw_hunk = True
            old_left = int(m.group(1)) if m.group(1) is not None else 1
            new_left = int(m.group(2)) if m.group(2) is not None else 1
    if saw_hunk:
        return added, removed
    for ln in lines:
        if ln.startswith("+++") or ln.startswith("---"):
            continue
        if ln.startswith("+"):
            added += 1
        elif ln.startswith("-"):
            removed += 1
    return added, removed


def diff_blocks(content: str) -> list[str]:
    """Unified-diff blocks embedded in free text (fenced or bare hunks)."""
    fenced = _FENCE.findall(content)
    if fenced:
        return fenced
    if any(_HUNK.match(ln) for ln in content.splitlines()):
        return [content]
    return []


def _lines_changed(t: Trajectory) -> int:
    if t.patch:
        return sum(diff_stats(t.patch))
    total = 0
    for s in t.steps:
        if s.role != "assistant":
            continue
        for block in diff_blocks(s.content):
            a, r = diff_stats(block)
            total += a + r
    return total


# -- extractors -------------------------------------------------------------

Extractor = Callable[[Trajectory, FeatureConfig], float]


class FeatureRegistry:
    """Named feature extractors. Extra features may be registered at runtime."""

    def __init__(self):
        self._fns: dict[str, Extractor] = {}

    def register(self, name: str, fn: Extractor | None = None):
        if fn is None:
            def deco(f: Extractor) -> Extractor:
                self.register(name, f)
                return f
            return deco
        if name in self._fns:
            raise ValueError(f"feature {name!r} already registered")
        self._fns[name] = fn
        return fn

    def __contains__(self, name: str) -> bool:
        return name in self._fns

    def names(self) -> tuple[str, ...]:
        return tuple(self._fns)

    def get(self, name: str) -> Extractor:
        try:
            return self._fns[name]
        except KeyError:
            raise UnknownFeature(name) from None

    def copy(self) -> "FeatureRegistry":
        r = FeatureRegistry()
        r._fns = dict(self._fns)
        return r


def _tool_statuses(t: Trajectory) -> list[str]:
    return [s.tool_result.status for s in t.steps if s.role == "tool" and s.tool_result is not None]


def _all_calls(t: Trajectory):
    return [c for s in t.steps if s.role == "assistant" for c in s.tool_calls]


def _rate(statuses: list[str]) -> float:
    if not statuses:
        return 0.0
    return sum(st == "ok" for st in statuses) / len(statuses)


def _max_run_of_errors(statuses: list[str]) -> int:
    best = run = 0
    for st in statuses:
        run = run + 1 if st == "error" else 0
        best = max(best, run)
    return best


def _recovery_attempts(t: Trajectory, cfg: FeatureConfig) -> int:
    # an error counts once if a tool-calling assistant step appears within
    # the next `recovery_window` assistant steps
    n = 0
    steps = t.steps
    for pos, s in enumerate(steps):
        if s.role != "tool" or s.tool_result is None or s.tool_result.status != "error":
            continue
        seen = 0
        for nxt in steps[pos + 1:]:
            if nxt.role != "assistant":
                continue
            seen += 1
            if nxt.tool_calls:
                n += 1
                break
            if seen >= cfg.recovery_window:
                break
    return n


DEFAULT_REGISTRY = FeatureRegistry()
DEFAULT_REGISTRY.register("lines_changed", lambda t, c: float(_lines_changed(t)))
DEFAULT_REGISTRY.register("file_ops", lambda t, c: float(sum(k.name in c.file_ops for k in _all_calls(t))))
DEFAULT_REGISTRY.register("tool_calls", lambda t, c: float(len(_all_calls(t))))
DEFAULT_REGISTRY.register("agent_turns", lambda t, c: float(sum(s.role == "assistant" for s in t.steps)))
DEFAULT_REGISTRY.register("tool_success_rate", lambda t, c: _rate(_tool_statuses(t)))
DEFAULT_REGISTRY.register(
    "early_tool_success_rate", lambda t, c: _rate(_tool_statuses(t)[: c.early_window])
)
DEFAULT_REGISTRY.register("max_consecutive_failures", lambda t, c: float(_max_run_of_errors(_tool_statuses(t))))
DEFAULT_REGISTRY.register("tool_diversity", lambda t, c: float(len({k.name for k in _all_calls(t)})))
DEFAULT_REGISTRY.register("total_tokens", lambda t, c: float(sum(s.token_count for s in t.steps)))
DEFAULT_REGISTRY.register("recovery_attempts", lambda t, c: float(_recovery_attempts(t, c)))
# raw counts behind the rates, handy as ratio-family inputs
DEFAULT_REGISTRY.register("tool_results", lambda t, c: float(len(_tool_statuses(t))))
DEFAULT_REGISTRY.register("tool_results_ok", lambda t, c: float(sum(st == "ok" for st in _tool_statuses(t))))
DEFAULT_REGISTRY.register("estimated_token_steps", lambda t, c: float(sum(s.tokens_estimated for s in t.steps)))


@dataclass(frozen=True)
class FeatureVector(Mapping[str, float]):
    """Ordered named feature values. Attribute access works for each name."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.names) != len(self.values):
            raise ValueError("names/values length mismatch")

    def __getitem__(self, key: str) -> float:
        try:
            return self.values[self.names.index(key)]
        except ValueError:
            raise KeyError(key) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def __getattr__(self, key: str) -> float:
        if key.startswith("_") or key in ("names", "values"):
            raise AttributeError(key)
        try:
            return self[key]
        except KeyError:
            raise AttributeError(key) from None

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    @classmethod
    def from_dict(cls, d: Mapping[str, float], names: Sequence[str] | None = None) -> "FeatureVector":
        names = tuple(names) if names is not None else tuple(d)
        missing = [n for n in names if n not in d]
        if missing:
            raise FeatureMismatch(f"missing features: {missing}")
        return cls(names, tuple(float(d[n]) for n in names))


def extract(
    t: Trajectory,
    names: Sequence[str] = DEFAULT_FEATURES,
    config: FeatureConfig | None = None,
    registry: FeatureRegistry = DEFAULT_REGISTRY,
) -> FeatureVector:
    cfg = config or FeatureConfig()
    return FeatureVector(tuple(names), tuple(registry.get(n)(t, cfg) for n in names))


def feature_record(t: Trajectory, v: FeatureVector, label: int) -> dict:
    return {"task_id": t.task_id, "label": int(label), "features": v.to_dict()}


# -- normalization ----------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.std, other.std)
        )

    def to_dict(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}


def _stack(vs: Sequence[FeatureVector]) -> tuple[tuple[str, ...], np.ndarray]:
    names = vs[0].names
    for v in vs:
        if v.names != names:
            raise FeatureMismatch(f"feature ordering differs: {v.names} vs {names}")
    return names, np.array([v.values for v in vs], dtype=float)


def fit_norm(vs: Sequence[FeatureVector], degenerate_tol: float = 1e-12) -> NormStats:
    """Per-feature mean and population std; near-zero std is replaced by 1."""
    if len(vs) < 2:
        raise TooFewSamples(f"need at least 2 vectors, got {len(vs)}")
    names, X = _stack(vs)
    return norm_from_matrix(names, X, degenerate_tol)


def norm_from_matrix(names: Sequence[str], X: np.ndarray, degenerate_tol: float = 1e-12) -> NormStats:
    if X.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 vectors, got {X.shape[0]}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < degenerate_tol, 1.0, std)
    return NormStats(tuple(names), mean, std)


def _check_names(v: FeatureVector, s: NormStats):
    if v.names != s.names:
        raise FeatureMismatch(f"vector features {v.names} do not match stats {s.names}")


def transform(v: FeatureVector, s: NormStats) -> np.ndarray:
    _check_names(v, s)
    return (v.as_array() - s.mean) / s.std


def transform_matrix(X: np.ndarray, s: NormStats) -> np.ndarray:
    return (X - s.mean) / s.std


def inverse_transform(x: Iterable[float], s: NormStats) -> FeatureVector:
    arr = np.asarray(list(x), dtype=float)
    return FeatureVector(s.names, tuple(arr * s.std + s.mean))
