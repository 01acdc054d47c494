"""Generalized scoring families and the additive total score.

Which feature feeds which function is configuration, not code: a
``ScoringFunction`` names its family, the feature(s) it reads and its
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .features import DEFAULT_REGISTRY, FeatureConfig, FeatureRegistry, UnknownFeature
from .trajectory import Trajectory

FAMILIES = ("cap", "ratio", "decay")
_PARAMS = {
    "cap": ("w", "M"),
    "ratio": ("M",),
    "decay": ("c_min", "c_opt", "p", "M", "m"),
}


class RatioDomain(ValueError):
    pass


def f_cap(x: float, w: float, M: float) -> float:
    """Linear reward w*x, capped at M. Negative w is allowed (penalties)."""
    return min(w * x, M)


def f_ratio(v_tgt: float, v_tot: float, M: float) -> float:
    if v_tgt > v_tot:
        raise RatioDomain(f"target count {v_tgt} exceeds total {v_tot}")
    if v_tot <= 0:
        return 0.0
    # M*tgt/tot can round one ulp above M when tgt == tot
    return min(M * v_tgt / v_tot, M)


def f_decay(c: float, c_min: float, c_opt: float, p: float, M: float, m: float) -> float:
    """Full score M on [c_min, c_opt], 0 below c_min, linear decay floored at m above."""
    if c < c_min:
        return 0.0
    if c <= c_opt:
        return M
    return max(M - p * (c - c_opt), m)


@dataclass(frozen=True)
class ScoringFunction:
    family: str
    features: tuple[str, ...]
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        if not self.name:
            object.__setattr__(self, "name", f"{self.family}:{'/'.join(self.features)}")
        self.check()

    def __hash__(self):
        return hash((self.family, self.features, tuple(sorted(self.params.items())), self.name))

    def check(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown scoring family {self.family!r}")
        want = _PARAMS[self.family]
        missing = [k for k in want if k not in self.params]
        extra = [k for k in self.params if k not in want]
        if missing or extra:
            raise ValueError(f"{self.name}: missing params {missing}, unexpected {extra}")
        n_feat = 2 if self.family == "ratio" else 1
        if len(self.features) != n_feat:
            raise ValueError(f"{self.name}: {self.family} reads {n_feat} feature(s)")
        p = self.params
        if p["M"] <= 0:
            raise ValueError(f"{self.name}: M must be > 0")
        if self.family == "decay":
            if p["c_min"] > p["c_opt"]:
                raise ValueError(f"{self.name}: c_min > c_opt")
            if p["p"] < 0:
                raise ValueError(f"{self.name}: p must be >= 0")
            if not 0 <= p["m"] <= p["M"]:
                raise ValueError(f"{self.name}: need 0 <= m <= M")

    def evaluate(self, values: Mapping[str, float]) -> float:
        p = self.params
        if self.family == "cap":
            return f_cap(values[self.features[0]], p["w"], p["M"])
        if self.family == "ratio":
            return f_ratio(values[self.features[0]], values[self.features[1]], p["M"])
        return f_decay(values[self.features[0]], p["c_min"], p["c_opt"], p["p"], p["M"], p["m"])

    def with_params(self, **kw) -> "ScoringFunction":
        return replace(self, params={**self.params, **kw})

    def to_dict(self) -> dict:
        return {"name": self.name, "family": self.family, "features": list(self.features),
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScoringFunction":
        unknown = set(d) - {"name", "family", "features", "params"}
        if unknown:
            raise ValueError(f"unknown scoring keys: {sorted(unknown)}")
        return cls(d["family"], tuple(d["features"]), dict(d.get("params", {})), d.get("name", ""))


def required_features(fns: Sequence[ScoringFunction]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for f in fns:
        for name in f.features:
            seen.setdefault(name)
    return tuple(seen)


def score_values(values: Mapping[str, float], fns: Sequence[ScoringFunction]) -> float:
    total = 0.0
    for f in fns:
        for name in f.features:
            if name not in values:
                raise UnknownFeature(name)
        total += f.evaluate(values)
    return total


def total_score(
    t: Trajectory,
    fns: Sequence[ScoringFunction],
    config: FeatureConfig | None = None,
    registry: FeatureRegistry = DEFAULT_REGISTRY,
) -> float:
    """Sum of every active scoring function on ``t``; 0 for an empty set."""
    cfg = config or FeatureConfig()
    values = {name: registry.get(name)(t, cfg) for name in required_features(fns)}
    return score_values(values, fns)


def default_scoring() -> list[ScoringFunction]:
    return [
        ScoringFunction("cap", ("lines_changed",), {"w": 0.1, "M": 10.0}),
        ScoringFunction("cap", ("tool_diversity",), {"w": 2.0, "M": 10.0}),
        ScoringFunction("ratio", ("tool_results_ok", "tool_results"), {"M": 10.0}),
        ScoringFunction("decay", ("agent_turns",), {"c_min": 1, "c_opt": 30, "p": 0.2, "M": 10.0, "m": 1.0}),
        ScoringFunction("decay", ("total_tokens",), {"c_min": 1, "c_opt": 40000, "p": 0.0002, "M": 10.0, "m": 1.0}),
    ]
