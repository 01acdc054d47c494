"""Macro-level pre-screening: keep trajectories whose success probability
reaches the global threshold."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .features import DEFAULT_REGISTRY, FeatureConfig, FeatureRegistry, extract
from .lrfit import ScreeningModel, predict_proba
from .trajectory import Trajectory

DEFAULT_TAU_GLOBAL = 0.5


@dataclass(frozen=True)
class ScreenDecision:
    task_id: str
    probability: float | None
    kept: bool
    threshold_used: float
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"task_id": self.task_id, "probability": self.probability, "kept": self.kept,
             "threshold": self.threshold_used}
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def decide(
    t: Trajectory,
    m: ScreeningModel,
    tau_global: float = DEFAULT_TAU_GLOBAL,
    config: FeatureConfig | None = None,
    registry: FeatureRegistry = DEFAULT_REGISTRY,
) -> ScreenDecision:
    """Screen one trajectory. Extraction failures become an error decision."""
    try:
        v = extract(t, m.feature_names, config, registry)
        p = predict_proba(m, v)
    except Exception as e:  # one bad log must not abort the corpus
        return ScreenDecision(t.task_id, None, False, tau_global, f"{type(e).__name__}: {e}")
    return ScreenDecision(t.task_id, p, p >= tau_global, tau_global)


def screen(
    ts: Iterable[Trajectory],
    m: ScreeningModel,
    tau_global: float = DEFAULT_TAU_GLOBAL,
    config: FeatureConfig | None = None,
    registry: FeatureRegistry = DEFAULT_REGISTRY,
    workers: int = 1,
) -> tuple[list[Trajectory], list[ScreenDecision]]:
    if not 0.0 <= tau_global <= 1.0:
        raise ValueError(f"tau_global {tau_global} outside [0, 1]")
    ts = list(ts)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            decisions = list(ex.map(lambda t: decide(t, m, tau_global, config, registry), ts))
    else:
        decisions = [decide(t, m, tau_global, config, registry) for t in ts]
    kept = [t for t, d in zip(ts, decisions) if d.kept]
    return kept, decisions


def summarize(decisions: Sequence[ScreenDecision]) -> dict:
    return {
        "input": len(decisions),
        "kept": sum(d.kept for d in decisions),
        "dropped": sum(not d.kept and d.error is None for d in decisions),
        "errors": sum(d.error is not None for d in decisions),
    }
