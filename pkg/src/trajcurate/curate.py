"""Two-stage curation: LR pre-screen, then segment-level judging and the
segment-score filter that produces SFT records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from . import __version__
from .features import FeatureConfig
from .judge import Judge
from .lrfit import ScreeningModel
from .mapreduce import EXCLUDE, FAILURE_POLICIES, AbstractTrajectory, GlobalEvaluation, map_corpus
from .partition import Batch, SplitPolicy, partition
from .screening import decide
from .trajectory import SchemaError, Trajectory

EMIT_MODES = ("segments", "full_trajectory", "both")


class IoFailure(OSError):
    pass


@dataclass(frozen=True)
class CurationConfig:
    tau_global: float = 0.5
    tau_seg: float = 7.0
    emit_mode: str = "segments"
    failure_policy: str = EXCLUDE

    def __post_init__(self):
        if not 0.0 <= self.tau_global <= 1.0:
            raise ValueError("tau_global must be in [0, 1]")
        if not 1.0 <= self.tau_seg <= 10.0:
            raise ValueError("tau_seg must be in [1, 10]")
        if self.emit_mode not in EMIT_MODES:
            raise ValueError(f"emit_mode must be one of {EMIT_MODES}")
        if self.failure_policy not in FAILURE_POLICIES:
            raise ValueError(f"failure_policy must be one of {FAILURE_POLICIES}")


@dataclass(frozen=True)
class CurationRecord:
    task_id: str
    start: int
    end: int
    score: float
    intent: str
    summary: str
    messages: tuple[dict, ...]
    context: dict
    provenance: dict
    kind: str = "segment"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "kind": self.kind,
            "start": self.start,
            "end": self.end,
            "score": self.score,
            "intent": self.intent,
            "summary": self.summary,
            "messages": list(self.messages),
            "context": self.context,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def step_messages(t: Trajectory, start: int, end: int) -> tuple[dict, ...]:
    out = []
    for s in t.steps[start - 1:end]:
        m: dict[str, Any] = {"role": s.role, "content": s.content}
        if s.tool_calls:
            m["tool_calls"] = [{"name": c.name, "arguments": c.arguments} for c in s.tool_calls]
        out.append(m)
    return tuple(out)


def provenance(judge_name: str, cfg: CurationConfig) -> dict:
    return {"judge": judge_name, "tau_global": cfg.tau_global, "tau_seg": cfg.tau_seg,
            "emit_mode": cfg.emit_mode, "pipeline_version": __version__}


def records_for(t: Trajectory, a: AbstractTrajectory, cfg: CurationConfig, judge_name: str) -> list[CurationRecord]:
    """Records emitted for one judged trajectory; the global evaluation gates nothing.

    Degraded placeholder segments carry no judgment and are never emitted.
    """
    prov = provenance(judge_name, cfg)
    instruction = t.first_user_message()
    out = []
    if cfg.emit_mode in ("segments", "both"):
        for s in a.segments:
            if s.score >= cfg.tau_seg and not s.degraded:
                out.append(CurationRecord(
                    t.task_id, s.start, s.end, s.score, s.intent, s.summary, step_messages(t, s.start, s.end),
                    {"instruction": instruction, "memory_in": s.memory_in_digest}, prov,
                ))
    if cfg.emit_mode in ("full_trajectory", "both") and a.segments and not a.degraded:
        low = min(s.score for s in a.segments)
        if low >= cfg.tau_seg:
            out.append(CurationRecord(
                t.task_id, 1, t.n_steps, low, "full trajectory", " | ".join(s.summary for s in a.segments),
                step_messages(t, 1, t.n_steps), {"instruction": instruction, "memory_in": ""}, prov,
                kind="full_trajectory",
            ))
    return out


def histogram(values: Sequence[float]) -> dict:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=10, range=(1.0, 10.0))
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


@dataclass
class CurationReport:
    counts: dict = field(default_factory=lambda: {
        "input": 0, "parse_errors": 0, "screen_errors": 0, "screened_kept": 0, "screened_dropped": 0,
        "judged": 0, "excluded": 0, "degraded": 0, "judge_retries": 0,
        "segments_total": 0, "segments_passed": 0, "segments_filtered": 0, "records": 0,
    })
    segment_scores: list = field(default_factory=list)
    e_global: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def add_outcome(self, t: Trajectory, a: AbstractTrajectory, ev: GlobalEvaluation, n_records: int,
                    tau_seg: float):
        c = self.counts
        c["judged"] += 1
        c["degraded"] += a.degraded
        c["judge_retries"] += a.retries
        scores = [s.score for s in a.segments]
        passed = sum(s.score >= tau_seg and not s.degraded for s in a.segments)
        c["segments_total"] += len(scores)
        c["segments_passed"] += passed
        c["segments_filtered"] += len(scores) - passed
        c["records"] += n_records
        self.segment_scores.extend(scores)
        self.e_global.append(ev.e_global)

    def to_dict(self) -> dict:
        eg = self.e_global
        return {
            "counts": dict(self.counts),
            "segment_score_histogram": histogram(self.segment_scores),
            "e_global_histogram": histogram(eg),
            "e_global_summary": {
                "n": len(eg),
                "mean": float(np.mean(eg)) if eg else None,
                "min": float(np.min(eg)) if eg else None,
                "max": float(np.max(eg)) if eg else None,
            },
            "errors": list(self.errors),
        }


def iter_curate(
    ts: Iterable[Trajectory | SchemaError],
    model: ScreeningModel,
    judge: Judge,
    cfg: CurationConfig,
    report: CurationReport,
    policy: SplitPolicy | None = None,
    feature_config: FeatureConfig | None = None,
    workers: int = 4,
    global_judge: Judge | None = None,
    on_decision: Callable | None = None,
    on_outcome: Callable | None = None,
) -> Iterator[CurationRecord]:
    """Streaming form of ``curate``; ``report`` is filled in as records flow."""
    policy = policy or SplitPolicy()
    c = report.counts

    def candidates() -> Iterator[Trajectory]:
        for item in ts:
            c["input"] += 1
            if isinstance(item, SchemaError):
                c["parse_errors"] += 1
                report.errors.append({"stage": "parse", **item.to_dict()})
                continue
            d = decide(item, model, cfg.tau_global, feature_config)
            if on_decision is not None:
                on_decision(d)
            if d.error is not None:
                c["screen_errors"] += 1
                report.errors.append({"stage": "screen", "task_id": item.task_id, "reason": d.error})
            elif d.kept:
                c["screened_kept"] += 1
                yield item
            else:
                c["screened_dropped"] += 1

    part: Callable[[Trajectory], list[Batch]] = lambda t: partition(t, policy)
    for out in map_corpus(candidates(), part, judge, cfg.failure_policy, workers, global_judge):
        if on_outcome is not None:
            on_outcome(out)
        if out.error is not None:
            c["excluded"] += 1
            cause = getattr(out.error, "cause", out.error)
            report.errors.append({"stage": "judge", "task_id": out.trajectory.task_id,
                                  "kind": type(cause).__name__, "reason": str(out.error)})
            continue
        recs = records_for(out.trajectory, out.abstract, cfg, judge.name)
        report.add_outcome(out.trajectory, out.abstract, out.evaluation, len(recs), cfg.tau_seg)
        yield from recs


def curate(
    ts: Iterable[Trajectory | SchemaError],
    model: ScreeningModel,
    judge: Judge,
    cfg: CurationConfig | None = None,
    policy: SplitPolicy | None = None,
    feature_config: FeatureConfig | None = None,
    workers: int = 4,
    global_judge: Judge | None = None,
) -> tuple[list[CurationRecord], CurationReport]:
    cfg = cfg or CurationConfig()
    report = CurationReport()
    records = list(iter_curate(ts, model, judge, cfg, report, policy, feature_config, workers, global_judge))
    return records, report


def emit_dataset(records: Iterable[CurationRecord], sink: IO[str] | str) -> int:
    """Write one JSON record per line; returns the number of lines written."""
    try:
        if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
            with open(sink, "w", encoding="utf-8") as fh:
                return emit_dataset(records, fh)
        n = 0
        for r in records:
            sink.write(r.to_json())
            sink.write("\n")
            n += 1
        sink.flush()
        return n
    except OSError as e:
        raise IoFailure(str(e)) from e
