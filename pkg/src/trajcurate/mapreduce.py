"""Map batches through a judge with sliding memory, then reduce the
resulting segments into one trajectory-level evaluation."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

from .judge import Judge, JudgeError, build_request
from .partition import Batch
from .trajectory import Trajectory

EXCLUDE = "exclude"
DEGRADE = "degrade"
FAILURE_POLICIES = (EXCLUDE, DEGRADE)

LOOP_MIN_REPEATS = 3
LOOP_PENALTY = 2.0
COMPLETION_SCORE = 6.0


class TrajectoryExcluded(RuntimeError):
    def __init__(self, task_id: str, batch_index: int, cause: Exception):
        super().__init__(f"{task_id}: judge failed on batch {batch_index}: {cause}")
        self.task_id = task_id
        self.batch_index = batch_index
        self.cause = cause


@dataclass(frozen=True)
class Segment:
    task_id: str
    start: int
    end: int
    summary: str
    intent: str
    score: float
    batch_index: int
    memory_in_digest: str
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "type": "segment",
            "task_id": self.task_id,
            "start": self.start,
            "end": self.end,
            "summary": self.summary,
            "intent": self.intent,
            "score": self.score,
            "batch_index": self.batch_index,
            "memory_in": self.memory_in_digest,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, d) -> "Segment":
        return cls(d["task_id"], int(d["start"]), int(d["end"]), d["summary"], d["intent"], float(d["score"]),
                   int(d["batch_index"]), d.get("memory_in", ""), bool(d.get("degraded", False)))


@dataclass(frozen=True)
class AbstractTrajectory:
    task_id: str
    segments: tuple[Segment, ...]
    retries: int = 0

    @property
    def degraded(self) -> bool:
        return any(s.degraded for s in self.segments)


@dataclass(frozen=True)
class GlobalEvaluation:
    mean_score: float
    min_score: float
    max_score: float
    loop_flag: bool
    loop_evidence: tuple[int, ...]
    completion_estimate: float
    e_global: float
    mode: str = "deterministic"

    def to_dict(self, task_id: str = "") -> dict:
        return {
            "type": "global",
            "task_id": task_id,
            "mean_score": self.mean_score,
            "min_score": self.min_score,
            "max_score": self.max_score,
            "loop_flag": self.loop_flag,
            "loop_evidence": list(self.loop_evidence),
            "completion_estimate": self.completion_estimate,
            "e_global": self.e_global,
            "mode": self.mode,
        }


def map_trajectory(
    t: Trajectory,
    batches: Sequence[Batch],
    judge: Judge,
    failure_policy: str = EXCLUDE,
) -> AbstractTrajectory:
    """Judge batches in order, threading each batch's memory into the next.

    Under the exclude policy any judge failure raises TrajectoryExcluded and
    nothing is returned for the trajectory. Under degrade the failed batch
    becomes one segment scored 1 and the memory passes through unchanged.
    """
    if failure_policy not in FAILURE_POLICIES:
        raise ValueError(f"unknown failure policy {failure_policy!r}")
    memory = ""
    segments: list[Segment] = []
    retries = 0
    for b in batches:
        req = build_request(t, b, memory)
        try:
            resp = judge.judge_batch(req)
        except JudgeError as e:
            if failure_policy == EXCLUDE:
                raise TrajectoryExcluded(t.task_id, b.k, e) from e
            segments.append(Segment(t.task_id, b.start, b.end, f"judge failure: {e}", "judge failure", 1.0,
                                    b.k, memory, degraded=True))
            continue
        retries += resp.retries
        for s in resp.segments:
            segments.append(Segment(t.task_id, s.start, s.end, s.summary, s.intent, s.score, b.k, memory))
        memory = resp.memory_out
    return AbstractTrajectory(t.task_id, tuple(segments), retries)


def normalize_intent(intent: str) -> str:
    return " ".join(intent.casefold().split())


def reduce(a: AbstractTrajectory, global_judge: Judge | None = None) -> GlobalEvaluation:
    """Aggregate segment scores; flags a loop when one intent repeats 3+ times.

    With ``global_judge`` the headline ``e_global`` comes from the judge while
    the raw statistics are still computed here.
    """
    if not a.segments:
        raise ValueError("cannot reduce an empty abstract trajectory")
    scores = [s.score for s in a.segments]
    groups: dict[str, list[int]] = {}
    for j, s in enumerate(a.segments):
        groups.setdefault(normalize_intent(s.intent), []).append(j)
    evidence = sorted(j for idx in groups.values() if len(idx) >= LOOP_MIN_REPEATS for j in idx)
    loop = bool(evidence)
    mean = sum(scores) / len(scores)
    completion = sum(q >= COMPLETION_SCORE for q in scores) / len(scores)
    if global_judge is not None:
        e_global = global_judge.evaluate_global(
            [{"start": s.start, "end": s.end, "intent": s.intent, "summary": s.summary, "score": s.score}
             for s in a.segments]
        )
        mode = f"judge:{global_judge.name}"
    else:
        e_global = min(max(mean - LOOP_PENALTY * loop, 1.0), 10.0)
        mode = "deterministic"
    return GlobalEvaluation(mean, min(scores), max(scores), loop, tuple(evidence), completion, e_global, mode)


@dataclass(frozen=True)
class MapOutcome:
    trajectory: Trajectory
    batches: tuple[Batch, ...]
    abstract: AbstractTrajectory | None
    evaluation: GlobalEvaluation | None
    error: Exception | None = None


def map_corpus(
    ts: Iterable[Trajectory],
    partitioner: Callable[[Trajectory], Sequence[Batch]],
    judge: Judge,
    failure_policy: str = EXCLUDE,
    workers: int = 4,
    global_judge: Judge | None = None,
) -> Iterator[MapOutcome]:
    """Map and reduce many trajectories, yielding outcomes in input order.

    Batches of one trajectory are judged sequentially; up to ``workers``
    trajectories are in flight at once and at most ``2 * workers`` are
    buffered ahead of the consumer.
    """

    def one(t: Trajectory) -> MapOutcome:
        batches = tuple(partitioner(t))
        try:
            a = map_trajectory(t, batches, judge, failure_policy)
        except TrajectoryExcluded as e:
            return MapOutcome(t, batches, None, None, e)
        return MapOutcome(t, batches, a, reduce(a, global_judge))

    if workers <= 1:
        for t in ts:
            yield one(t)
        return
    window = 2 * workers
    with ThreadPoolExecutor(max_workers=workers) as ex:
        pending = []
        for t in ts:
            pending.append(ex.submit(one, t))
            if len(pending) >= window:
                yield pending.pop(0).result()
        for f in pending:
            yield f.result()


def dump_records(outcome: MapOutcome) -> list[str]:
    if outcome.abstract is None:
        return []
    lines = [json.dumps(s.to_dict(), ensure_ascii=False) for s in outcome.abstract.segments]
    lines.append(json.dumps(outcome.evaluation.to_dict(outcome.abstract.task_id), ensure_ascii=False))
    return lines
