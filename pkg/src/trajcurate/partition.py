"""Safe-split partitioning of a trajectory into contiguous judge batches.

Positions are 1-based (step ``i`` here is ``trajectory.steps[i - 1]``).
Each boundary is the earliest safe position at least ``l_min`` steps after
the previous one, unless the hard cap ``prev + l_max`` comes first; the
last boundary is always ``N``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .trajectory import Trajectory


@dataclass(frozen=True)
class SplitPolicy:
    l_min: int = 8
    l_max: int = 40

    def __post_init__(self):
        if self.l_min < 1:
            raise ValueError("l_min must be >= 1")
        if self.l_max < self.l_min:
            raise ValueError("l_max must be >= l_min")


@dataclass(frozen=True)
class Batch:
    k: int
    start: int
    end: int
    forced: bool = False

    def __len__(self) -> int:
        return self.end - self.start + 1


def safety(t: Trajectory, i: int) -> int:
    """1 if cutting right after step ``i`` keeps every action with its observation."""
    steps = t.steps
    n = len(steps)
    if not 1 <= i <= n:
        raise IndexError(f"position {i} outside 1..{n}")
    if i == n:
        return 1
    cur, nxt = steps[i - 1], steps[i]
    if cur.role == "assistant" and cur.tool_calls:
        return 0  # results still pending
    if cur.role == "tool" and nxt.role != "tool":
        return 1
    if nxt.role == "user":
        return 1
    return 0


def safety_pattern(t: Trajectory) -> list[int]:
    return [safety(t, i) for i in range(1, t.n_steps + 1)]


def boundaries(sigma: Sequence[int], policy: SplitPolicy) -> tuple[list[int], list[bool]]:
    """Boundaries t_1..t_K for a safety pattern (``sigma[i-1]`` is position i)."""
    n = len(sigma)
    if n < 1:
        raise ValueError("cannot partition an empty trajectory")
    out: list[int] = []
    forced: list[bool] = []
    prev = 0
    while prev < n:
        cap = prev + policy.l_max
        chosen = None
        for t in range(prev + policy.l_min, min(cap - 1, n) + 1):
            if sigma[t - 1]:
                chosen = t
                break
        if chosen is None:
            out.append(min(cap, n))
            forced.append(True)
        else:
            out.append(chosen)
            forced.append(False)
        prev = out[-1]
    return out, forced


def batches_from_boundaries(bounds: Sequence[int], forced: Sequence[bool]) -> list[Batch]:
    out = []
    prev = 0
    for k, (b, f) in enumerate(zip(bounds, forced), start=1):
        out.append(Batch(k, prev + 1, b, f))
        prev = b
    return out


def partition(t: Trajectory, policy: SplitPolicy | None = None) -> list[Batch]:
    policy = policy or SplitPolicy()
    return batches_from_boundaries(*boundaries(safety_pattern(t), policy))


def debug_record(task_id: str, batches: Sequence[Batch]) -> dict:
    return {"task_id": task_id, "boundaries": [b.end for b in batches], "forced": [b.forced for b in batches]}


def debug_dump(task_id: str, batches: Sequence[Batch]) -> str:
    return json.dumps(debug_record(task_id, batches))
