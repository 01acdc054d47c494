"""Trajectory data model, line-delimited ingestion and invariant checks.

One trajectory per line::

    {"task_id": str, "reward": float, "patch": str?, "meta": {str: str}?,
     "steps": [{"index": int, "role": "system"|"user"|"assistant"|"tool",
                "content": str,
                "tool_calls": [{"name": str, "arguments": str}]?,
                "tool_result": {"status": "ok"|"error", "output": str}?,
                "tokens": int?}]}
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Iterator, Mapping, Union

ROLES = ("system", "user", "assistant", "tool")
STATUSES = ("ok", "error")


class SchemaError(ValueError):
    """A record that could not be turned into a valid trajectory."""

    def __init__(self, line: int, field: str, reason: str):
        super().__init__(f"line {line}: {field}: {reason}")
        self.line = line
        self.field = field
        self.reason = reason

    def to_dict(self) -> dict:
        return {"line": self.line, "field": self.field, "reason": self.reason}


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: str = ""


@dataclass(frozen=True)
class ToolResult:
    status: str
    output: str = ""


def estimate_tokens(content: str) -> int:
    return math.ceil(len(content) / 4)


@dataclass(frozen=True)
class Step:
    index: int
    role: str
    content: str
    tool_calls: tuple[ToolCall, ...] = ()
    tool_result: ToolResult | None = None
    tokens: int | None = None

    @property
    def token_count(self) -> int:
        if self.tokens is not None:
            return self.tokens
        return estimate_tokens(self.content)

    @property
    def tokens_estimated(self) -> bool:
        return self.tokens is None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"index": self.index, "role": self.role, "content": self.content}
        if self.tool_calls:
            d["tool_calls"] = [{"name": c.name, "arguments": c.arguments} for c in self.tool_calls]
        if self.tool_result is not None:
            d["tool_result"] = {"status": self.tool_result.status, "output": self.tool_result.output}
        if self.tokens is not None:
            d["tokens"] = self.tokens
        return d


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    steps: tuple[Step, ...]
    reward: float
    patch: str | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "meta", dict(self.meta))

    def __hash__(self):
        return hash((self.task_id, self.steps, self.reward, self.patch, tuple(sorted(self.meta.items()))))

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def first_user_message(self) -> str:
        for s in self.steps:
            if s.role == "user":
                return s.content
        return ""

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"task_id": self.task_id, "reward": self.reward}
        if self.patch is not None:
            d["patch"] = self.patch
        if self.meta:
            d["meta"] = dict(self.meta)
        d["steps"] = [s.to_dict() for s in self.steps]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


@dataclass(frozen=True)
class Violation:
    invariant: str
    step_index: int | None
    message: str


def validate(t: Trajectory) -> list[Violation]:
    """Check every step/trajectory invariant; returns [] for a valid trajectory.

    Never raises for well-typed input.
    """
    out: list[Violation] = []
    steps = t.steps
    if not steps:
        out.append(Violation("non_empty", None, "trajectory has no steps"))
    elif steps[0].role not in ("system", "user"):
        out.append(Violation("first_role", 0, f"first step role is {steps[0].role!r}"))

    if not (isinstance(t.reward, (int, float)) and 0.0 <= t.reward <= 1.0):
        out.append(Violation("reward_range", None, f"reward {t.reward!r} outside [0, 1]"))

    for pos, s in enumerate(steps):
        if s.index != pos:
            out.append(Violation("contiguous_indices", pos, f"expected index {pos}, got {s.index}"))
            break

    for pos, s in enumerate(steps):
        if s.role not in ROLES:
            out.append(Violation("role", pos, f"unknown role {s.role!r}"))
        if (s.tool_result is not None) != (s.role == "tool"):
            what = "tool_result on non-tool step" if s.tool_result is not None else "tool step without tool_result"
            out.append(Violation("tool_result_role", pos, what))
        elif s.tool_result is not None and s.tool_result.status not in STATUSES:
            out.append(Violation("tool_status", pos, f"unknown status {s.tool_result.status!r}"))
        if s.tool_calls and s.role != "assistant":
            out.append(Violation("tool_calls_role", pos, "tool_calls on non-assistant step"))
        if s.tokens is not None and s.tokens < 0:
            out.append(Violation("tokens", pos, "negative token count"))

    last_assistant = max((p for p, s in enumerate(steps) if s.role == "assistant"), default=-1)
    for pos, s in enumerate(steps):
        if s.role != "assistant" or not s.tool_calls:
            continue
        answered = False
        for nxt in steps[pos + 1:]:
            if nxt.role == "tool":
                answered = True
                break
            if nxt.role == "user":
                break
        if not answered and pos != last_assistant:
            out.append(Violation("pending_tool_calls", pos, "tool_calls never answered by a tool step"))
    return out


# -- parsing ----------------------------------------------------------------


def _req(d: Mapping, key: str, types, where: str, line: int):
    if key not in d:
        raise SchemaError(line, f"{where}{key}", "missing required field")
    v = d[key]
    if not isinstance(v, types) or isinstance(v, bool) and bool not in _as_tuple(types):
        raise SchemaError(line, f"{where}{key}", f"expected {_type_name(types)}, got {type(v).__name__}")
    return v


def _opt(d: Mapping, key: str, types, where: str, line: int):
    if key not in d or d[key] is None:
        return None
    return _req(d, key, types, where, line)


def _as_tuple(types) -> tuple:
    return types if isinstance(types, tuple) else (types,)


def _type_name(types) -> str:
    return "|".join(t.__name__ for t in _as_tuple(types))


def _step_from_dict(d: Any, pos: int, line: int) -> Step:
    where = f"steps[{pos}]."
    if not isinstance(d, dict):
        raise SchemaError(line, f"steps[{pos}]", "step must be an object")
    index = _req(d, "index", int, where, line)
    role = _req(d, "role", str, where, line)
    if role not in ROLES:
        raise SchemaError(line, where + "role", f"unknown role {role!r}")
    content = _req(d, "content", str, where, line)
    calls_raw = _opt(d, "tool_calls", list, where, line) or []
    calls = []
    for j, c in enumerate(calls_raw):
        cw = f"{where}tool_calls[{j}]."
        if not isinstance(c, dict):
            raise SchemaError(line, cw[:-1], "tool call must be an object")
        calls.append(ToolCall(_req(c, "name", str, cw, line), _opt(c, "arguments", str, cw, line) or ""))
    result = None
    r = _opt(d, "tool_result", dict, where, line)
    if r is not None:
        status = _req(r, "status", str, where + "tool_result.", line)
        if status not in STATUSES:
            raise SchemaError(line, where + "tool_result.status", f"unknown status {status!r}")
        result = ToolResult(status, _opt(r, "output", str, where + "tool_result.", line) or "")
    tokens = _opt(d, "tokens", int, where, line)
    if tokens is not None and tokens < 0:
        raise SchemaError(line, where + "tokens", "must be non-negative")
    return Step(index, role, content, tuple(calls), result, tokens)


def trajectory_from_dict(d: Any, line: int = 0) -> Trajectory:
    """Build and validate a trajectory; raises SchemaError on the first problem."""
    if not isinstance(d, dict):
        raise SchemaError(line, "<record>", "record must be an object")
    task_id = _req(d, "task_id", str, "", line)
    reward = _req(d, "reward", (int, float), "", line)
    if not math.isfinite(reward) or not 0.0 <= reward <= 1.0:
        raise SchemaError(line, "reward", f"{reward} outside [0, 1]")
    patch = _opt(d, "patch", str, "", line)
    meta = _opt(d, "meta", dict, "", line) or {}
    for k, v in meta.items():
        if not isinstance(v, str):
            raise SchemaError(line, f"meta.{k}", "meta values must be strings")
    steps_raw = _req(d, "steps", list, "", line)
    steps = tuple(_step_from_dict(s, i, line) for i, s in enumerate(steps_raw))
    t = Trajectory(task_id, steps, float(reward), patch, meta)
    problems = validate(t)
    if problems:
        v = problems[0]
        fld = "steps" if v.step_index is None else f"steps[{v.step_index}]"
        if v.invariant == "reward_range":
            fld = "reward"
        raise SchemaError(line, fld, f"{v.invariant}: {v.message}")
    return t


def parse_line(text: str, line: int = 0) -> Trajectory:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(line, "<record>", f"invalid JSON: {e.msg}") from None
    return trajectory_from_dict(d, line)


ParseResult = Union[Trajectory, SchemaError]


def parse_trajectories(stream: Iterable[str] | IO[str]) -> Iterator[ParseResult]:
    """Lazily parse line-delimited records.

    Yields a Trajectory per valid line and a SchemaError (as a value, not
    raised) per invalid one, in input order. Blank lines are skipped. Line
    numbers are 1-based.
    """
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            yield parse_line(raw, lineno)
        except SchemaError as e:
            yield e


def read_trajectories(path) -> Iterator[ParseResult]:
    with open(path, encoding="utf-8") as fh:
        yield from parse_trajectories(fh)


def write_trajectories(ts: Iterable[Trajectory], fh: IO[str]) -> int:
    n = 0
    for t in ts:
        fh.write(t.to_json())
        fh.write("\n")
        n += 1
    return n
