"""Batch judges for the map phase.

A judge turns one rendered batch plus the carried memory into scored
segments and a new memory string. ``RemoteJudge`` talks to a
chat-completions endpoint; ``MockJudge`` is a deterministic stand-in driven
by per-step quality annotations stored in ``meta["oracle_quality"]`` (a JSON
list with one number or null per step).

Step positions in requests and responses are 1-based.
"""

from __future__ import annotations

import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import httpx

from .partition import Batch
from .trajectory import Step, Trajectory

DEFAULT_MEMORY_CAP = 2000
ORACLE_KEY = "oracle_quality"
MOCK_DEFAULT_QUALITY = 5.0


class JudgeError(RuntimeError):
    pass


class JudgeUnavailable(JudgeError):
    """Transport-level failure: endpoint unreachable, timeout, HTTP error."""


class JudgeMalformed(JudgeError):
    """The judge kept replying with something that violates the response schema."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class ResponseInvalid(ValueError):
    pass


@dataclass(frozen=True)
class JudgeRequest:
    task_instruction: str
    memory_in: str
    batch_rendering: str
    batch_bounds: tuple[int, int]
    forced_split: bool = False
    task_id: str = ""
    roles: tuple[str, ...] = ()
    # per-step quality annotations; only the mock judge reads them
    annotations: tuple[float | None, ...] = ()

    def __post_init__(self):
        if not self.batch_rendering:
            raise ValueError("batch_rendering must be non-empty")
        s, e = self.batch_bounds
        if s > e:
            raise ValueError(f"bad batch bounds {self.batch_bounds}")


@dataclass(frozen=True)
class SegmentJudgment:
    start: int
    end: int
    summary: str
    intent: str
    score: float

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "summary": self.summary, "intent": self.intent,
                "score": self.score}


@dataclass(frozen=True)
class JudgeResponse:
    segments: tuple[SegmentJudgment, ...]
    memory_out: str
    retries: int = field(default=0, compare=False)

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments], "memory": self.memory_out}


# -- rendering --------------------------------------------------------------


def _indent(text: str) -> str:
    # continuation lines are indented so every "[step" header sits in column 0
    return text.replace("\n", "\n    ")


def render_step(pos: int, s: Step) -> str:
    if s.role == "tool" and s.tool_result is not None:
        head = f"[step {pos} | tool | {s.tool_result.status}]"
    else:
        head = f"[step {pos} | {s.role}]"
    lines = [f"{head} {_indent(s.content)}"]
    for c in s.tool_calls:
        lines.append(f"    -> call {c.name}({_indent(c.arguments)})")
    if s.tool_result is not None and s.tool_result.output:
        lines.append(f"    output: {_indent(s.tool_result.output)}")
    return "\n".join(lines)


def render_batch(t: Trajectory, b: Batch) -> str:
    """Role-tagged text of steps ``b.start..b.end`` with absolute positions."""
    if not 1 <= b.start <= b.end <= t.n_steps:
        raise IndexError(f"batch {b.start}..{b.end} outside 1..{t.n_steps}")
    return "\n".join(render_step(p, t.steps[p - 1]) for p in range(b.start, b.end + 1))


def oracle_annotations(t: Trajectory) -> tuple[float | None, ...]:
    raw = t.meta.get(ORACLE_KEY)
    if not raw:
        return ()
    vals = json.loads(raw)
    return tuple(None if v is None else float(v) for v in vals)


def build_request(t: Trajectory, b: Batch, memory_in: str) -> JudgeRequest:
    ann = oracle_annotations(t)
    return JudgeRequest(
        task_instruction=t.first_user_message(),
        memory_in=memory_in,
        batch_rendering=render_batch(t, b),
        batch_bounds=(b.start, b.end),
        forced_split=b.forced,
        task_id=t.task_id,
        roles=tuple(t.steps[p - 1].role for p in range(b.start, b.end + 1)),
        annotations=tuple(ann[b.start - 1:b.end]) if ann else (),
    )


# -- response checks --------------------------------------------------------


def truncate_memory(text: str, cap: int = DEFAULT_MEMORY_CAP) -> str:
    """Keep the most recent ``cap`` characters, cutting at a whitespace boundary."""
    if len(text) <= cap:
        return text
    tail = text[len(text) - cap:]
    cut = re.search(r"\s", tail)
    if cut is None:
        return tail
    return tail[cut.end():].lstrip()


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def check_response(obj: Any, req: JudgeRequest, memory_cap: int = DEFAULT_MEMORY_CAP) -> JudgeResponse:
    """Validate a decoded response against the request; raises ResponseInvalid."""
    if not isinstance(obj, dict):
        raise ResponseInvalid("response must be a JSON object")
    extra = set(obj) - {"segments", "memory"}
    if extra:
        raise ResponseInvalid(f"unexpected keys {sorted(extra)}")
    segs = obj.get("segments")
    mem = obj.get("memory")
    if not isinstance(segs, list) or not segs:
        raise ResponseInvalid("'segments' must be a non-empty list")
    if not isinstance(mem, str):
        raise ResponseInvalid("'memory' must be a string")
    start, end = req.batch_bounds
    expected = start
    out = []
    for j, s in enumerate(segs):
        if not isinstance(s, dict):
            raise ResponseInvalid(f"segment {j} is not an object")
        missing = {"start", "end", "summary", "intent", "score"} - set(s)
        if missing:
            raise ResponseInvalid(f"segment {j} missing {sorted(missing)}")
        if not (_is_int(s["start"]) and _is_int(s["end"])):
            raise ResponseInvalid(f"segment {j}: start/end must be integers")
        if not (isinstance(s["summary"], str) and isinstance(s["intent"], str)):
            raise ResponseInvalid(f"segment {j}: summary/intent must be strings")
        sc = s["score"]
        if isinstance(sc, bool) or not isinstance(sc, (int, float)) or not math.isfinite(sc):
            raise ResponseInvalid(f"segment {j}: score must be a number")
        if not 1 <= sc <= 10:
            raise ResponseInvalid(f"segment {j}: score {sc} outside [1, 10]")
        if s["start"] != expected:
            raise ResponseInvalid(f"segment {j} starts at {s['start']}, expected {expected} (gap or overlap)")
        if s["end"] < s["start"] or s["end"] > end:
            raise ResponseInvalid(f"segment {j} end {s['end']} invalid for batch {start}..{end}")
        out.append(SegmentJudgment(s["start"], s["end"], s["summary"], s["intent"], float(sc)))
        expected = s["end"] + 1
    if expected != end + 1:
        raise ResponseInvalid(f"segments stop at {expected - 1}, batch ends at {end}")
    return JudgeResponse(tuple(out), truncate_memory(mem, memory_cap))


_FENCED = re.compile(r"```(?:json)?[ \t]*\n(.*?)\n?```", re.S)


def parse_reply(text: str) -> Any:
    """Decode the single fenced JSON object in a judge reply."""
    blocks = _FENCED.findall(text or "")
    if len(blocks) != 1:
        raise ResponseInvalid(f"expected exactly one fenced JSON block, found {len(blocks)}")
    try:
        return json.loads(blocks[0])
    except json.JSONDecodeError as e:
        raise ResponseInvalid(f"invalid JSON: {e.msg}") from None


# -- judges -----------------------------------------------------------------


class Judge:
    name = "judge"
    memory_cap = DEFAULT_MEMORY_CAP

    def judge_batch(self, req: JudgeRequest) -> JudgeResponse:
        raise NotImplementedError

    def evaluate_global(self, segments: Sequence[Mapping[str, Any]]) -> float:
        raise NotImplementedError(f"{self.name} has no global evaluation")


def _collapse(text: str) -> str:
    return " ".join(text.split())


class MockJudge(Judge):
    """Deterministic judge: split at user steps, score by mean annotation.

    Every request is appended to ``log`` (guarded by a lock so concurrent
    callers can share one instance).
    """

    name = "mock"

    def __init__(self, memory_cap: int = DEFAULT_MEMORY_CAP):
        self.memory_cap = memory_cap
        self.log: list[tuple[JudgeRequest, JudgeResponse]] = []
        self._lock = threading.Lock()

    @staticmethod
    def segment_bounds(req: JudgeRequest) -> list[tuple[int, int]]:
        start, end = req.batch_bounds
        cuts = [start] + [start + i for i, r in enumerate(req.roles) if r == "user" and i > 0]
        return [(a, (cuts[j + 1] - 1) if j + 1 < len(cuts) else end) for j, a in enumerate(cuts)]

    @staticmethod
    def segment_score(req: JudgeRequest, a: int, b: int) -> float:
        start = req.batch_bounds[0]
        vals = []
        for p in range(a, b + 1):
            i = p - start
            v = req.annotations[i] if i < len(req.annotations) else None
            vals.append(MOCK_DEFAULT_QUALITY if v is None else v)
        return sum(vals) / len(vals)

    @staticmethod
    def segment_intent(req: JudgeRequest, a: int) -> str:
        header = f"[step {a} |"
        for ln in req.batch_rendering.split("\n"):
            if ln.startswith(header):
                text = ln.split("] ", 1)[1] if "] " in ln else ""
                return _collapse(text)[:60] or "(empty)"
        return "(empty)"

    def judge_batch(self, req: JudgeRequest) -> JudgeResponse:
        segs = []
        for a, b in self.segment_bounds(req):
            intent = self.segment_intent(req, a)
            segs.append(SegmentJudgment(a, b, f"steps {a}-{b}: {intent}", intent, self.segment_score(req, a, b)))
        memory = " ".join(x for x in [req.memory_in] + [s.summary for s in segs] if x)
        resp = JudgeResponse(tuple(segs), truncate_memory(memory, self.memory_cap))
        with self._lock:
            self.log.append((req, resp))
        return resp

    def evaluate_global(self, segments):
        scores = [float(s["score"]) for s in segments]
        return sum(scores) / len(scores)


SYSTEM_PROMPT = """You grade one window of an AI coding agent's trajectory.
Split the window into consecutive sub-tasks that together cover every step exactly once.
For each sub-task give its first and last step number, a one-sentence summary, a short
intent label, and a quality score from 1 (useless or harmful) to 10 (exemplary) judging
local reasoning and execution efficiency. Also update the running memory: a short
summary of what the agent has done so far, to be handed to the grader of the next window.

Reply with exactly one fenced JSON block and nothing else:
```json
{"segments": [{"start": <int>, "end": <int>, "summary": "<text>", "intent": "<text>", "score": <number>}],
 "memory": "<text>"}
```"""

GLOBAL_PROMPT = """You are given the scored sub-task list of one agent trajectory. Judge its
strategic coherence, whether the task was completed, and whether the agent got stuck in
loops. Reply with exactly one fenced JSON block: {"e_global": <number 1-10>, "rationale": "<text>"}"""


def user_prompt(req: JudgeRequest) -> str:
    s, e = req.batch_bounds
    parts = [
        f"Task instruction:\n{req.task_instruction}",
        f"Memory from earlier windows:\n{req.memory_in or '(none - this is the first window)'}",
        f"Window: steps {s} to {e}.",
    ]
    if req.forced_split:
        parts.append("Note: this window was cut at a length limit and may end mid-action.")
    parts.append(f"Steps:\n{req.batch_rendering}")
    return "\n\n".join(parts)


class RemoteJudge(Judge):
    """Chat-completions judge with schema repair retries and an in-flight bound."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "JUDGE_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        max_in_flight: int = 4,
        memory_cap: int = DEFAULT_MEMORY_CAP,
        transport_retries: int = 2,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.memory_cap = memory_cap
        self.transport_retries = transport_retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.name = f"remote:{model}"

    def close(self):
        self._client.close()

    def _post(self, messages: list[dict]) -> str:
        headers = {}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        payload = {"model": self.model, "messages": messages, "temperature": 0}
        last: Exception | None = None
        for attempt in range(self.transport_retries + 1):
            if attempt:
                time.sleep(self.backoff * attempt)
            try:
                with self._slots:
                    r = self._client.post(f"{self.base_url}/chat/completions", json=payload, headers=headers)
            except httpx.HTTPError as e:
                last = e
                continue
            if r.status_code == 429 or r.status_code >= 500:
                last = JudgeUnavailable(f"HTTP {r.status_code}")
                continue
            if r.status_code >= 400:
                raise JudgeUnavailable(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                return r.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError):
                # a garbled envelope is treated like a malformed reply
                return ""
        raise JudgeUnavailable(f"{self.base_url} unreachable: {last}")

    def _ask(self, messages: list[dict], check):
        retries = 0
        while True:
            reply = self._post(messages)
            try:
                return check(parse_reply(reply)), retries
            except ResponseInvalid as e:
                if retries >= self.max_retries:
                    raise JudgeMalformed(f"still malformed after {retries} retries: {e}", retries) from None
                retries += 1
                messages = messages + [
                    {"role": "assistant", "content": reply},
                    {"role": "user", "content": f"Your reply was rejected: {e}. "
                                                "Reply again with exactly one fenced JSON block."},
                ]

    def judge_batch(self, req: JudgeRequest) -> JudgeResponse:
        messages = [{"role": "system", "content": SYSTEM_PROMPT}, {"role": "user", "content": user_prompt(req)}]
        resp, retries = self._ask(messages, lambda obj: check_response(obj, req, self.memory_cap))
        return JudgeResponse(resp.segments, resp.memory_out, retries)

    def evaluate_global(self, segments):
        def check(obj):
            if not isinstance(obj, dict) or "e_global" not in obj:
                raise ResponseInvalid("missing 'e_global'")
            v = obj["e_global"]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 1 <= v <= 10:
                raise ResponseInvalid("'e_global' must be a number in [1, 10]")
            return float(v)

        messages = [
            {"role": "system", "content": GLOBAL_PROMPT},
            {"role": "user", "content": json.dumps(list(segments), ensure_ascii=False)},
        ]
        value, _ = self._ask(messages, check)
        return value
