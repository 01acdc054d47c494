"""Seeded synthetic trajectories for tests and demos.

Good runs succeed at tool calls more often, change more code and carry
higher per-step quality annotations than bad runs. Annotations go in
``meta["oracle_quality"]`` so the mock judge can score them.
"""

from __future__ import annotations

import difflib
import json
import random

from .trajectory import Step, ToolCall, ToolResult, Trajectory

TOOLS = ("read", "edit", "bash", "search", "write", "run_tests")


def make_patch(rng: random.Random, n_add: int, n_del: int, path: str = "src/app.py") -> str:
    old = [f"line {i}\n" for i in range(max(n_del, 1) + 3)]
    new = old[:1] + [f"added {i}\n" for i in range(n_add)] + old[1 + n_del:]
    return "".join(difflib.unified_diff(old, new, f"a/{path}", f"b/{path}"))


def make_trajectory(
    task_id: str,
    rng: random.Random,
    good: bool,
    rounds: int | None = None,
    follow_ups: int = 0,
    annotate: bool = True,
) -> Trajectory:
    rounds = rounds if rounds is not None else rng.randint(2, 8)
    p_ok = 0.9 if good else 0.35
    base_q = 8.0 if good else 3.0
    steps: list[Step] = []
    quality: list[float] = []

    def add(role, content, calls=(), result=None, q=None, tokens=None):
        steps.append(Step(len(steps), role, content, tuple(calls), result, tokens))
        quality.append(q if q is not None else base_q)

    add("system", "You are a software engineering agent.", q=base_q)
    add("user", f"Fix issue {task_id}: tests in module {rng.randint(1, 99)} fail.", tokens=20)
    user_turns = [rng.randrange(1, rounds) for _ in range(follow_ups)] if rounds > 1 else []
    for r in range(rounds):
        if r in user_turns:
            add("user", f"Please also check case {r}.")
        tool = rng.choice(TOOLS)
        add("assistant", f"Round {r}: I will use {tool}.", [ToolCall(tool, json.dumps({"round": r}))],
            tokens=rng.randint(20, 200))
        status = "ok" if rng.random() < p_ok else "error"
        add("tool", f"{tool} -> {status}", result=ToolResult(status, f"{tool} output {r}"),
            tokens=rng.randint(10, 400))
    add("assistant", "Done." if good else "I could not finish.", tokens=5)
    q_noise = [min(10.0, max(1.0, q + rng.choice((-1.0, 0.0, 0.0, 1.0)))) for q in quality]
    n_add = rng.randint(5, 40) if good else rng.randint(0, 4)
    patch = make_patch(rng, n_add, rng.randint(0, 3)) if n_add else None
    reward = rng.uniform(0.6, 1.0) if good else rng.uniform(0.0, 0.4)
    meta = {"oracle_quality": json.dumps(q_noise)} if annotate else {}
    return Trajectory(task_id, tuple(steps), round(reward, 4), patch, meta)


def make_corpus(n: int, seed: int = 0, good_fraction: float = 0.5, follow_ups: int = 1) -> list[Trajectory]:
    rng = random.Random(seed)
    return [
        make_trajectory(f"task-{i:04d}", rng, rng.random() < good_fraction, follow_ups=follow_ups)
        for i in range(n)
    ]
