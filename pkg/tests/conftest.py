import json

import pytest

from trajcurate.trajectory import Step, ToolCall, ToolResult, Trajectory


def build(spec, task_id="t", reward=1.0, patch=None, meta=None):
    """Build a trajectory from a compact list.

    Items: "s"/"u"/"a" plain messages, "a:tool" assistant calling tool,
    "ok"/"err" tool results, or ready-made Step objects.
    """
    steps = []
    for i, item in enumerate(spec):
        if isinstance(item, Step):
            steps.append(item)
        elif item == "s":
            steps.append(Step(i, "system", "system prompt"))
        elif item == "u":
            steps.append(Step(i, "user", f"user message {i}"))
        elif item == "a":
            steps.append(Step(i, "assistant", f"thinking {i}"))
        elif item.startswith("a:"):
            steps.append(Step(i, "assistant", f"calling {i}", (ToolCall(item[2:], "{}"),)))
        elif item in ("ok", "err"):
            status = "ok" if item == "ok" else "error"
            steps.append(Step(i, "tool", f"result {i}", (), ToolResult(status, f"out {i}")))
        else:
            raise ValueError(item)
    return Trajectory(task_id, tuple(steps), reward, patch, meta or {})


def boundary_replay(sigma, l_min, l_max):
    """Boundary replay straight from the set definition (independent oracle)."""
    n = len(sigma)
    bounds, forced = [], []
    prev = 0
    while prev < n:
        safe = {t for t in range(prev + 1, n + 1) if t - prev >= l_min and sigma[t - 1] == 1}
        cap = prev + l_max
        tk = min(safe | {cap})
        clamped = tk > n
        tk = min(tk, n)
        bounds.append(tk)
        forced.append(clamped or tk == cap)
        prev = tk
    return bounds, forced


def annotated(spec, quality, task_id="t", reward=1.0):
    return build(spec, task_id, reward, meta={"oracle_quality": json.dumps(quality)})


@pytest.fixture
def simple_traj():
    return build(["s", "u", "a:read", "ok", "a:edit", "err", "a:edit", "ok", "a"])


def constant_model(bias, names=None):
    """Screening model ignoring its features: probability sigmoid(bias) for every input."""
    import numpy as np

    from trajcurate.features import DEFAULT_FEATURES, NormStats
    from trajcurate.lrfit import ScreeningModel

    names = tuple(names or DEFAULT_FEATURES)
    k = len(names)
    return ScreeningModel(names, np.zeros(k), float(bias), NormStats(names, np.zeros(k), np.ones(k)))


def fragment_fixture():
    """Globally poor trajectory: five user-led sub-tasks scored 1, 2, 9, 1, 2 (mean 3)."""
    spec, quality = [], []
    for q in (1, 2, 9, 1, 2):
        spec += ["u", "a:bash", "ok", "a"]
        quality += [q] * 4
    return annotated(spec, quality, task_id="poor", reward=0.1)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {line}")
