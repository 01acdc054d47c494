import itertools
import random

import pytest
from hypothesis import given, strategies as st

from conftest import build, boundary_replay
from trajcurate.partition import (
    Batch,
    SplitPolicy,
    batches_from_boundaries,
    boundaries,
    debug_record,
    partition,
    safety,
    safety_pattern,
)


def test_safety_rules():
    t = build(["s", "u", "a:read", "ok", "ok", "a", "u", "a"])
    # positions:  1    2    3        4     5    6    7    8
    assert safety(t, 3) == 0  # pending tool call
    assert safety(t, 4) == 0  # another tool result follows
    assert safety(t, 5) == 1  # last result of the run
    assert safety(t, 6) == 1  # next step is a user instruction
    assert safety(t, 1) == 1  # system prompt, next is the user
    assert safety(t, 8) == 1  # terminal


def test_safety_before_user():
    t = build(["s", "u", "a", "u", "a"])
    assert safety_pattern(t) == [1, 0, 1, 0, 1]


def test_safety_out_of_range():
    with pytest.raises(IndexError):
        safety(build(["u"]), 2)


def test_example_all_safe():
    b, f = boundaries([1] * 5, SplitPolicy(2, 3))
    assert b == [2, 4, 5] and f == [False, False, True]
    assert boundary_replay([1] * 5, 2, 3) == (b, f)
    batches = batches_from_boundaries(b, f)
    assert [(x.start, x.end) for x in batches] == [(1, 2), (3, 4), (5, 5)]


def test_example_only_terminal_safe():
    b, f = boundaries([0, 0, 0, 1], SplitPolicy(1, 2))
    assert b == [2, 4] and f == [True, True]
    assert boundary_replay([0, 0, 0, 1], 1, 2) == (b, f)


def test_single_step():
    assert partition(build(["u"]), SplitPolicy(8, 40)) == [Batch(1, 1, 1, True)]


def test_policy_validation():
    with pytest.raises(ValueError):
        SplitPolicy(0, 3)
    with pytest.raises(ValueError):
        SplitPolicy(4, 3)
    with pytest.raises(ValueError):
        boundaries([], SplitPolicy(1, 1))


def test_exhaustive_small_against_replay():
    for lmin, lmax in [(1, 1), (2, 5), (3, 4)]:
        pol = SplitPolicy(lmin, lmax)
        for n in range(1, 9):
            for sigma in itertools.product((0, 1), repeat=n):
                assert boundaries(list(sigma), pol) == boundary_replay(list(sigma), lmin, lmax)


def _check_invariants(sigma, pol, batches):
    n = len(sigma)
    covered = [p for b in batches for p in range(b.start, b.end + 1)]
    assert covered == list(range(1, n + 1))
    assert [b.k for b in batches] == list(range(1, len(batches) + 1))
    prev = 0
    for b in batches:
        assert len(b) <= pol.l_max
        if not b.forced:
            assert sigma[b.end - 1] == 1 and b.end - prev >= pol.l_min
        prev = b.end


@given(st.lists(st.integers(0, 1), min_size=1, max_size=200), st.integers(1, 20), st.integers(0, 30))
def test_invariants_random_patterns(sigma, lmin, extra):
    pol = SplitPolicy(lmin, lmin + extra)
    b, f = boundaries(sigma, pol)
    batches = batches_from_boundaries(b, f)
    _check_invariants(sigma, pol, batches)
    assert boundaries(sigma, pol) == (b, f)


def test_partition_on_real_shape():
    rng = random.Random(0)
    spec = ["s", "u"]
    for _ in range(30):
        spec += rng.choice([["a:bash", "ok"], ["a:edit", "err", "ok"], ["a"], ["u"]])
    t = build(spec)
    pol = SplitPolicy(4, 9)
    batches = partition(t, pol)
    _check_invariants(safety_pattern(t), pol, batches)
    # a non-forced cut never separates a call from its result
    for b in batches:
        if not b.forced and b.end < t.n_steps:
            assert not (t.steps[b.end - 1].role == "assistant" and t.steps[b.end - 1].tool_calls)
            assert t.steps[b.end].role != "tool" or t.steps[b.end - 1].role != "tool"


def test_debug_record():
    batches = batches_from_boundaries([2, 4, 5], [False, False, True])
    assert debug_record("x", batches) == {"task_id": "x", "boundaries": [2, 4, 5], "forced": [False, False, True]}
