import random

import pytest
from hypothesis import given, strategies as st

from conftest import build
from trajcurate.features import UnknownFeature, extract
from trajcurate.scoring import (
    RatioDomain,
    ScoringFunction,
    default_scoring,
    f_cap,
    f_decay,
    f_ratio,
    score_values,
    total_score,
)
from trajcurate.synthetic import make_corpus

DECAY = dict(c_min=2, c_opt=10, p=0.5, M=10, m=1)


@pytest.mark.parametrize("x,w,M,want", [(5, 2, 8, 8), (0, 3, 8, 0), (3, 2, 8, 6), (4, -1, 8, -4)])
def test_f_cap(x, w, M, want):
    assert f_cap(x, w, M) == want


@pytest.mark.parametrize("tgt,tot,want", [(3, 4, 7.5), (0, 0, 0), (4, 4, 10)])
def test_f_ratio(tgt, tot, want):
    assert f_ratio(tgt, tot, 10) == want


def test_f_ratio_domain():
    with pytest.raises(RatioDomain):
        f_ratio(5, 4, 10)


@pytest.mark.parametrize("c,want", [(5, 10), (30, 1), (1, 0), (2, 10), (10, 10), (12, 9)])
def test_f_decay(c, want):
    assert f_decay(c, **DECAY) == want


@given(st.floats(-1e6, 1e6), st.floats(-100, 100), st.floats(1e-3, 1e3))
def test_cap_bounded(x, w, M):
    assert f_cap(x, w, M) <= M


@given(st.integers(0, 1000), st.integers(0, 1000), st.floats(1e-3, 1e3))
def test_ratio_range(a, b, M):
    tgt, tot = min(a, b), max(a, b)
    assert 0 <= f_ratio(tgt, tot, M) <= M


@given(
    st.floats(-1e4, 1e4), st.floats(-100, 100), st.floats(0, 100), st.floats(0, 10),
    st.floats(1e-3, 100), st.floats(0, 1),
)
def test_decay_range_and_monotone(c, c_min, width, p, M, m_frac):
    c_opt = c_min + width
    m = m_frac * M
    v = f_decay(c, c_min, c_opt, p, M, m)
    assert v == 0 or m <= v <= M
    if c >= c_opt:
        assert f_decay(c + 1.0, c_min, c_opt, p, M, m) <= v


def test_config_invariants():
    with pytest.raises(ValueError):
        ScoringFunction("cap", ("x",), {"w": 1, "M": 0})
    with pytest.raises(ValueError):
        ScoringFunction("decay", ("x",), {**DECAY, "c_min": 20})
    with pytest.raises(ValueError):
        ScoringFunction("decay", ("x",), {**DECAY, "m": 11})
    with pytest.raises(ValueError):
        ScoringFunction("decay", ("x",), {**DECAY, "p": -1})
    with pytest.raises(ValueError):
        ScoringFunction("ratio", ("x",), {"M": 1})
    with pytest.raises(ValueError):
        ScoringFunction("linear", ("x",), {"M": 1})
    with pytest.raises(ValueError):
        ScoringFunction("cap", ("x",), {"w": 1, "M": 1, "extra": 2})


def test_total_score_empty_is_zero(simple_traj):
    assert total_score(simple_traj, []) == 0


def test_total_score_cap_plus_decay():
    # a trajectory with 5 agent turns feeding a cap, and 5 tool calls feeding a decay
    t = build(["u"] + ["a:bash", "ok"] * 5)
    fns = [
        ScoringFunction("cap", ("agent_turns",), {"w": 2, "M": 8}),
        ScoringFunction("decay", ("tool_calls",), DECAY),
    ]
    assert total_score(t, fns) == 8 + 10


def test_total_score_unknown_feature(simple_traj):
    with pytest.raises(UnknownFeature):
        total_score(simple_traj, [ScoringFunction("cap", ("nope",), {"w": 1, "M": 1})])
    with pytest.raises(UnknownFeature):
        score_values({}, [ScoringFunction("cap", ("x",), {"w": 1, "M": 1})])


def _random_fn(rng):
    fam = rng.choice(["cap", "ratio", "decay"])
    if fam == "cap":
        return ScoringFunction("cap", (rng.choice(["lines_changed", "tool_calls", "total_tokens"]),),
                               {"w": rng.uniform(-2, 2), "M": rng.uniform(1, 20)})
    if fam == "ratio":
        pair = rng.choice([("tool_diversity", "tool_calls"), ("file_ops", "tool_calls"),
                           ("tool_results_ok", "tool_results")])
        return ScoringFunction("ratio", pair, {"M": rng.uniform(1, 20)})
    c_min = rng.uniform(0, 5)
    M = rng.uniform(1, 20)
    return ScoringFunction("decay", (rng.choice(["agent_turns", "total_tokens"]),),
                           {"c_min": c_min, "c_opt": c_min + rng.uniform(0, 20), "p": rng.uniform(0, 3),
                            "M": M, "m": rng.uniform(0, M)})


def test_total_score_matches_term_by_term():
    rng = random.Random(7)
    corpus = make_corpus(60, seed=11)
    for _ in range(200):
        t = rng.choice(corpus)
        fns = [_random_fn(rng) for _ in range(rng.randint(0, 6))]
        full = extract(t, ("lines_changed", "tool_calls", "total_tokens", "tool_diversity", "file_ops",
                           "tool_results_ok", "tool_results", "agent_turns"))
        expected = 0.0
        for f in fns:
            p = f.params
            if f.family == "cap":
                expected += min(p["w"] * full[f.features[0]], p["M"])
            elif f.family == "ratio":
                tgt, tot = full[f.features[0]], full[f.features[1]]
                expected += min(p["M"] * tgt / tot, p["M"]) if tot > 0 else 0.0
            else:
                c = full[f.features[0]]
                if c < p["c_min"]:
                    expected += 0
                elif c <= p["c_opt"]:
                    expected += p["M"]
                else:
                    expected += max(p["M"] - p["p"] * (c - p["c_opt"]), p["m"])
        assert total_score(t, fns) == pytest.approx(expected, rel=1e-12, abs=1e-12)
        # additivity over a split of the function set
        k = rng.randint(0, len(fns))
        assert total_score(t, fns) == pytest.approx(total_score(t, fns[:k]) + total_score(t, fns[k:]), abs=1e-9)


def test_default_scoring_runs():
    for t in make_corpus(10, seed=1):
        assert total_score(t, default_scoring()) >= 0


def test_scoring_function_dict_round_trip():
    for f in default_scoring():
        assert ScoringFunction.from_dict(f.to_dict()) == f
