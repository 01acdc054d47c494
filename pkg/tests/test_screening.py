import math

import numpy as np

from conftest import build, constant_model
from trajcurate.features import DEFAULT_FEATURES, NormStats, extract
from trajcurate.lrfit import ScreeningModel, sigmoid
from trajcurate.screening import decide, screen, summarize
from trajcurate.synthetic import make_corpus


def test_threshold_boundary():
    t = build(["u", "a"])
    m = constant_model(0.0)
    assert decide(t, m, 0.5).kept  # p == tau keeps
    assert not decide(t, m, 0.51).kept
    assert decide(t, m, 0.0).kept
    assert not decide(t, constant_model(-50), 1.0).kept


def test_probability_matches_direct_computation():
    names = ("tool_calls", "agent_turns")
    m = ScreeningModel(names, np.array([0.7, -0.2]), 0.3, NormStats(names, np.array([2.0, 3.0]), np.array([1.5, 2.0])))
    for t in make_corpus(20, seed=4):
        v = extract(t, names)
        z = 0.3 + 0.7 * (v["tool_calls"] - 2) / 1.5 - 0.2 * (v["agent_turns"] - 3) / 2
        assert math.isclose(decide(t, m).probability, 1 / (1 + math.exp(-z)), rel_tol=1e-12)


def test_screen_order_and_parallel_agree():
    ts = make_corpus(30, seed=2)
    m = constant_model(0.0, names=DEFAULT_FEATURES)
    kept, ds = screen(ts, m, 0.5)
    kept4, ds4 = screen(ts, m, 0.5, workers=4)
    assert [d.task_id for d in ds] == [t.task_id for t in ts]
    assert ds == ds4 and kept == kept4 == ts


def test_screen_monotone_in_tau():
    names = ("tool_success_rate",)
    m = ScreeningModel(names, np.array([2.0]), 0.0, NormStats(names, np.array([0.6]), np.array([0.2])))
    ts = make_corpus(50, seed=8)
    prev = None
    for tau in (0.0, 0.25, 0.5, 0.75, 1.0):
        kept = {t.task_id for t in screen(ts, m, tau)[0]}
        assert prev is None or kept <= prev
        prev = kept


def test_extraction_error_becomes_decision():
    m = constant_model(0.0, names=("no_such_feature",))
    d = decide(build(["u"]), m)
    assert not d.kept and d.probability is None and "UnknownFeature" in d.error
    assert summarize([d]) == {"input": 1, "kept": 0, "dropped": 0, "errors": 1}
    assert d.to_dict()["error"]


def test_sigmoid_consistent_with_model():
    assert decide(build(["u"]), constant_model(1.5)).probability == sigmoid(1.5)
