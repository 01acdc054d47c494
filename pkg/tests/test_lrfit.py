import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajcurate.features import FeatureMismatch, FeatureVector, NormStats, UnknownFeature
from trajcurate.lrfit import (
    FitConfig,
    NonFiniteLoss,
    ScreeningModel,
    SingleClassData,
    fit,
    gradient_descent,
    label,
    loss_and_grad,
    predict_proba,
    sigmoid,
    validate,
    weights_to_theta,
)
from trajcurate.scoring import ScoringFunction

NAMES = ("f1", "f2")


def separable(n=200, seed=0):
    """Two informative features; the label is the sign of 2*x1 - 1.5*x2 with a margin."""
    rng = np.random.default_rng(seed)
    data = []
    while len(data) < n:
        x = rng.normal(size=2)
        s = 2 * x[0] - 1.5 * x[1]
        if abs(s) < 0.3:
            continue
        # raw features on very different scales; standardization must cope
        data.append((FeatureVector(NAMES, (10 * x[0] + 50, 0.1 * x[1])), int(s > 0)))
    return data


def manual_model(w, b, mean=(0.0, 0.0), std=(1.0, 1.0), names=NAMES):
    return ScreeningModel(names, np.array(w, float), b, NormStats(names, np.array(mean, float), np.array(std, float)))


@pytest.mark.parametrize("r,y", [(0.7, 1), (0.5, 0), (0.0, 0), (0.5000001, 1), (1.0, 1)])
def test_label(r, y):
    assert label(r) == y


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    m = manual_model([1, 0], 0)
    assert predict_proba(m, [2.0, 5.0]) == pytest.approx(0.880797, abs=1e-6)
    assert predict_proba(m, [2.0, 5.0]) == pytest.approx(1 / (1 + math.exp(-2)), rel=1e-15)


def test_sigmoid_extremes():
    for z in (-800.0, -1e308, -700.0):
        p = sigmoid(z)
        assert 0 < p <= 1e-300
    for z in (40.0, 800.0, 1e308):
        assert 0.5 < sigmoid(z) < 1


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_sigmoid_open_interval(z):
    assert 0 < sigmoid(z) < 1


def test_predict_proba_mismatch():
    m = manual_model([1, 0], 0)
    with pytest.raises(FeatureMismatch):
        predict_proba(m, [1.0])
    with pytest.raises(FeatureMismatch):
        predict_proba(m, FeatureVector(("a", "b"), (1, 2)))
    assert predict_proba(m, FeatureVector(NAMES, (2.0, 9.0))) == pytest.approx(sigmoid(2.0))


def _numeric_grad(w, b, X, y, lam, h=1e-6):
    gw = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        gw[i] = (loss_and_grad(w + e, b, X, y, lam)[0] - loss_and_grad(w - e, b, X, y, lam)[0]) / (2 * h)
    gb = (loss_and_grad(w, b + h, X, y, lam)[0] - loss_and_grad(w, b - h, X, y, lam)[0]) / (2 * h)
    return gw, gb


def _rel_err(a, n):
    return np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 4))
    y = (rng.random(50) > 0.5).astype(float)
    worst = 0.0
    for _ in range(10):
        w = rng.normal(size=4)
        b = float(rng.normal())
        lam = float(rng.uniform(0, 1))
        _, gw, gb = loss_and_grad(w, b, X, y, lam)
        nw, nb = _numeric_grad(w, b, X, y, lam)
        worst = max(worst, _rel_err(np.append(gw, gb), np.append(nw, nb)))
    assert worst < 1e-5


def test_fit_separable():
    data = separable()
    m = fit(data)
    assert m.fit_report.accuracy >= 0.95
    assert m.fit_report.evaluated_on == "holdout" and abs(m.fit_report.n_samples - 40) <= 1
    assert m.weights[0] > 0 and m.weights[1] < 0
    correct = sum((predict_proba(m, v) >= 0.5) == bool(y) for v, y in data)
    assert correct / len(data) >= 0.95


def test_strong_l2_shrinks_weights():
    m = fit(separable(), FitConfig(l2_lambda=1e6))
    assert np.linalg.norm(m.weights) < 1e-2


def test_loss_non_increasing():
    for seed in range(5):
        data = separable(120, seed)
        X = np.array([v.values for v, _ in data])
        X = (X - X.mean(0)) / X.std(0)
        y = np.array([lab for _, lab in data], float)
        for lr in (0.1, 0.05, 5.0):
            _, _, tr = gradient_descent(X, y, FitConfig(learning_rate=lr, epochs=300))
            assert all(b <= a for a, b in zip(tr.losses, tr.losses[1:]))
    # a huge step only works through backoff
    _, _, tr = gradient_descent(X, y, FitConfig(learning_rate=500.0, epochs=50))
    assert tr.halvings > 0


def test_fit_is_deterministic():
    a = fit(separable(), FitConfig(seed=9))
    b = fit(separable(), FitConfig(seed=9))
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias
    assert a.to_json() == b.to_json()


def test_fit_errors():
    data = separable(20)
    with pytest.raises(SingleClassData):
        fit([(v, 1) for v, _ in data])
    with pytest.raises(SingleClassData):
        fit(data[:1])
    bad = [(FeatureVector(NAMES, (float("nan"), 1.0)), i % 2) for i in range(6)]
    with pytest.raises((NonFiniteLoss, ValueError)):
        fit(bad)


def test_fit_tiny_set_reports_on_train():
    data = [(FeatureVector(NAMES, (float(i), 0.0)), int(i >= 2)) for i in range(4)]
    m = fit(data)
    assert m.fit_report.evaluated_on == "train"


def test_convergence_tolerance_stops_early():
    data = separable(100)
    X = np.array([v.values for v, _ in data])
    X = (X - X.mean(0)) / X.std(0)
    y = np.array([lab for _, lab in data], float)
    _, _, tr = gradient_descent(X, y, FitConfig(l2_lambda=1.0, convergence_tol=1e-4, epochs=100000))
    assert tr.converged and tr.epochs_run < 100000


def test_validate_perfect_and_negative():
    names = ("x",)
    hold = [(FeatureVector(names, (float(y),)), y) for y in (0, 1) * 5]
    perfect = manual_model([10.0], 0.0, (0.5,), (0.5,), names)
    r = validate(perfect, hold)
    assert r.accuracy == 1.0 and r.f1 == 1.0
    assert r.correlations["x"] == pytest.approx(1.0)
    negative = manual_model([0.0], -10.0, (0.5,), (0.5,), names)
    r = validate(negative, hold)
    assert r.accuracy == 0.5 and r.f1 == 0.0


def test_validate_degenerate_feature():
    hold = [(FeatureVector(NAMES, (float(y), 3.0)), y) for y in (0, 1, 0, 1)]
    r = validate(manual_model([1, 0], 0, (0.5, 3.0), (0.5, 1.0)), hold)
    assert r.correlations["f2"] == 0.0 and r.degenerate == ("f2",)


def test_model_json_round_trip():
    m = fit(separable(60))
    again = ScreeningModel.from_json(m.to_json())
    assert again == m
    with pytest.raises(ValueError):
        ScreeningModel.from_dict({**m.to_dict(), "format_version": 2})


def test_weights_to_theta_example():
    m = manual_model([2.0, -1.0], 0.0)
    fns = [
        ScoringFunction("cap", ("f1",), {"w": 1, "M": 10}),
        ScoringFunction("decay", ("f2",), {"c_min": 0, "c_opt": 5, "p": 1, "M": 10, "m": 0}),
        ScoringFunction("ratio", ("f1", "f2"), {"M": 10}),
    ]
    cap, decay, ratio = weights_to_theta(m, fns)
    assert cap.params["w"] == 10.0
    assert decay.params["p"] == 5.0
    assert ratio == fns[2]


def test_weights_to_theta_zero_and_unknown():
    fns = [ScoringFunction("cap", ("f1",), {"w": 3, "M": 10}),
           ScoringFunction("decay", ("f2",), {"c_min": 0, "c_opt": 5, "p": 1, "M": 10, "m": 0})]
    cap, decay = weights_to_theta(manual_model([0.0, 0.0], 1.0), fns)
    assert cap.params["w"] == 0 and decay.params["p"] == 0
    with pytest.raises(UnknownFeature):
        weights_to_theta(manual_model([1.0, 1.0], 0.0), [ScoringFunction("cap", ("zz",), {"w": 1, "M": 1})])


@given(st.lists(st.floats(-100, 100).filter(lambda x: abs(x) > 1e-6), min_size=2, max_size=2),
       st.floats(0.01, 100))
def test_weights_to_theta_scale_equivariant(w, k):
    fns = [ScoringFunction("cap", ("f1",), {"w": 3, "M": 10}),
           ScoringFunction("decay", ("f2",), {"c_min": 0, "c_opt": 5, "p": 1, "M": 10, "m": 0})]
    a = weights_to_theta(manual_model(w, 0.0), fns)
    b = weights_to_theta(manual_model([k * x for x in w], 0.0), fns)
    for fa, fb in zip(a, b):
        for key in fa.params:
            assert fa.params[key] == pytest.approx(fb.params[key], rel=1e-12, abs=1e-12)
