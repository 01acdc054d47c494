"""Reward labeling, L2-regularized logistic regression and weight mapping.

The optimizer is plain full-batch gradient descent on the mean binary
cross-entropy plus ``(l2/2)*||w||^2`` (bias unregularized). If an epoch
would increase the loss the step size is halved and the epoch retried, so
the recorded loss sequence is non-increasing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import (
    FeatureMismatch,
    FeatureVector,
    NormStats,
    UnknownFeature,
    _stack,
    norm_from_matrix,
    transform,
    transform_matrix,
)
from .scoring import ScoringFunction

FORMAT_VERSION = 1
_Z_LIMIT = 700.0
_P_MAX = float(np.nextafter(1.0, 0.0))


class SingleClassData(ValueError):
    pass


class NonFiniteLoss(ArithmeticError):
    pass


def label(reward: float) -> int:
    """1 iff the reward is strictly above 0.5."""
    return int(reward > 0.5)


def _expit(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(z):
    """Logistic function kept strictly inside (0, 1) for any finite z."""
    z = np.clip(np.asarray(z, dtype=float), -_Z_LIMIT, _Z_LIMIT)
    p = np.minimum(_expit(z), _P_MAX)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.1
    epochs: int = 1000
    l2_lambda: float = 0.01
    convergence_tol: float = 1e-6
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be >= 0")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must be in [0, 1)")


def loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean BCE + (l2/2)||w||^2 and its gradient with respect to (w, b)."""
    # log(1+e^z) - y*z is the BCE written in terms of the logit
    with np.errstate(invalid="ignore", over="ignore"):
        z = X @ w + b
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))
    r = _expit(z) - y
    gw = X.T @ r / len(y) + l2 * w
    gb = float(np.mean(r))
    return loss, gw, gb


@dataclass
class DescentTrace:
    losses: list[float] = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False
    halvings: int = 0
    final_learning_rate: float = 0.0


def gradient_descent(X: np.ndarray, y: np.ndarray, cfg: FitConfig):
    n = X.shape[1]
    w = np.zeros(n)
    b = 0.0
    lr = cfg.learning_rate
    trace = DescentTrace()
    loss, gw, gb = loss_and_grad(w, b, X, y, cfg.l2_lambda)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"initial loss is {loss}")
    trace.losses.append(loss)
    for _ in range(cfg.epochs):
        if max(np.max(np.abs(gw), initial=0.0), abs(gb)) < cfg.convergence_tol:
            trace.converged = True
            break
        for _attempt in range(60):
            w_new = w - lr * gw
            b_new = b - lr * gb
            new_loss, new_gw, new_gb = loss_and_grad(w_new, b_new, X, y, cfg.l2_lambda)
            if not math.isfinite(new_loss):
                raise NonFiniteLoss(f"loss became {new_loss} at epoch {trace.epochs_run}")
            if new_loss <= loss:
                break
            lr *= 0.5
            trace.halvings += 1
        else:
            # step shrank to nothing: we are at a numerical minimum
            trace.converged = True
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, new_gw, new_gb
        trace.losses.append(loss)
        trace.epochs_run += 1
    else:
        trace.converged = max(np.max(np.abs(gw), initial=0.0), abs(gb)) < cfg.convergence_tol
    trace.final_learning_rate = lr
    return w, b, trace


@dataclass(frozen=True)
class FitReport:
    accuracy: float
    f1: float
    correlations: Mapping[str, float]
    degenerate: tuple[str, ...] = ()
    n_samples: int = 0
    evaluated_on: str = "holdout"

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": self.f1,
            "correlations": dict(self.correlations),
            "degenerate": list(self.degenerate),
            "n_samples": self.n_samples,
            "evaluated_on": self.evaluated_on,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitReport":
        return cls(
            float(d["accuracy"]), float(d["f1"]), dict(d["correlations"]),
            tuple(d.get("degenerate", ())), int(d.get("n_samples", 0)), d.get("evaluated_on", "holdout"),
        )


@dataclass(frozen=True)
class ScreeningModel:
    feature_names: tuple[str, ...]
    weights: np.ndarray
    bias: float
    norm: NormStats
    fit_report: FitReport | None = None

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if len(self.weights) != len(self.feature_names):
            raise FeatureMismatch("weights and feature_names differ in length")
        if self.norm.names != self.feature_names:
            raise FeatureMismatch("norm stats were fitted on a different feature ordering")
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")

    def __eq__(self, other):
        if not isinstance(other, ScreeningModel):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.weights, other.weights)
            and self.bias == other.bias
            and self.norm == other.norm
            and self.fit_report == other.fit_report
        )

    def probability(self, v: FeatureVector) -> float:
        return predict_proba(self, v)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": [float(x) for x in self.weights],
            "bias": float(self.bias),
            "norm": self.norm.to_dict(),
            "fit_report": self.fit_report.to_dict() if self.fit_report else None,
            "format_version": FORMAT_VERSION,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScreeningModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        names = tuple(d["feature_names"])
        norm = NormStats(names, np.asarray(d["norm"]["mean"], float), np.asarray(d["norm"]["std"], float))
        report = FitReport.from_dict(d["fit_report"]) if d.get("fit_report") else None
        return cls(names, np.asarray(d["weights"], float), float(d["bias"]), norm, report)

    @classmethod
    def from_json(cls, text: str) -> "ScreeningModel":
        return cls.from_dict(json.loads(text))


def predict_proba(m: ScreeningModel, x) -> float:
    """sigma(w.x + b). ``x`` is a FeatureVector or an already standardized vector."""
    if isinstance(x, FeatureVector):
        if x.names != m.feature_names:
            raise FeatureMismatch(f"vector features {x.names} do not match model {m.feature_names}")
        xt = transform(x, m.norm)
    else:
        xt = np.asarray(x, dtype=float)
        if xt.shape != m.weights.shape:
            raise FeatureMismatch(f"expected {len(m.weights)} standardized features, got {xt.shape}")
    return sigmoid(float(m.weights @ xt) + m.bias)


def _split(y: np.ndarray, cfg: FitConfig):
    """Stratified seeded shuffle; returns (train_idx, holdout_idx)."""
    rng = np.random.default_rng(cfg.seed)
    train, hold = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(len(idx) * cfg.holdout_fraction))
        # each class keeps at least one training example
        k = min(k, len(idx) - 1)
        hold.extend(idx[:k].tolist())
        train.extend(idx[k:].tolist())
    return np.array(sorted(train), dtype=int), np.array(sorted(hold), dtype=int)


def fit(data: Sequence[tuple[FeatureVector, int]], cfg: FitConfig | None = None) -> ScreeningModel:
    cfg = cfg or FitConfig()
    if len(data) < 2:
        raise SingleClassData(f"need at least 2 samples, got {len(data)}")
    names, X = _stack([v for v, _ in data])
    y = np.array([int(lab) for _, lab in data], dtype=float)
    if not set(np.unique(y)) == {0.0, 1.0}:
        raise SingleClassData("training data must contain both labels")
    train_idx, hold_idx = _split(y, cfg)
    norm = norm_from_matrix(names, X[train_idx])
    w, b, _ = gradient_descent(transform_matrix(X[train_idx], norm), y[train_idx], cfg)
    model = ScreeningModel(names, w, b, norm)
    if len(hold_idx):
        report = validate(model, [data[i] for i in hold_idx])
    else:
        report = validate(model, [data[i] for i in train_idx], evaluated_on="train")
    return ScreeningModel(names, w, b, norm, report)


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    sx, sy = x.std(), y.std()
    if sx < 1e-12 or sy < 1e-12:
        return None
    return float(np.clip(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy), -1.0, 1.0))


def validate(
    m: ScreeningModel,
    holdout: Sequence[tuple[FeatureVector, int]],
    threshold: float = 0.5,
    evaluated_on: str = "holdout",
) -> FitReport:
    """Accuracy, positive-class F1 and per-feature Pearson correlation with the label."""
    if not holdout:
        raise ValueError("holdout set is empty")
    names, X = _stack([v for v, _ in holdout])
    if names != m.feature_names:
        raise FeatureMismatch(f"holdout features {names} do not match model {m.feature_names}")
    y = np.array([int(lab) for _, lab in holdout])
    probs = sigmoid(transform_matrix(X, m.norm) @ m.weights + m.bias)
    pred = (np.atleast_1d(probs) >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    denom = 2 * tp + fp + fn
    f1 = 2 * tp / denom if denom else 0.0
    corr: dict[str, float] = {}
    degenerate = []
    for j, name in enumerate(names):
        r = _pearson(X[:, j], y.astype(float))
        if r is None:
            degenerate.append(name)
            r = 0.0
        corr[name] = r
    return FitReport(float(np.mean(pred == y)), float(f1), corr, tuple(degenerate), len(y), evaluated_on)


def weights_to_theta(m: ScreeningModel, fns: Sequence[ScoringFunction]) -> list[ScoringFunction]:
    """Map fitted weights onto cap slopes and decay penalties.

    With ``scale = M / max|w|``, a cap function gets ``w := w_i * scale``
    and a decay function ``p := max(0, -w_i) * scale``. Ratio functions are
    returned unchanged. All-zero weights map every parameter to 0.
    """
    wmax = float(np.max(np.abs(m.weights), initial=0.0))
    out = []
    for f in fns:
        if f.family == "ratio":
            out.append(f)
            continue
        name = f.features[0]
        if name not in m.feature_names:
            raise UnknownFeature(name)
        wi = float(m.weights[m.feature_names.index(name)])
        scale = f.params["M"] / wmax if wmax > 0 else 0.0
        if f.family == "cap":
            out.append(f.with_params(w=wi * scale))
        else:
            out.append(f.with_params(p=max(0.0, -wi) * scale))
    return out
