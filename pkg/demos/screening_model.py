"""
Fitting the screening model
===========================

Synthesize a small corpus of agent runs, turn each run into a feature
vector, and fit the logistic-regression pre-screen from scratch.
"""

import numpy as np

from trajcurate.features import extract
from trajcurate.lrfit import FitConfig, fit, label, predict_proba, weights_to_theta
from trajcurate.scoring import default_scoring, total_score
from trajcurate.synthetic import make_corpus

# 300 seeded runs; about half succeed
corpus = make_corpus(300, seed=1)

# one feature vector and one binary label per run (reward above 0.5 is a success)
data = [(extract(t), label(t.reward)) for t in corpus]
print("features:", ", ".join(data[0][0].names))

model = fit(data, FitConfig(epochs=2000, l2_lambda=0.01, seed=0))
rep = model.fit_report
print(f"\nheld-out accuracy {rep.accuracy:.3f}, F1 {rep.f1:.3f} on {rep.n_samples} runs")

# weights live in standardized units, so their sizes compare directly
order = np.argsort(-np.abs(model.weights))
for i in order:
    name = model.feature_names[i]
    print(f"  {name:26s} w={model.weights[i]:+.3f}  corr={rep.correlations[name]:+.3f}")

# probabilities for a few runs next to their rewards
for t, (v, y) in list(zip(corpus, data))[:5]:
    print(f"{t.task_id}: reward {t.reward:.2f} label {y}  p={predict_proba(model, v):.3f}")

# fitted weights can also set the scale of the hand-written scoring functions
fns = weights_to_theta(model, default_scoring())
for f in fns:
    print(f"  {f.name:38s} {f.params}")
print("total score of the first run:", round(total_score(corpus[0], fns), 3))
