"""
Curating a corpus
=================

The whole pipeline on a synthetic corpus: screen runs with a fitted model,
judge the survivors segment by segment, and keep segments above a quality
threshold as SFT records.
"""

import io
import json

from trajcurate.curate import CurationConfig, curate, emit_dataset
from trajcurate.features import extract
from trajcurate.judge import MockJudge
from trajcurate.lrfit import fit, label
from trajcurate.partition import SplitPolicy
from trajcurate.synthetic import make_corpus

train = make_corpus(200, seed=2)
model = fit([(extract(t), label(t.reward)) for t in train])

corpus = make_corpus(60, seed=3, follow_ups=2)
cfg = CurationConfig(tau_global=0.5, tau_seg=7.0)
records, report = curate(corpus, model, MockJudge(), cfg, SplitPolicy(4, 12))

print(json.dumps(report.counts, indent=1))

# raising tau_seg only ever removes records
for tau in (1, 5, 7, 9):
    recs, _ = curate(corpus, model, MockJudge(), CurationConfig(0.5, tau), SplitPolicy(4, 12))
    print(f"tau_seg={tau}: {len(recs)} records")

buf = io.StringIO()
emit_dataset(records[:1], buf)
print("\nfirst record:")
print(json.dumps(json.loads(buf.getvalue()), indent=1)[:1200])

