"""
Safe splits, batches and sliding memory
=======================================

Long runs are cut into batches at positions that never separate a tool
call from its result. Each batch is judged with a short memory of the
batches before it.
"""

from trajcurate.judge import MockJudge, render_batch
from trajcurate.mapreduce import map_trajectory, reduce
from trajcurate.partition import SplitPolicy, partition, safety_pattern
from trajcurate.synthetic import make_corpus

t = make_corpus(1, seed=4, good_fraction=1.0, follow_ups=2)[0]
print(f"{t.task_id}: {t.n_steps} steps")
print("roles :", " ".join(s.role[0] for s in t.steps))
print("safe  :", " ".join(map(str, safety_pattern(t))))

policy = SplitPolicy(l_min=3, l_max=6)
batches = partition(t, policy)
for b in batches:
    print(f"batch {b.k}: steps {b.start}-{b.end}{'  (forced)' if b.forced else ''}")

print("\nwhat the judge sees for batch 1:\n")
print(render_batch(t, batches[0]))

# the mock judge scores from quality annotations stored with each run
judge = MockJudge(memory_cap=200)
abstract = map_trajectory(t, batches, judge)
for req, resp in judge.log:
    print(f"\nbatch {req.batch_bounds}: memory in = ...{req.memory_in[-60:]!r}")
    for s in resp.segments:
        print(f"   segment {s.start}-{s.end} score {s.score:.2f} intent {s.intent!r}")

ev = reduce(abstract)
print(f"\nmean {ev.mean_score:.2f}  min {ev.min_score:.2f}  loop {ev.loop_flag}  e_global {ev.e_global:.2f}")
