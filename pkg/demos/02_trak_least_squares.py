"""
Inverting TRAK attribution scores
=================================

TRAK scores are linear in the mean of the selected target gradients, so the
observed scores pin down the selection weights whenever the projection
dimension exceeds the number of targets. Past that point the system is
underdetermined and the attack degrades.
"""

from curation_mia.curation import curate, trak_features
from curation_mia.datamodel import TargetSet, sample_selected
from curation_mia.evaluation import metrics, rows_to_csv, sweep, trak_size_cell
from curation_mia.fixtures import make_trak_fixture
from curation_mia.score_attacks import least_squares_trak, sparse_trak_attack

pool, targets = make_trak_fixture(seed=1, n_pool=1000, n_targets=64, d_proj=128)
truth = sample_selected(TargetSet.full(targets.n), 0.5, seed=1).mask
sys = trak_features(pool)
observed = curate(sys, targets, "trak", k=100, selected=truth).scores

res = least_squares_trak(sys, targets, observed, truth)
print("member weights", res.values[truth][:4], "non-member weights", res.values[~truth][:4])
print("least squares", metrics(res))
for solver in ("omp", "iht"):
    print(solver, metrics(sparse_trak_attack(sys, targets, observed, int(truth.sum()), solver, truth)))

# Growing the selected set with d_proj fixed at 128.
rows = sweep([{"n_selected": s} for s in (8, 32, 128, 512)], trak_size_cell, seeds=range(3))
print(rows_to_csv(rows))
