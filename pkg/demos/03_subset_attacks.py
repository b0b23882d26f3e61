"""
Attacking the curated subset
============================

Here only the selected pool indices leak, not the scores. Binary LiRA models
the selection bit per pool sample; the soft variant smooths shadow scores
before thresholding; iterative voting rebuilds the target set by curating
under a shrinking hypothesis until the selections agree.
"""

from curation_mia.curation import curate
from curation_mia.datamodel import TargetSet, sample_selected
from curation_mia.evaluation import metrics
from curation_mia.fixtures import make_image_fixture
from curation_mia.shadow import build_assignment, run_shadows
from curation_mia.subset_attacks import binary_lira_scores, binary_lira_soft_scores, iterative_voting

pool, targets = make_image_fixture(seed=2, n_pool=2000, n_targets=100, d=32)
truth = sample_selected(TargetSet.full(targets.n), 0.5, seed=2).mask
mask = curate(pool, targets, "image", k=200, selected=truth).mask

ensemble = run_shadows(pool, targets, build_assignment(targets.n, 32, seed=2), "image", k=200)
print("binary LiRA      ", metrics(binary_lira_scores(ensemble, mask, labels=truth)))
print("soft binary LiRA ", metrics(binary_lira_soft_scores(ensemble, 200, mask, labels=truth)))

trace, scores = iterative_voting(pool, targets, mask, k=200, labels=truth)
for r in trace.records:
    print(f"iter {r.iteration}: |H|={r.hypothesis_size} J={r.jaccard:.4f}")
print("iterative voting", trace.status, metrics(scores))
