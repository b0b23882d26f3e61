"""
Fingerprints for the final-model threat model
=============================================

An adversary who only sees which of its own injected samples were selected
can still infer membership. For images, each target is mapped to the pool
image that best isolates it. For TRAK, copies of target gradients are
appended to the pool and the adversary checks which ones cross the
selection threshold.
"""

from curation_mia.curation import curate, top_k_select, trak_features, trak_scores
from curation_mia.datamodel import TargetSet, sample_selected
from curation_mia.e2e_attacks import (append_fingerprints, copy_fingerprint_candidates, craft_image_fingerprints,
                                      image_e2e_scores, selections_from_mask, trak_e2e_attack)
from curation_mia.evaluation import metrics
from curation_mia.fixtures import make_image_fixture, make_trak_fixture

pool, targets = make_image_fixture(seed=3, n_pool=2000, n_targets=100, d=32)
truth = sample_selected(TargetSet.full(targets.n), 0.5, seed=3).mask
plan = craft_image_fingerprints(pool, targets, alpha=0.5, k_nn=50)
mask = curate(pool, targets, "image", k=200, selected=truth).mask
print("image fingerprints", len(plan.candidates), metrics(image_e2e_scores(plan, selections_from_mask(plan, mask), truth)))

gpool, gtargets = make_trak_fixture(seed=3, n_pool=500, n_targets=40, d_proj=64)
gtruth = sample_selected(TargetSet.full(gtargets.n), 0.5, seed=3).mask
fps = copy_fingerprint_candidates(gtargets)
victim = trak_features(append_fingerprints(gpool, fps))
observed = top_k_select(trak_scores(victim, gtargets, gtruth), 50)
scores, tplan = trak_e2e_attack(trak_features(gpool), gtargets, fps, None, observed, 50, labels=gtruth)
print(f"TRAK fingerprints (rho={tplan.rho:.1f})", metrics(scores))
