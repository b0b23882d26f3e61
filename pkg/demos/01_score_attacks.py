"""
Attacking observed curation scores
==================================

A victim curates a public pool with a private target set: every pool image
is scored by its best cosine similarity to a selected target. We watch those
scores and ask which targets were used.
"""

import numpy as np

from curation_mia.curation import curate
from curation_mia.datamodel import TargetSet, sample_selected
from curation_mia.e2e_attacks import influence_counts, oracle_attack_image
from curation_mia.evaluation import metrics
from curation_mia.fixtures import make_image_fixture
from curation_mia.score_attacks import combine_scores, lira_scores, voting_image
from curation_mia.shadow import build_assignment, run_shadows

pool, targets = make_image_fixture(seed=0, n_pool=3000, n_targets=100, d=32, owned_fraction=0.8)
truth = sample_selected(TargetSet.full(targets.n), 0.5, seed=0).mask
observed = curate(pool, targets, "image", k=300, selected=truth).scores

# Shadow curations: each target sits in exactly half of them.
ensemble = run_shadows(pool, targets, build_assignment(targets.n, 64, seed=0), "image", k=300)

attacks = {
    "lira": lira_scores(ensemble, observed, truth),
    "voting": voting_image(pool, targets, observed, labels=truth),
    "oracle": oracle_attack_image(pool, targets, observed, labels=truth),
}
attacks["combined"] = combine_scores(attacks["lira"], attacks["voting"])

for name, scores in attacks.items():
    m = metrics(scores)
    print(f"{name:9s} AUC {m['auc']:.3f}  TPR@1%FPR {m['tpr@0.01fpr']:.3f}")

# Targets that are nobody's nearest neighbour leave no trace in the scores,
# which is why even the oracle is not perfect here.
print("targets owning no pool sample:", int(np.sum(influence_counts(pool, targets) == 0)))
