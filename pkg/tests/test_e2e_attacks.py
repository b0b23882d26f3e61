import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curation_mia.curation import curate, top_k_select, trak_features, trak_scores
from curation_mia.datamodel import EmbeddingMatrix, GradientMatrix, NotFoundError, ParameterError
from curation_mia.e2e_attacks import (FingerprintPlan, append_fingerprints, copy_fingerprint_candidates,
                                      correspondence_scores, craft_image_canary, craft_image_fingerprints,
                                      craft_trak_canary, craft_trak_fingerprints, fit_target_model,
                                      image_e2e_scores, image_selection_prob, influence_counts,
                                      oracle_attack_image, percentile_rank, refactorized_score,
                                      selections_from_mask, sherman_morrison_score, straddle_scores,
                                      trak_e2e_attack, trak_snr)
from curation_mia.evaluation import auc

from conftest import unit_rows


def test_percentile_rank_basics():
    ref = np.arange(11.0)
    assert np.allclose(percentile_rank([0, 5, 10, 2.5], ref), [0, 50, 100, 25])
    assert percentile_rank([-1], ref)[0] == 0 and percentile_rank([99], ref)[0] == 100
    assert percentile_rank([3.0], [3.0, 3.0])[0] == 50.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.floats(-120, 120), st.floats(0, 30))
def test_percentile_rank_monotone_and_bounded(ref, v, step):
    a, b = percentile_rank([v, v + step], ref)
    assert 0 <= a <= b <= 100


def test_sherman_morrison_matches_refactorization():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((60, 8))
    sys = trak_features(GradientMatrix(x), lam=0.5)
    p, mu = rng.standard_normal(8), rng.standard_normal(8)
    fast = sherman_morrison_score(sys, p, mu, 1.3)
    slow = refactorized_score(x, 0.5, p, mu, 1.3)
    assert fast == pytest.approx(slow, rel=1e-10)


def test_appended_fingerprint_score_equals_sherman_morrison():
    rng = np.random.default_rng(1)
    pool = GradientMatrix(rng.standard_normal((50, 6)))
    targets = GradientMatrix(rng.standard_normal((4, 6)))
    sys = trak_features(pool, lam=0.2)
    p = rng.standard_normal(6)
    aug = trak_features(append_fingerprints(pool, p, 1.0), lam=0.2)
    full = trak_scores(aug, targets)[-1]
    assert full == pytest.approx(sherman_morrison_score(sys, p, targets.data.mean(axis=0), 1.0), rel=1e-9)


def test_correspondence_prefers_isolating_candidates():
    sims = np.array([[0.9, 0.9], [0.8, 0.1]])
    c = correspondence_scores(sims, 0, 0.5)
    assert c[1] > c[0]
    assert np.allclose(correspondence_scores(sims, 0, 1.0), sims[:, 0])


def test_image_fingerprint_plan_round_trip(image_case):
    pool, targets, truth = image_case
    plan = craft_image_fingerprints(pool, targets, k_nn=20)
    assert len(plan.mapping) == targets.n
    assert sum(plan.inverse_counts.values()) == targets.n
    assert FingerprintPlan.from_json(plan.to_json(seed=1)) == plan
    with pytest.raises(ParameterError):
        craft_image_fingerprints(pool, targets, alpha=1.5)


def test_image_e2e_scores_detect_members(image_case):
    pool, targets, truth = image_case
    plan = craft_image_fingerprints(pool, targets, k_nn=20)
    mask = curate(pool, targets, "image", 40, truth).mask
    res = image_e2e_scores(plan, selections_from_mask(plan, mask), truth)
    assert auc(res) > 0.8
    with pytest.raises(ParameterError):
        image_e2e_scores(plan, {}, truth)


def test_selection_probability_curve():
    assert image_selection_prob(50.0) == pytest.approx(0.5)
    assert image_selection_prob(100.0) > 0.99 and image_selection_prob(0.0) < 0.01


def test_influence_counts_sum_to_pool():
    pool, targets = EmbeddingMatrix(np.eye(3)[[0, 0, 1]]), EmbeddingMatrix(np.eye(3))
    assert list(influence_counts(pool, targets)) == [2, 1, 0]


def test_straddle_rule():
    best = np.array([0, 1, 0])
    scores, conf = straddle_scores(best, [80, 95, 80], [97, 99, 85], 90, [True, True])
    assert np.allclose(conf, [7, 4, 0])
    assert np.allclose(scores, [7, 0, 0])
    scores, _ = straddle_scores(best, [80, 95, 80], [97, 99, 85], 90, [False, True])
    assert np.all(scores == 0)


def test_trak_fingerprints_pick_highest_snr(trak_case):
    pool, targets, truth = trak_case
    sys = trak_features(pool)
    model = fit_target_model(targets)
    cands = copy_fingerprint_candidates(targets)
    plan = craft_trak_fingerprints(sys, targets, cands, model)
    for j in range(targets.n):
        snr = [trak_snr(sys, c, targets.data[j], model) for c in cands]
        assert plan.best[j] == int(np.argmax(snr))


def test_trak_e2e_pipeline(trak_case):
    pool, targets, truth = trak_case
    sys = trak_features(pool)
    fps = copy_fingerprint_candidates(targets)
    aug = trak_features(append_fingerprints(pool, fps))
    k = 30
    mask = top_k_select(trak_scores(aug, targets, truth), k)
    scores, plan = trak_e2e_attack(sys, targets, fps, None, mask, k, labels=truth)
    assert scores.values.shape == (targets.n,) and np.all(scores.values >= 0)
    assert 0 < plan.rho < 100
    with pytest.raises(ParameterError):
        trak_e2e_attack(sys, targets, fps, None, mask[:-1], k)


def test_fit_target_model_switches_to_diagonal():
    y = np.random.default_rng(0).standard_normal((5, 600))
    assert fit_target_model(y).diagonal
    assert not fit_target_model(y[:, :10]).diagonal


def test_image_canary_is_most_similar_low_pair():
    rng = np.random.default_rng(2)
    pool = EmbeddingMatrix(unit_rows(rng, 40, 5))
    scores = rng.random(40)
    i, j = craft_image_canary(pool, scores, percentile_cap=50)
    low = np.flatnonzero(scores <= np.percentile(scores, 50))
    sims = pool.data[low] @ pool.data[low].T
    np.fill_diagonal(sims, -np.inf)
    assert pool.data[i] @ pool.data[j] == pytest.approx(sims.max())
    with pytest.raises(NotFoundError):
        craft_image_canary(pool, scores, percentile_cap=0)


def test_trak_canary_returns_max_snr():
    rng = np.random.default_rng(3)
    sys = trak_features(GradientMatrix(rng.standard_normal((30, 4))))
    model = fit_target_model(rng.standard_normal((10, 4)))
    probes, cans = rng.standard_normal((5, 4)), rng.standard_normal((6, 4))
    i, j, snr = craft_trak_canary(sys, probes, cans, model)
    assert snr == pytest.approx(trak_snr(sys, probes[i], cans[j], model))


def test_oracle_values(image_case):
    pool, targets, truth = image_case
    observed = curate(pool, targets, "image", 40, truth).scores
    res = oracle_attack_image(pool, targets, observed, labels=truth)
    assert set(np.unique(res.values)) <= {0.0, 0.5, 1.0}
    assert np.all(res.values[~truth] <= 0.5)
