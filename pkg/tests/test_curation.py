import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curation_mia.curation import (Method, curate, default_lambda, image_scores, kth_threshold,
                                   project_gradients, rademacher_projection, top_k_select, trak_features,
                                   trak_scores)
from curation_mia.datamodel import EmbeddingMatrix, GradientMatrix, NumericError, ParameterError

from conftest import unit_rows


def test_image_scores_match_brute_force():
    rng = np.random.default_rng(0)
    pool = EmbeddingMatrix(unit_rows(rng, 30, 6))
    targets = EmbeddingMatrix(unit_rows(rng, 7, 6))
    sel = np.array([1, 0, 1, 1, 0, 0, 1], bool)
    expected = [max(float(p @ t) for t, s in zip(targets.data, sel) if s) for p in pool.data]
    assert np.allclose(image_scores(pool, targets, sel), expected, atol=1e-12)


def test_image_score_of_a_target_copy_is_one():
    rng = np.random.default_rng(1)
    targets = EmbeddingMatrix(unit_rows(rng, 5, 4))
    pool = EmbeddingMatrix(np.vstack([targets.data[2], unit_rows(rng, 3, 4)]))
    assert image_scores(pool, targets)[0] == pytest.approx(1.0)


def test_empty_selection_rejected():
    rng = np.random.default_rng(2)
    e = EmbeddingMatrix(unit_rows(rng, 4, 3))
    with pytest.raises(ParameterError):
        image_scores(e, e, np.zeros(4, bool))


def test_trak_scores_match_direct_formula():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((40, 5))
    q = rng.uniform(0.5, 2.0, 40)
    y = rng.standard_normal((6, 5))
    sel = np.array([1, 1, 0, 1, 0, 0], bool)
    sys = trak_features(GradientMatrix(x, q), lam=0.1)
    phi = x @ np.linalg.inv(x.T @ x + 0.1 * np.eye(5))
    expected = (phi @ y[sel].mean(axis=0)) * q
    assert np.allclose(trak_scores(sys, GradientMatrix(y), sel), expected, rtol=1e-10, atol=1e-12)


def test_default_lambda_scales_with_trace():
    x = np.eye(4) * 2
    assert default_lambda(x) == pytest.approx(1e-3 * 16 / 4)


def test_trak_rejects_singular_system():
    with pytest.raises((NumericError, ParameterError)):
        trak_features(GradientMatrix(np.zeros((5, 3))), lam=0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-5, 5), min_size=1, max_size=40), st.data())
def test_top_k_picks_largest_with_index_ties(values, data):
    k = data.draw(st.integers(1, len(values)))
    mask = top_k_select(np.array(values, float), k)
    assert mask.sum() == k
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))[:k]
    assert set(np.flatnonzero(mask)) == set(order)


def test_top_k_validation_and_threshold():
    with pytest.raises(ParameterError):
        top_k_select(np.ones(3), 4)
    with pytest.raises(ParameterError):
        top_k_select(np.ones(3), 0)
    assert kth_threshold([3.0, 1.0, 2.0], 2) == 2.0


def test_curate_dispatches_by_method(image_case, trak_case):
    pool, targets, truth = image_case
    res = curate(pool, targets, Method.IMAGE, 10, truth)
    assert res.mask.sum() == 10 and res.method is Method.IMAGE
    gpool, gt, gtruth = trak_case
    res = curate(trak_features(gpool), gt, "trak", 10, gtruth)
    assert res.selected.shape == (10,)


def test_projection_is_seeded_rademacher():
    p = rademacher_projection(4, 10, 8)
    assert np.array_equal(p, rademacher_projection(4, 10, 8))
    assert set(np.unique(np.abs(p))) == {1 / np.sqrt(8)}
    g = project_gradients(np.ones((3, 10)), p)
    assert g.d_proj == 8
