import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curation_mia.curation import Method, image_scores
from curation_mia.datamodel import ParameterError
from curation_mia.shadow import (OutputKind, ShadowAssignment, build_assignment, in_out_stats, load_ensemble,
                                 run_shadows, save_ensemble, select_kstar)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 20), st.integers(0, 2**31))
def test_assignment_is_balanced(n, half_m, seed):
    a = build_assignment(n, 2 * half_m, seed)
    assert a.membership.shape == (2 * half_m, n)
    assert np.all(a.membership.sum(axis=0) == half_m)


def test_assignment_rejects_odd_m_and_unbalanced_matrix():
    with pytest.raises(ParameterError):
        build_assignment(5, 3, 0)
    with pytest.raises(ParameterError):
        ShadowAssignment(np.array([[1, 1], [1, 0]], bool))


def test_shadow_rows_are_curations_of_member_subsets(image_case):
    pool, targets, _ = image_case
    a = build_assignment(targets.n, 4, 1)
    ens = run_shadows(pool, targets, a, Method.IMAGE, 20)
    for row, member in zip(ens.outputs, a.membership):
        assert np.array_equal(row, image_scores(pool, targets, member))
    masks = ens.as_masks()
    assert masks.kind is OutputKind.MASKS and np.all(masks.outputs.sum(axis=1) == 20)


def test_in_out_stats_and_kstar():
    member = np.array([[1, 0], [0, 1], [1, 0], [0, 1]], bool)
    outputs = np.array([[1.0, 5.0], [0.0, 5.0], [1.0, 5.0], [0.0, 5.0]])
    from curation_mia.shadow import ShadowEnsemble
    ens = ShadowEnsemble(ShadowAssignment(member), outputs, OutputKind.SCORES, 1, Method.IMAGE)
    stats = in_out_stats(ens, 0)
    assert stats.mu_in[0] == 1.0 and stats.mu_out[0] == 0.0
    assert select_kstar(stats) == 0
    assert stats.sigma_in[1] == 0.0
    from curation_mia.score_attacks import gaussian_llr
    assert np.isfinite(gaussian_llr(5.0, 5.0, 0.0, 5.0, 0.0))  # variance floor keeps it finite


def test_ensemble_save_load_round_trip(tmp_path, image_case):
    pool, targets, _ = image_case
    ens = run_shadows(pool, targets, build_assignment(targets.n, 4, 2), "image", 20, "masks")
    save_ensemble(tmp_path / "e", ens, seed=2, note="x")
    back = load_ensemble(tmp_path / "e")
    assert back.kind is OutputKind.MASKS and back.k == 20
    assert np.array_equal(back.outputs, ens.outputs)
    assert np.array_equal(back.assignment.membership, ens.assignment.membership)
