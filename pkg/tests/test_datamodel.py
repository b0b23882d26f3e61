import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from curation_mia.datamodel import (EmbeddingMatrix, FormatError, GradientMatrix, ParameterError, TargetSet,
                                    generate_embeddings, generate_gradients, load_matrix, sample_selected,
                                    save_matrix, substream)


def test_substreams_are_independent_and_reproducible():
    a = substream(7, "rows").standard_normal(5)
    assert np.array_equal(a, substream(7, "rows").standard_normal(5))
    assert not np.array_equal(a, substream(7, "centers").standard_normal(5))
    assert not np.array_equal(a, substream(8, "rows").standard_normal(5))
    assert not np.array_equal(substream(1, "x", 0).random(3), substream(1, "x", 1).random(3))


def test_embedding_rows_must_be_unit():
    with pytest.raises(ParameterError):
        EmbeddingMatrix(np.ones((3, 4)))
    EmbeddingMatrix(np.ones((3, 4)), row_norm=False)
    m = EmbeddingMatrix.normalized(np.ones((3, 4)))
    assert np.allclose(np.linalg.norm(m.data, axis=1), 1.0)


def test_embedding_rejects_nan():
    bad = np.eye(3)
    bad[0, 0] = np.nan
    with pytest.raises(ParameterError):
        EmbeddingMatrix(bad)


def test_gradient_q_defaults_to_ones_and_validates():
    g = GradientMatrix(np.zeros((4, 2)))
    assert np.array_equal(g.q, np.ones(4))
    with pytest.raises(ParameterError):
        GradientMatrix(np.zeros((4, 2)), np.ones(3))


def test_targetset_json_round_trip():
    ts = TargetSet((3, 1, 4), (True, False, True))
    back = TargetSet.from_json(ts.to_json(note="x"))
    assert back == ts
    assert ts.selected_ids == [3, 4]


def test_targetset_validation():
    with pytest.raises(ParameterError):
        TargetSet((1, 1))
    with pytest.raises(FormatError):
        TargetSet.from_json('{"indices": [0, 1], "selected": [5]}')
    with pytest.raises(FormatError):
        TargetSet.from_json("{}")


def test_sample_selected_count_and_determinism():
    ts = TargetSet.full(101)
    a = sample_selected(ts, 0.5, 9)
    assert a.mask.sum() == 51
    assert a == sample_selected(ts, 0.5, 9)
    with pytest.raises(ParameterError):
        sample_selected(ts, 0.0, 9)


def test_generators_are_seeded_and_unit():
    e = generate_embeddings(1, 50, 8, clusters=3)
    assert np.allclose(np.linalg.norm(e.data, axis=1), 1.0, atol=1e-6)
    assert np.array_equal(e.data, generate_embeddings(1, 50, 8, clusters=3).data)
    g = generate_gradients(1, 10, 4, signal=np.ones(4))
    assert g.data.shape == (10, 4)
    with pytest.raises(ParameterError):
        generate_embeddings(1, 0, 8)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=12),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_matrix_file_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("m") / "a.curm"
    save_matrix(path, arr)
    assert np.array_equal(load_matrix(path), arr)


def test_matrix_file_header_layout(tmp_path):
    path = tmp_path / "a.curm"
    save_matrix(path, np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = path.read_bytes()
    assert struct.unpack_from("<4sIQQ", raw) == (b"CURM", 1, 2, 3)
    assert len(raw) == 24 + 6 * 4


@pytest.mark.parametrize("mutate", ["magic", "version", "truncate"])
def test_matrix_file_corruption(tmp_path, mutate):
    path = tmp_path / "a.curm"
    save_matrix(path, np.ones((2, 2)))
    raw = bytearray(path.read_bytes())
    if mutate == "magic":
        raw[:4] = b"XXXX"
    elif mutate == "version":
        raw[4] = 9
    else:
        raw = raw[:-1]
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_matrix(path)


def test_generated_fixture_survives_file_round_trip(tmp_path):
    e = generate_embeddings(2, 20, 5)
    save_matrix(tmp_path / "e.curm", e)
    assert np.array_equal(load_matrix(tmp_path / "e.curm").astype(np.float64), e.data)
