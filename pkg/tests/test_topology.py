"""Receptive-field geometry, weight layout, and parameter counting."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcsnn.engine import stream_rng
from lcsnn.topology import (
    BaselineTopology,
    GeometryError,
    build_baseline,
    build_lc,
    compute_receptive_fields,
    count_parameters,
    inhibition_targets,
)


def test_fields_12_4_on_20():
    fields = compute_receptive_fields(20, 20, 12, 4)
    # [DERIVED] floor((20-12)/4)+1 = 3 origins per dimension, row-major
    assert len(fields) == 9
    assert fields[:4] == [(0, 0), (0, 4), (0, 8), (4, 0)]
    assert fields[-1] == (8, 8)


def test_fields_full_image_kernel():
    assert compute_receptive_fields(20, 20, 20, 1) == [(0, 0)]


def test_fields_rectangular_input():
    fields = compute_receptive_fields(6, 10, 4, 2)
    # 2 row origins x 4 col origins
    assert len(fields) == 8
    assert fields[0] == (0, 0)
    assert fields[-1] == (2, 6)


def test_fields_geometry_errors():
    with pytest.raises(GeometryError):
        compute_receptive_fields(20, 20, 21, 1)
    with pytest.raises(GeometryError):
        compute_receptive_fields(20, 20, 0, 1)
    with pytest.raises(GeometryError):
        compute_receptive_fields(20, 20, 4, 0)


def _lc(k=12, s=4, n_filters=25, crop=20, seed=0, c_norm=14.4):
    return build_lc(crop, crop, k, s, n_filters, stream_rng(seed, 0), c_norm=c_norm)


def test_lc_shapes_and_layout():
    top = _lc()
    assert top.n_fields == 9
    assert top.n_neurons == 225
    assert top.weights.shape == (400, 225)
    # neuron index = field * n_filters + filter
    np.testing.assert_array_equal(top.groups[:26], [0] * 25 + [1])
    pix = top.field_pixels(1)  # origin (0, 4)
    assert pix[0] == 4 and pix[-1] == 11 * 20 + 15
    assert len(pix) == 144


def test_lc_weights_zero_outside_mask():
    top = _lc(n_filters=3)
    mask = top.mask()
    assert top.weights[~mask].sum() == 0.0
    assert (top.weights[mask] >= 0).all()
    # every column carries exactly k*k structural synapses
    np.testing.assert_array_equal(mask.sum(axis=0), 144)


def test_lc_initial_weights_normalized():
    top = _lc(c_norm=14.4)
    np.testing.assert_allclose(top.weights.sum(axis=0), 14.4, rtol=1e-9)


def test_field_weights_block():
    top = _lc(n_filters=4)
    block = top.field_weights(2)
    assert block.shape == (144, 4)
    np.testing.assert_array_equal(
        block, top.weights[top.field_pixels(2)][:, 8:12]
    )


def test_build_is_deterministic():
    a = _lc(seed=5)
    b = _lc(seed=5)
    c = _lc(seed=6)
    np.testing.assert_array_equal(a.weights, b.weights)
    assert not np.array_equal(a.weights, c.weights)


def test_baseline_shapes():
    top = build_baseline(20, 20, 100, stream_rng(0, 0), c_norm=40.0)
    assert top.n_neurons == 100
    assert top.weights.shape == (400, 100)
    assert top.mask().all()
    np.testing.assert_array_equal(top.groups, np.zeros(100))
    np.testing.assert_allclose(top.weights.sum(axis=0), 40.0, rtol=1e-9)


def test_lc_full_kernel_draws_same_randoms_as_baseline():
    lc = build_lc(20, 20, 20, 1, 100, stream_rng(3, 0), c_norm=40.0)
    fc = build_baseline(20, 20, 100, stream_rng(3, 0), c_norm=40.0)
    np.testing.assert_array_equal(lc.weights, fc.weights)


def test_inhibition_targets_lc():
    top = _lc(n_filters=25)
    targets = inhibition_targets(top, 0)
    np.testing.assert_array_equal(targets, np.arange(1, 25))
    targets = inhibition_targets(top, 30)
    expected = [i for i in range(25, 50) if i != 30]
    np.testing.assert_array_equal(targets, expected)
    with pytest.raises(IndexError):
        inhibition_targets(top, 225)


def test_inhibition_targets_baseline():
    top = build_baseline(20, 20, 10, stream_rng(0, 0), c_norm=40.0)
    np.testing.assert_array_equal(
        inhibition_targets(top, 4), [0, 1, 2, 3, 5, 6, 7, 8, 9]
    )


# [DERIVED] synapses = fields * k^2 * m with fields = (floor((20-k)/s)+1)^2
GOLDEN_COUNTS = [
    (12, 4, 25, 32_400, 225),
    (12, 4, 100, 129_600, 900),
    (16, 2, 250, 576_000, 2_250),
    (14, 2, 250, 784_000, 4_000),
]


@pytest.mark.parametrize("k,s,m,n_syn,n_neurons", GOLDEN_COUNTS)
def test_count_parameters_lc(k, s, m, n_syn, n_neurons):
    top = _lc(k=k, s=s, n_filters=m, c_norm=0.1 * k * k)
    assert count_parameters(top) == (n_syn, n_neurons)
    # structural count equals the mask cardinality
    assert top.mask().sum() == n_syn


def test_count_parameters_baseline():
    top = build_baseline(20, 20, 100, stream_rng(0, 0), c_norm=40.0)
    assert count_parameters(top) == (40_000, 100)


def test_copy_is_deep_for_weights():
    top = _lc(n_filters=2)
    dup = top.copy()
    dup.weights[:] = 0.0
    assert top.weights.sum() > 0


def test_build_validation():
    with pytest.raises(GeometryError):
        build_lc(20, 20, 12, 4, 0, stream_rng(0, 0), c_norm=14.4)
    with pytest.raises(GeometryError):
        build_baseline(20, 20, 0, stream_rng(0, 0), c_norm=40.0)


@settings(max_examples=60, deadline=None)
@given(
    h=st.integers(4, 28),
    w=st.integers(4, 28),
    k=st.integers(1, 28),
    s=st.integers(1, 8),
)
def test_field_cover_property(h, w, k, s):
    """Every field fits inside the grid; origins advance in steps of s."""
    if k > h or k > w:
        with pytest.raises(GeometryError):
            compute_receptive_fields(h, w, k, s)
        return
    fields = compute_receptive_fields(h, w, k, s)
    rows = sorted({r for r, _ in fields})
    cols = sorted({c for _, c in fields})
    assert fields == [(r, c) for r in rows for c in cols]  # row-major grid
    assert rows[0] == 0 and cols[0] == 0
    assert all(r + k <= h for r in rows) and all(c + k <= w for c in cols)
    assert all(b - a == s for a, b in zip(rows, rows[1:]))
    expected = ((h - k) // s + 1) * ((w - k) // s + 1)
    assert len(fields) == expected
