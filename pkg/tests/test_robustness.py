"""Synapse/neuron ablation mechanics and sweep bookkeeping."""
import numpy as np
import pytest
from conftest import tiny_config

from lcsnn.config import build_network
from lcsnn.engine import train
from lcsnn.robustness import (
    AblationSpec,
    ablate,
    delete_synapses,
    remove_neurons,
    robustness_sweep,
    structural_mask,
    summarize,
    sweep_grid,
)


@pytest.fixture(scope="module")
def checkpoint(cropped_synthetic):
    result = train(cropped_synthetic, build_network(tiny_config()), limit=30)
    return result.checkpoint


def test_spec_validation():
    with pytest.raises(ValueError, match="mode"):
        AblationSpec("axon", 0.5)
    with pytest.raises(ValueError, match="p must be"):
        AblationSpec("synapse", 1.5)
    with pytest.raises(ValueError, match="repeats"):
        AblationSpec("neuron", 0.5, repeats=0)


def test_structural_mask_matches_topology(checkpoint):
    mask = structural_mask(checkpoint)
    assert mask.shape == checkpoint.weights.shape
    # LC: every neuron has exactly k*k structural synapses
    np.testing.assert_array_equal(mask.sum(axis=0), checkpoint.k**2)


def test_delete_p0_is_identity(checkpoint):
    out = delete_synapses(checkpoint, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.weights, checkpoint.weights)
    assert out is not checkpoint


def test_delete_p1_zeroes_all_synapses(checkpoint):
    out = delete_synapses(checkpoint, 1.0, np.random.default_rng(0))
    assert not out.weights.any()


def test_delete_never_mutates_input(checkpoint):
    before = checkpoint.weights.copy()
    delete_synapses(checkpoint, 0.7, np.random.default_rng(1))
    np.testing.assert_array_equal(checkpoint.weights, before)


def test_delete_fraction_is_binomial(checkpoint):
    out = delete_synapses(checkpoint, 0.5, np.random.default_rng(42))
    # draws land on every structural synapse, but only previously nonzero
    # entries change observably
    nonzero_before = checkpoint.weights != 0
    m = int(nonzero_before.sum())
    deleted = int((nonzero_before & (out.weights == 0)).sum())
    # [DERIVED] binomial(m, 0.5): 3 sigma = 3 * sqrt(m) / 2
    assert abs(deleted - m / 2) <= 3 * np.sqrt(m) / 2


def test_delete_touches_only_structural_entries(checkpoint):
    mask = structural_mask(checkpoint)
    out = delete_synapses(checkpoint, 1.0, np.random.default_rng(0))
    # non-structural entries were zero before and stay zero
    assert not out.weights[~mask].any()


def test_remove_neurons_zeroes_columns(checkpoint):
    rng = np.random.default_rng(3)
    out = remove_neurons(checkpoint, 0.5, rng)
    col_zero = ~out.weights.any(axis=0)
    col_same = (out.weights == checkpoint.weights).all(axis=0)
    assert (col_zero | col_same).all()
    assert col_zero.any() and col_same.any()


def test_remove_neurons_extremes(checkpoint):
    out = remove_neurons(checkpoint, 0.0, np.random.default_rng(0))
    np.testing.assert_array_equal(out.weights, checkpoint.weights)
    out = remove_neurons(checkpoint, 1.0, np.random.default_rng(0))
    assert not out.weights.any()


def test_ablate_dispatch(checkpoint):
    rng = np.random.default_rng(0)
    assert ablate(checkpoint, "synapse", 0.0, rng).weights.any()
    with pytest.raises(ValueError, match="mode"):
        ablate(checkpoint, "dendrite", 0.5, rng)


def test_sweep_grid_shape():
    specs = sweep_grid()
    assert len(specs) == 20  # 2 modes x 10 probabilities
    assert specs[0].mode == "synapse" and specs[0].p == 0.0
    assert specs[-1].mode == "neuron" and specs[-1].p == 0.9
    specs = sweep_grid(modes=("neuron",), ps=(0.25,), repeats=2, seed=9)
    assert specs == [AblationSpec("neuron", 0.25, 2, 9)]


def test_sweep_rows_in_grid_order(checkpoint, cropped_synthetic):
    subset = cropped_synthetic.subset(6)
    specs = sweep_grid(ps=(0.0, 0.5), repeats=2)
    rows = robustness_sweep(checkpoint, subset, specs, workers=1)
    assert [(r.mode, r.p, r.repeat) for r in rows] == [
        (spec.mode, spec.p, rep) for spec in specs for rep in range(2)
    ]


def test_sweep_deterministic_and_worker_invariant(checkpoint, cropped_synthetic):
    subset = cropped_synthetic.subset(6)
    specs = sweep_grid(modes=("synapse",), ps=(0.3, 0.6), repeats=2)
    serial = robustness_sweep(checkpoint, subset, specs, workers=1)
    again = robustness_sweep(checkpoint, subset, specs, workers=1)
    parallel = robustness_sweep(checkpoint, subset, specs, workers=2)
    assert serial == again == parallel


def test_ablation_draw_independent_of_grid(checkpoint, cropped_synthetic):
    """A cell's accuracy depends on (mode, p, repeat, seed), not grid shape."""
    subset = cropped_synthetic.subset(6)
    alone = robustness_sweep(
        checkpoint, subset, [AblationSpec("neuron", 0.4, repeats=1)]
    )
    in_grid = robustness_sweep(
        checkpoint, subset, sweep_grid(modes=("neuron",), ps=(0.2, 0.4), repeats=1)
    )
    assert alone[0] == in_grid[1]


def test_p0_sweep_matches_unablated_eval(checkpoint, cropped_synthetic):
    from lcsnn.engine import evaluate

    subset = cropped_synthetic.subset(8)
    rows = robustness_sweep(
        checkpoint, subset, [AblationSpec("synapse", 0.0, repeats=1)],
        eval_seed=123,
    )
    direct = evaluate(subset, checkpoint, "ngram", seed=123)
    assert rows[0].accuracy == direct.accuracy


def test_summarize_groups_mean_std():
    from lcsnn.robustness import SweepRow

    rows = [
        SweepRow("synapse", 0.0, 0, 0.8),
        SweepRow("synapse", 0.0, 1, 0.6),
        SweepRow("neuron", 0.5, 0, 0.4),
    ]
    summary = summarize(rows)
    assert summary[0][:2] == ("synapse", 0.0)
    np.testing.assert_allclose(summary[0][2], 0.7)
    np.testing.assert_allclose(summary[0][3], 0.1)
    assert summary[1] == ("neuron", 0.5, 0.4, 0.0)


def test_progress_callback(checkpoint, cropped_synthetic):
    calls = []
    robustness_sweep(
        checkpoint, cropped_synthetic.subset(4),
        [AblationSpec("synapse", 0.5, repeats=2)],
        progress=lambda done, total: calls.append((done, total)),
    )
    assert calls == [(1, 2), (2, 2)]
