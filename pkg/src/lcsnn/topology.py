"""Network wiring: locally-connected layer and fully-connected baseline.

Both topologies are held as a dense (n_inputs x n_neurons) weight matrix
plus index structure. LC output neurons are ordered field-major: neuron
index = field_index * n_filters + filter_index. Lateral inhibition is
grouped: neurons inhibit every other neuron in their group (the group is
the receptive field for LC, the whole layer for the baseline), which also
serves as the patch partition for per-location classification.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .plasticity import normalize_incoming


class GeometryError(ValueError):
    """Receptive-field geometry that cannot tile the input."""


def compute_receptive_fields(
    input_h: int, input_w: int, k: int, s: int
) -> list[tuple[int, int]]:
    """Row-major (row0, col0) origins of the k x k fields tiled at stride s.

    The first field sits at the upper-left corner; origins advance by s
    while the field stays fully inside the grid. Trailing pixels that
    cannot host a full field are left uncovered.
    """
    if k <= 0 or k > input_h or k > input_w:
        raise GeometryError(f"kernel {k} does not fit a {input_h}x{input_w} input")
    if s <= 0:
        raise GeometryError("stride must be positive")
    rows = range(0, input_h - k + 1, s)
    cols = range(0, input_w - k + 1, s)
    return [(r, c) for r in rows for c in cols]


def _field_pixels(origin: tuple[int, int], k: int, input_w: int) -> np.ndarray:
    r0, c0 = origin
    rr, cc = np.mgrid[r0 : r0 + k, c0 : c0 + k]
    return (rr * input_w + cc).ravel()


@dataclass
class LocalTopology:
    input_h: int
    input_w: int
    k: int
    s: int
    n_filters: int
    inhib_weight: float
    fields: list[tuple[int, int]]
    weights: np.ndarray  # (n_inputs, n_neurons), zero outside receptive fields

    kind = "lc"

    @property
    def n_inputs(self) -> int:
        return self.input_h * self.input_w

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @property
    def n_neurons(self) -> int:
        return self.n_fields * self.n_filters

    @property
    def groups(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_fields), self.n_filters)

    def field_pixels(self, f: int) -> np.ndarray:
        """Flat input indices (row-major, k*k of them) of field f."""
        return _field_pixels(self.fields[f], self.k, self.input_w)

    def field_weights(self, f: int) -> np.ndarray:
        """The (k*k, n_filters) weight block of field f."""
        j0 = f * self.n_filters
        return self.weights[self.field_pixels(f)][:, j0 : j0 + self.n_filters]

    def mask(self) -> np.ndarray:
        m = np.zeros((self.n_inputs, self.n_neurons), dtype=bool)
        for f in range(self.n_fields):
            j0 = f * self.n_filters
            m[self.field_pixels(f)[:, None], j0 : j0 + self.n_filters] = True
        return m

    def copy(self) -> "LocalTopology":
        return replace(self, weights=self.weights.copy())


@dataclass
class BaselineTopology:
    """Fully-connected layer with all-to-all lateral inhibition (minus self)."""

    input_h: int
    input_w: int
    n_neurons_: int
    inhib_weight: float
    weights: np.ndarray

    kind = "baseline"

    @property
    def n_inputs(self) -> int:
        return self.input_h * self.input_w

    @property
    def n_neurons(self) -> int:
        return self.n_neurons_

    @property
    def groups(self) -> np.ndarray:
        return np.zeros(self.n_neurons_, dtype=np.int64)

    def mask(self) -> np.ndarray:
        return np.ones((self.n_inputs, self.n_neurons_), dtype=bool)

    def copy(self) -> "BaselineTopology":
        return replace(self, weights=self.weights.copy())


def build_lc(
    input_h: int,
    input_w: int,
    k: int,
    s: int,
    n_filters: int,
    rng: np.random.Generator,
    *,
    inhib_weight: float = 100.0,
    w_init_max: float = 0.3,
    c_norm: float,
) -> LocalTopology:
    """Locally-connected layer with uniform-random, normalized initial weights."""
    if n_filters < 1:
        raise GeometryError("need at least one filter")
    fields = compute_receptive_fields(input_h, input_w, k, s)
    top = LocalTopology(
        input_h, input_w, k, s, n_filters, inhib_weight, fields,
        weights=np.zeros(0),
    )
    w = rng.uniform(0.0, w_init_max, size=(top.n_inputs, top.n_neurons))
    w *= top.mask()
    normalize_incoming(w, c_norm)
    top.weights = w
    return top


def build_baseline(
    input_h: int,
    input_w: int,
    n_neurons: int,
    rng: np.random.Generator,
    *,
    inhib_weight: float = 100.0,
    w_init_max: float = 0.3,
    c_norm: float,
) -> BaselineTopology:
    """Fully-connected layer; same init scheme as build_lc."""
    if n_neurons < 1:
        raise GeometryError("need at least one neuron")
    n_in = input_h * input_w
    w = rng.uniform(0.0, w_init_max, size=(n_in, n_neurons))
    normalize_incoming(w, c_norm)
    return BaselineTopology(input_h, input_w, n_neurons, inhib_weight, w)


def inhibition_targets(topology, neuron_index: int) -> np.ndarray:
    """Indices inhibited by a spike of neuron_index: its group minus itself."""
    groups = topology.groups
    if not 0 <= neuron_index < topology.n_neurons:
        raise IndexError(f"neuron {neuron_index} out of range")
    same = np.flatnonzero(groups == groups[neuron_index])
    return same[same != neuron_index]


def count_parameters(topology) -> tuple[int, int]:
    """(n_synapses, n_neurons), counting structural synapses (not nonzeros)."""
    if topology.kind == "lc":
        n_syn = topology.n_fields * topology.k * topology.k * topology.n_filters
    else:
        n_syn = topology.n_inputs * topology.n_neurons
    return n_syn, topology.n_neurons
