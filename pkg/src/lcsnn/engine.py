"""Simulation engine: presentation loop, training, evaluation, checkpoints.

Training is a single logical stream. Every RNG draw comes from a
`SeedSequence([seed, stream, counter])` substream, so results are
independent of worker count and chunking:

    stream 0  weight initialization
    stream 1  per-epoch shuffle (counter = epoch)
    stream 2  training encodes (counter = presentation index)
    stream 3  model-selection batch draws (counter = selection round)
    stream 4  model-selection encodes (counter = running presentation count)
    stream 5  evaluation encodes (counter = position in the eval dataset)
    stream 6  classifier-refit batch draw (counter 0) and encodes (1 + i)

Within a training step the order is: integrate and fire, lateral
inhibition, trace decay, STDP with the decayed traces, then recording
this step's spikes into the traces. Weight normalization and
learning-rate decay run once per example.
"""
from __future__ import annotations

import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from . import classify
from .classify import (
    ClassifierState,
    NeuronLabels,
    fit_classifier_state,
    ngram_from_arrays,
    ngram_to_arrays,
    patch_ngrams_from_arrays,
    patch_ngrams_to_arrays,
)
from .data import Dataset, scale_intensity
from .neurons import LIFState, NeuronParams, SpikeTrain, lif_step, poisson_encode
from .plasticity import (
    LearningParams,
    Traces,
    decay_learning_rates,
    normalize_incoming,
    stdp_update,
)
from .topology import BaselineTopology, LocalTopology, compute_receptive_fields

_S_INIT = 0
_S_SHUFFLE = 1
_S_TRAIN = 2
_S_SELECT = 3
_S_SELECT_ENC = 4
_S_EVAL = 5
_S_REFIT = 6


class ConfigurationError(ValueError):
    """A run was asked for with inconsistent or missing configuration."""


class CheckpointFormatError(ValueError):
    """A checkpoint file that cannot be parsed safely."""


def stream_rng(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, counter]))


@dataclass(frozen=True)
class SimConfig:
    present_ms: float = 250.0
    dt: float = 1.0
    epochs: int = 1
    seed: int = 0
    estimate_every: int = 250
    estimate_size: int = 250
    refit_size: int = 10000
    intensity_scale: float = 0.5

    def __post_init__(self):
        steps = self.present_ms / self.dt
        if self.dt <= 0 or abs(steps - round(steps)) > 1e-9 or steps < 1:
            raise ConfigurationError(
                f"present_ms={self.present_ms} not divisible by dt={self.dt}"
            )
        if self.epochs < 1 or self.estimate_every < 1 or self.estimate_size < 1:
            raise ConfigurationError("epochs and estimation knobs must be >= 1")
        if self.refit_size < 1 or self.intensity_scale <= 0:
            raise ConfigurationError("refit_size and intensity_scale must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.present_ms / self.dt))


@dataclass
class SpikeRecord:
    """Output spikes of one presentation: parallel (timestep, neuron) arrays.

    Events are stored sorted by timestep, ties by ascending neuron index.
    """

    steps: np.ndarray
    neurons: np.ndarray
    n_neurons: int

    @classmethod
    def empty(cls, n_neurons: int) -> "SpikeRecord":
        return cls(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64), n_neurons
        )

    @property
    def n_spikes(self) -> int:
        return len(self.neurons)

    @cached_property
    def per_neuron_counts(self) -> np.ndarray:
        return np.bincount(self.neurons, minlength=self.n_neurons)


class Network:
    """A two-layer network (input spike trains -> LIF population) plus state.

    Owns the mutable pieces of a run: weights (via the topology), neuron
    state, and STDP traces. One Network must only ever be stepped from a
    single thread; evaluation workers each get their own copy.
    """

    def __init__(
        self,
        topology: LocalTopology | BaselineTopology,
        neuron_params: NeuronParams | None = None,
        learn_params: LearningParams | None = None,
        sim: SimConfig | None = None,
    ):
        self.topology = topology
        self.neuron_params = neuron_params or NeuronParams()
        self.learn = learn_params or LearningParams()
        self.sim = sim or SimConfig()
        self.state = LIFState.zeros(topology.n_neurons, self.neuron_params)
        self.traces = Traces.zeros(topology.n_inputs, topology.n_neurons)
        self.mask = topology.mask()
        self._dense = bool(self.mask.all())
        self.groups = np.asarray(topology.groups)
        self._n_groups = int(self.groups.max()) + 1
        self._v_decay = math.exp(-self.sim.dt / self.neuron_params.tau_v)
        self._theta_decay = math.exp(-self.sim.dt / self.neuron_params.tau_theta)
        self._trace_decay = math.exp(-self.sim.dt / self.learn.tau_trace)
        # Evaluation must not move theta: no per-spike bump, no decay.
        self._eval_params = replace(
            self.neuron_params, theta_plus=0.0, tau_theta=math.inf
        )
        self._zero_drive = np.zeros(topology.n_neurons)

    @property
    def n_neurons(self) -> int:
        return self.topology.n_neurons

    def encode(self, image: np.ndarray, rng: np.random.Generator) -> SpikeTrain:
        rates = scale_intensity(image, self.sim.intensity_scale)
        return poisson_encode(rates, self.sim.present_ms, self.sim.dt, rng)

    def present(self, spike_train: SpikeTrain, learn: bool) -> SpikeRecord:
        """Run one full presentation; returns the output spike record.

        With learn=True this applies STDP each step and normalization +
        learning-rate decay at the end; with learn=False weights and
        theta stay untouched and the input drive is precomputed in one
        matrix product.
        """
        bits = spike_train.bits
        if bits.shape[1] != self.topology.n_inputs:
            raise ConfigurationError(
                f"spike train has {bits.shape[1]} inputs, "
                f"network expects {self.topology.n_inputs}"
            )
        if spike_train.dt != self.sim.dt:
            raise ConfigurationError("spike train dt differs from simulation dt")

        W = self.topology.weights
        state = self.state
        state.reset_example(self.neuron_params)
        self.traces.reset()
        params = self.neuron_params if learn else self._eval_params
        theta_decay = self._theta_decay if learn else 1.0
        if not learn:
            drive = bits.astype(np.float64) @ W

        step_chunks: list[np.ndarray] = []
        neuron_chunks: list[np.ndarray] = []
        for t in range(bits.shape[0]):
            if learn:
                pre = bits[t]
                pre_idx = np.flatnonzero(pre)
                current = W[pre_idx].sum(axis=0) if pre_idx.size else self._zero_drive
            else:
                current = drive[t]
            _, spikes = lif_step(
                state, current, params, self.sim.dt,
                v_decay=self._v_decay, theta_decay=theta_decay,
            )
            spike_idx = np.flatnonzero(spikes)
            if spike_idx.size:
                self._inhibit(spikes, spike_idx)
                step_chunks.append(np.full(spike_idx.size, t, dtype=np.int64))
                neuron_chunks.append(spike_idx.astype(np.int64))
            if learn:
                self.traces.decay(self._trace_decay)
                if spike_idx.size or pre_idx.size:
                    stdp_update(W, pre, spikes, self.traces, self.learn)
                    if spike_idx.size and not self._dense:
                        # Potentiation writes into the dense matrix; zero
                        # the entries that are not actual synapses.
                        W[:, spike_idx] *= self.mask[:, spike_idx]
                self.traces.record(pre, spikes)

        if learn:
            normalize_incoming(W, self.learn.c_norm)
            self.learn = decay_learning_rates(self.learn)

        if not step_chunks:
            return SpikeRecord.empty(self.n_neurons)
        return SpikeRecord(
            np.concatenate(step_chunks), np.concatenate(neuron_chunks), self.n_neurons
        )

    def _inhibit(self, spikes: np.ndarray, spike_idx: np.ndarray):
        """Same-step WTA: each spike drags its non-refractory group peers down."""
        inhib = self.topology.inhib_weight
        if inhib == 0.0:
            return
        group_counts = np.bincount(self.groups[spike_idx], minlength=self._n_groups)
        amount = inhib * group_counts[self.groups]
        target = (~spikes) & (self.state.refrac_remaining <= 0.0) & (amount > 0)
        if target.any():
            v = self.state.v
            v[target] -= amount[target]
            np.maximum(v, self.neuron_params.v_min, out=v)


def run_example(network: Network, spike_train: SpikeTrain, learn: bool) -> SpikeRecord:
    """Present one example; see Network.present."""
    return network.present(spike_train, learn)


@dataclass
class Checkpoint:
    """Frozen network + classifier state; all arrays are held at the
    precision they are stored with (float32 / int64), so a save -> load ->
    save round trip is byte-identical."""

    kind: str
    input_h: int
    input_w: int
    k: int
    s: int
    n_filters: int
    n_neurons: int
    inhib_weight: float
    neuron: NeuronParams
    learn: LearningParams
    sim: SimConfig
    weights: np.ndarray  # float32 (n_inputs, n_neurons)
    theta: np.ndarray  # float32 (n_neurons,)
    n_classes: int
    ngram_n: int
    examples_seen: int
    estimated_accuracy: float
    ngram_keys: np.ndarray  # int64 (m, ngram_n)
    ngram_counts: np.ndarray  # int64 (m, n_classes)
    patch_keys: np.ndarray  # int64 (m, 1 + ngram_n)
    patch_counts: np.ndarray  # int64 (m, n_classes)
    label_means: np.ndarray  # float32 (n_neurons, n_classes)
    format_version: int = 1

    def copy(self) -> "Checkpoint":
        return replace(
            self,
            weights=self.weights.copy(),
            theta=self.theta.copy(),
            ngram_keys=self.ngram_keys.copy(),
            ngram_counts=self.ngram_counts.copy(),
            patch_keys=self.patch_keys.copy(),
            patch_counts=self.patch_counts.copy(),
            label_means=self.label_means.copy(),
        )


def checkpoint_from_network(
    network: Network,
    classifier: ClassifierState | None,
    *,
    n_classes: int,
    ngram_n: int = 2,
    examples_seen: int = 0,
    estimated_accuracy: float = math.nan,
) -> Checkpoint:
    top = network.topology
    lc = top.kind == "lc"
    if classifier is not None and classifier.ngram is not None:
        ngram_keys, ngram_counts = ngram_to_arrays(classifier.ngram)
    else:
        ngram_keys = np.zeros((0, ngram_n), dtype=np.int64)
        ngram_counts = np.zeros((0, n_classes), dtype=np.int64)
    if classifier is not None and classifier.patch_ngrams is not None:
        patch_keys, patch_counts = patch_ngrams_to_arrays(
            classifier.patch_ngrams, ngram_n, n_classes
        )
    else:
        patch_keys = np.zeros((0, 1 + ngram_n), dtype=np.int64)
        patch_counts = np.zeros((0, n_classes), dtype=np.int64)
    if classifier is not None and classifier.neuron_labels is not None:
        label_means = classifier.neuron_labels.class_means.astype(np.float32)
    else:
        label_means = np.zeros((top.n_neurons, n_classes), dtype=np.float32)
    return Checkpoint(
        kind=top.kind,
        input_h=top.input_h,
        input_w=top.input_w,
        k=top.k if lc else 0,
        s=top.s if lc else 0,
        n_filters=top.n_filters if lc else 0,
        n_neurons=top.n_neurons,
        inhib_weight=top.inhib_weight,
        neuron=network.neuron_params,
        learn=network.learn,
        sim=network.sim,
        weights=network.topology.weights.astype(np.float32),
        theta=network.state.theta.astype(np.float32),
        n_classes=n_classes,
        ngram_n=ngram_n,
        examples_seen=examples_seen,
        estimated_accuracy=estimated_accuracy,
        ngram_keys=ngram_keys,
        ngram_counts=ngram_counts,
        patch_keys=patch_keys,
        patch_counts=patch_counts,
        label_means=label_means,
    )


def network_from_checkpoint(cp: Checkpoint) -> Network:
    """Rebuild a runnable network; weights/theta are the stored float32
    values widened to float64."""
    w = cp.weights.astype(np.float64)
    if cp.kind == "lc":
        fields = compute_receptive_fields(cp.input_h, cp.input_w, cp.k, cp.s)
        topology = LocalTopology(
            cp.input_h, cp.input_w, cp.k, cp.s, cp.n_filters,
            cp.inhib_weight, fields, w,
        )
        if topology.n_neurons != cp.n_neurons:
            raise CheckpointFormatError("geometry inconsistent with neuron count")
    elif cp.kind == "baseline":
        topology = BaselineTopology(
            cp.input_h, cp.input_w, cp.n_neurons, cp.inhib_weight, w
        )
    else:
        raise CheckpointFormatError(f"unknown topology kind {cp.kind!r}")
    if cp.weights.shape != (topology.n_inputs, topology.n_neurons):
        raise CheckpointFormatError("weight matrix shape mismatch")
    network = Network(topology, cp.neuron, cp.learn, cp.sim)
    network.state.theta[:] = cp.theta.astype(np.float64)
    return network


def classifier_from_checkpoint(cp: Checkpoint) -> ClassifierState:
    network_partition = _partition_from_checkpoint(cp)
    state = ClassifierState(cp.ngram_n, cp.n_classes, network_partition)
    if len(cp.ngram_keys):
        state.ngram = ngram_from_arrays(cp.ngram_keys, cp.ngram_counts, cp.n_neurons)
    if len(cp.patch_keys):
        state.patch_ngrams = patch_ngrams_from_arrays(
            cp.patch_keys, cp.patch_counts, cp.n_neurons
        )
    means = cp.label_means.astype(np.float64)
    if means.any():
        assigned = np.argmax(means, axis=1)
        assigned[~(means > 0).any(axis=1)] = -1
        state.neuron_labels = NeuronLabels(means, assigned, means.max(axis=1))
    return state


def _partition_from_checkpoint(cp: Checkpoint) -> np.ndarray:
    if cp.kind == "lc":
        n_fields = cp.n_neurons // cp.n_filters
        return np.repeat(np.arange(n_fields), cp.n_filters)
    return np.zeros(cp.n_neurons, dtype=np.int64)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[tuple[int, float, int]]  # (example_index, est_accuracy, cum_spikes)
    best_example_index: int
    best_accuracy: float


def train(
    dataset: Dataset,
    network: Network,
    *,
    limit: int | None = None,
    ngram_n: int = 2,
    progress=None,
) -> TrainResult:
    """Single-stream STDP training with periodic model selection.

    Presents a seeded shuffle of the dataset (epochs times, truncated to
    `limit` presentations if given). Every estimate_every presentations
    the network is frozen, a classifier is fit on estimate_size random
    training examples and scored on a disjoint batch of the same size;
    the best-scoring snapshot wins. The final classifier is refit on
    refit_size training examples against that snapshot, which is also
    left in the live network.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    sim = network.sim
    seed = sim.seed
    total = sim.epochs * len(dataset)
    if limit is not None:
        if limit < 1:
            raise ConfigurationError("limit must be >= 1")
        total = min(total, limit)

    metrics: list[tuple[int, float, int]] = []
    best_weights = None
    best_theta = None
    best_accuracy = -1.0
    best_seen = 0
    cumulative_spikes = 0
    presented = 0
    selection_round = 0
    selection_presentations = 0

    for epoch in range(sim.epochs):
        if presented >= total:
            break
        order = stream_rng(seed, _S_SHUFFLE, epoch).permutation(len(dataset))
        for dataset_idx in order:
            rng = stream_rng(seed, _S_TRAIN, presented)
            record = network.present(
                network.encode(dataset.images[dataset_idx], rng), learn=True
            )
            cumulative_spikes += record.n_spikes
            presented += 1
            at_cadence = presented % sim.estimate_every == 0
            if at_cadence or presented == total:
                accuracy, used = _selection_round(
                    network, dataset, selection_round, selection_presentations, ngram_n
                )
                selection_round += 1
                selection_presentations += used
                metrics.append((presented, accuracy, cumulative_spikes))
                if accuracy > best_accuracy:
                    best_accuracy = accuracy
                    best_weights = network.topology.weights.astype(np.float32)
                    best_theta = network.state.theta.astype(np.float32)
                    best_seen = presented
            if progress is not None:
                progress(presented, total)
            if presented >= total:
                break

    if best_weights is None:  # never estimated: keep the final state
        best_weights = network.topology.weights.astype(np.float32)
        best_theta = network.state.theta.astype(np.float32)
        best_accuracy = math.nan
        best_seen = presented

    # Rewind the live network to the winning snapshot and refit on a
    # larger batch for the final classifier.
    network.topology.weights[:] = best_weights.astype(np.float64)
    network.state.theta[:] = best_theta.astype(np.float64)
    refit_rng = stream_rng(seed, _S_REFIT, 0)
    n_refit = min(sim.refit_size, len(dataset))
    refit_idx = refit_rng.choice(len(dataset), size=n_refit, replace=False)
    records = []
    for i, dataset_idx in enumerate(refit_idx):
        rng = stream_rng(seed, _S_REFIT, 1 + i)
        records.append(
            network.present(network.encode(dataset.images[dataset_idx], rng), False)
        )
    classifier = fit_classifier_state(
        records, dataset.labels[refit_idx], network.groups, ngram_n, dataset.n_classes
    )
    checkpoint = checkpoint_from_network(
        network,
        classifier,
        n_classes=dataset.n_classes,
        ngram_n=ngram_n,
        examples_seen=best_seen,
        estimated_accuracy=best_accuracy,
    )
    return TrainResult(checkpoint, metrics, best_seen, best_accuracy)


def _selection_round(
    network: Network,
    dataset: Dataset,
    round_index: int,
    encode_counter: int,
    ngram_n: int,
) -> tuple[float, int]:
    """Fit on one random batch, estimate accuracy on a disjoint one.

    Runs with learning off; weights and theta are untouched. Returns the
    estimated accuracy and the number of presentations consumed.
    """
    sim = network.sim
    rng = stream_rng(sim.seed, _S_SELECT, round_index)
    size = min(2 * sim.estimate_size, len(dataset))
    picked = rng.choice(len(dataset), size=size, replace=False)
    half = size // 2
    records = []
    for i, dataset_idx in enumerate(picked):
        enc_rng = stream_rng(sim.seed, _S_SELECT_ENC, encode_counter + i)
        records.append(
            network.present(network.encode(dataset.images[dataset_idx], enc_rng), False)
        )
    classifier = fit_classifier_state(
        records[:half], dataset.labels[picked[:half]],
        network.groups, ngram_n, dataset.n_classes,
    )
    correct = sum(
        classify.predict(record, classifier, "ngram") == label
        for record, label in zip(records[half:], dataset.labels[picked[half:]])
    )
    n_estimate = size - half
    accuracy = float(correct) / n_estimate if n_estimate else math.nan
    return accuracy, size


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (n_classes, n_classes), rows true, cols predicted
    predictions: np.ndarray


def _eval_chunk(
    cp: Checkpoint,
    images: np.ndarray,
    labels: np.ndarray,
    offset: int,
    method: str,
    top_n: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    network = network_from_checkpoint(cp)
    classifier = classifier_from_checkpoint(cp)
    confusion = np.zeros((cp.n_classes, cp.n_classes), dtype=np.int64)
    predictions = np.zeros(len(images), dtype=np.int64)
    for i, (image, label) in enumerate(zip(images, labels)):
        rng = stream_rng(seed, _S_EVAL, offset + i)
        record = network.present(network.encode(image, rng), learn=False)
        predicted = classify.predict(record, classifier, method, top_n)
        predictions[i] = predicted
        confusion[int(label), predicted] += 1
    return confusion, predictions


def evaluate(
    dataset: Dataset,
    cp: Checkpoint,
    method: str = "ngram",
    *,
    top_n: int = 3,
    workers: int = 1,
    seed: int | None = None,
) -> EvalResult:
    """Frozen evaluation of a checkpoint over a dataset.

    Shards the dataset across processes when workers > 1; per-example
    encode streams are keyed by dataset position, so the result is
    identical for any worker count.
    """
    if method not in ClassifierState.METHODS:
        raise ConfigurationError(f"unknown decision rule {method!r}")
    classifier = classifier_from_checkpoint(cp)
    if method == "ngram" and classifier.ngram is None:
        raise ConfigurationError("checkpoint has no fitted n-gram dictionary")
    if method == "multi-ngram" and classifier.patch_ngrams is None:
        raise ConfigurationError("checkpoint has no fitted patch dictionaries")
    if method in ("multi-sum", "activity") and classifier.neuron_labels is None:
        raise ConfigurationError("checkpoint has no fitted neuron labels")
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if seed is None:
        seed = cp.sim.seed

    workers = max(1, workers)
    if workers == 1 or len(dataset) < 2 * workers:
        confusion, predictions = _eval_chunk(
            cp, dataset.images, dataset.labels, 0, method, top_n, seed
        )
    else:
        bounds = np.linspace(0, len(dataset), workers + 1, dtype=int)
        chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        confusion = np.zeros((cp.n_classes, cp.n_classes), dtype=np.int64)
        predictions = np.zeros(len(dataset), dtype=np.int64)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(
                    _eval_chunk,
                    cp,
                    dataset.images[a:b],
                    dataset.labels[a:b],
                    a,
                    method,
                    top_n,
                    seed,
                ): (a, b)
                for a, b in chunks
            }
            for future, (a, b) in futures.items():
                chunk_confusion, chunk_predictions = future.result()
                confusion += chunk_confusion
                predictions[a:b] = chunk_predictions
    accuracy = float(np.trace(confusion) / max(confusion.sum(), 1))
    return EvalResult(accuracy, confusion, predictions)


def default_workers() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Checkpoint container
#
# Layout: an ASCII header followed by raw array payloads.
#
#   LCSNN1\n
#   meta <count>\n
#   <key> <value>\n                 (repeated; values are reprs of scalars)
#   arrays <count>\n
#   <name> <dtype> <d0>x<d1>...\n   (dtype is float32 or int64)
#   end\n
#   <raw little-endian C-order array bytes, in declared order>

_MAGIC = b"LCSNN1\n"
_ARRAY_FIELDS = (
    ("weights", np.float32),
    ("theta", np.float32),
    ("ngram_keys", np.int64),
    ("ngram_counts", np.int64),
    ("patch_keys", np.int64),
    ("patch_counts", np.int64),
    ("label_means", np.float32),
)
_SCALAR_FIELDS = (
    ("format_version", int),
    ("kind", str),
    ("input_h", int),
    ("input_w", int),
    ("k", int),
    ("s", int),
    ("n_filters", int),
    ("n_neurons", int),
    ("inhib_weight", float),
    ("n_classes", int),
    ("ngram_n", int),
    ("examples_seen", int),
    ("estimated_accuracy", float),
)
_DTYPE_NAMES = {"float32": np.float32, "int64": np.int64}


def _nested_meta(cp: Checkpoint) -> list[tuple[str, str]]:
    pairs = []
    for prefix, obj in (("neuron", cp.neuron), ("learn", cp.learn), ("sim", cp.sim)):
        for f in dataclasses.fields(obj):
            caster = int if f.type == "int" else float
            pairs.append((f"{prefix}.{f.name}", repr(caster(getattr(obj, f.name)))))
    return pairs


def _parse_nested(meta: dict[str, str], prefix: str, cls):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in meta:
            raise CheckpointFormatError(f"missing metadata key {key}")
        caster = int if f.type == "int" else float
        try:
            kwargs[f.name] = caster(meta[key])
        except ValueError as exc:
            raise CheckpointFormatError(f"bad value for {key}: {meta[key]!r}") from exc
    return cls(**kwargs)


def save_checkpoint(cp: Checkpoint, path: str | os.PathLike):
    meta = []
    for name, caster in _SCALAR_FIELDS:
        value = getattr(cp, name)
        # coerce through the declared type so numpy scalars round-trip
        meta.append((name, value if caster is str else repr(caster(value))))
    meta += _nested_meta(cp)
    arrays = []
    for name, dtype in _ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(cp, name), dtype=dtype)
        arrays.append((name, arr))

    buffer = io.BytesIO()
    buffer.write(_MAGIC)
    buffer.write(f"meta {len(meta)}\n".encode())
    for key, value in meta:
        buffer.write(f"{key} {value}\n".encode())
    buffer.write(f"arrays {len(arrays)}\n".encode())
    for name, arr in arrays:
        dims = "x".join(str(d) for d in arr.shape)
        buffer.write(f"{name} {arr.dtype.name} {dims}\n".encode())
    buffer.write(b"end\n")
    for _, arr in arrays:
        buffer.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    data = buffer.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    stream = io.BytesIO(blob)
    if stream.read(len(_MAGIC)) != _MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")

    def read_line() -> str:
        line = stream.readline()
        if not line.endswith(b"\n"):
            raise CheckpointFormatError(f"{path}: truncated header")
        return line[:-1].decode("ascii", errors="replace")

    def expect_count(line: str, tag: str) -> int:
        parts = line.split()
        if len(parts) != 2 or parts[0] != tag or not parts[1].isdigit():
            raise CheckpointFormatError(f"{path}: expected '{tag} <count>', got {line!r}")
        return int(parts[1])

    meta: dict[str, str] = {}
    for _ in range(expect_count(read_line(), "meta")):
        key, _, value = read_line().partition(" ")
        meta[key] = value
    declared = []
    for _ in range(expect_count(read_line(), "arrays")):
        parts = read_line().split()
        if len(parts) != 3 or parts[1] not in _DTYPE_NAMES:
            raise CheckpointFormatError(f"{path}: bad array declaration {parts!r}")
        try:
            shape = tuple(int(d) for d in parts[2].split("x"))
        except ValueError as exc:
            raise CheckpointFormatError(f"{path}: bad shape {parts[2]!r}") from exc
        if any(d < 0 for d in shape):
            raise CheckpointFormatError(f"{path}: negative dimension in {parts[2]!r}")
        declared.append((parts[0], _DTYPE_NAMES[parts[1]], shape))
    if read_line() != "end":
        raise CheckpointFormatError(f"{path}: missing header terminator")

    if meta.get("format_version") != "1":
        raise CheckpointFormatError(
            f"{path}: unsupported format version {meta.get('format_version')!r}"
        )
    scalars = {}
    for name, caster in _SCALAR_FIELDS:
        if name not in meta:
            raise CheckpointFormatError(f"{path}: missing metadata key {name}")
        try:
            scalars[name] = caster(meta[name])
        except ValueError as exc:
            raise CheckpointFormatError(f"{path}: bad value for {name}") from exc
    if scalars["kind"] not in ("lc", "baseline"):
        raise CheckpointFormatError(f"{path}: unknown kind {scalars['kind']!r}")

    arrays = {}
    for name, dtype, shape in declared:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = stream.read(count * np.dtype(dtype).itemsize)
        if len(raw) != count * np.dtype(dtype).itemsize:
            raise CheckpointFormatError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<"))\
            .astype(dtype).reshape(shape)
    if stream.read(1):
        raise CheckpointFormatError(f"{path}: trailing bytes after declared arrays")
    for name, _ in _ARRAY_FIELDS:
        if name not in arrays:
            raise CheckpointFormatError(f"{path}: missing array {name!r}")

    neuron = _parse_nested(meta, "neuron", NeuronParams)
    learn = _parse_nested(meta, "learn", LearningParams)
    sim_kwargs = {}
    for f in dataclasses.fields(SimConfig):
        key = f"sim.{f.name}"
        if key not in meta:
            raise CheckpointFormatError(f"{path}: missing metadata key {key}")
        caster = int if f.type == "int" else float
        sim_kwargs[f.name] = caster(meta[key])
    sim = SimConfig(**sim_kwargs)

    n_in = scalars["input_h"] * scalars["input_w"]
    if arrays["weights"].shape != (n_in, scalars["n_neurons"]):
        raise CheckpointFormatError(f"{path}: weight shape inconsistent with geometry")
    if arrays["theta"].shape != (scalars["n_neurons"],):
        raise CheckpointFormatError(f"{path}: theta shape inconsistent with geometry")

    return Checkpoint(
        kind=scalars["kind"],
        input_h=scalars["input_h"],
        input_w=scalars["input_w"],
        k=scalars["k"],
        s=scalars["s"],
        n_filters=scalars["n_filters"],
        n_neurons=scalars["n_neurons"],
        inhib_weight=scalars["inhib_weight"],
        neuron=neuron,
        learn=learn,
        sim=sim,
        weights=arrays["weights"],
        theta=arrays["theta"],
        n_classes=scalars["n_classes"],
        ngram_n=scalars["ngram_n"],
        examples_seen=scalars["examples_seen"],
        estimated_accuracy=scalars["estimated_accuracy"],
        ngram_keys=arrays["ngram_keys"],
        ngram_counts=arrays["ngram_counts"],
        patch_keys=arrays["patch_keys"],
        patch_counts=arrays["patch_counts"],
        label_means=arrays["label_means"],
        format_version=scalars["format_version"],
    )
