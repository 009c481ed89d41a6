"""Decision rules over output spike records.

Four schemes: single n-gram voting over the merged spike sequence,
per-patch (multi-thread) n-gram voting with weighted top-N ranks,
per-patch sum-of-spikes voting, and plain per-neuron activity voting
(which doubles as the fallback when the others abstain). Every rule
breaks ties toward the smaller class index, and a completely silent
record falls back to class 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .engine import SpikeRecord


def flatten(record: "SpikeRecord") -> np.ndarray:
    """Neuron indices ordered by spike timestep, ties by ascending index."""
    order = np.lexsort((record.neurons, record.steps))
    return record.neurons[order].astype(np.int64)


def _gram_codes(seq: np.ndarray, n: int, n_neurons: int) -> np.ndarray:
    """Encode every length-n sliding window as one integer, base n_neurons."""
    if len(seq) < n:
        return np.empty(0, dtype=np.int64)
    codes = seq[: len(seq) - n + 1].astype(np.int64).copy()
    for i in range(1, n):
        codes *= n_neurons
        codes += seq[i : len(seq) - n + 1 + i]
    return codes


def _decode_gram(code: int, n: int, n_neurons: int) -> tuple[int, ...]:
    out = []
    for _ in range(n):
        code, r = divmod(code, n_neurons)
        out.append(int(r))
    return tuple(reversed(out))


@dataclass
class NgramDictionary:
    """Per-class occurrence counts of length-n output spike sequences."""

    n: int
    n_classes: int
    n_neurons: int
    counts: dict[int, np.ndarray] = field(default_factory=dict)
    labels: dict[int, int] = field(default_factory=dict)

    def encode(self, gram: tuple[int, ...]) -> int:
        code = 0
        for g in gram:
            code = code * self.n_neurons + int(g)
        return code

    def add_sequence(self, seq: np.ndarray, label: int):
        codes, mult = np.unique(
            _gram_codes(seq, self.n, self.n_neurons), return_counts=True
        )
        for code, m in zip(codes.tolist(), mult.tolist()):
            row = self.counts.get(code)
            if row is None:
                row = self.counts[code] = np.zeros(self.n_classes, dtype=np.int64)
            row[label] += m

    def finalize(self):
        """Assign each gram the class it appeared with most (ties: smaller class)."""
        self.labels = {
            code: int(np.argmax(row)) for code, row in self.counts.items()
        }

    def count(self, gram: tuple[int, ...]) -> np.ndarray:
        return self.counts.get(
            self.encode(gram), np.zeros(self.n_classes, dtype=np.int64)
        )

    def label(self, gram: tuple[int, ...]) -> int | None:
        return self.labels.get(self.encode(gram))

    def items(self) -> Iterable[tuple[tuple[int, ...], np.ndarray]]:
        for code in sorted(self.counts):
            yield _decode_gram(code, self.n, self.n_neurons), self.counts[code]

    def __len__(self) -> int:
        return len(self.counts)

    def votes_for(self, seq: np.ndarray) -> np.ndarray:
        """Class votes cast by every gram occurrence found in the dictionary."""
        votes = np.zeros(self.n_classes, dtype=np.int64)
        codes, mult = np.unique(
            _gram_codes(seq, self.n, self.n_neurons), return_counts=True
        )
        for code, m in zip(codes.tolist(), mult.tolist()):
            label = self.labels.get(code)
            if label is not None:
                votes[label] += m
        return votes


def fit_ngram(records, labels, n: int, n_classes: int, n_neurons: int) -> NgramDictionary:
    """Count sliding-window n-grams of each record under its class label."""
    if n < 1:
        raise ValueError("n must be >= 1")
    d = NgramDictionary(n, n_classes, n_neurons)
    for record, label in zip(records, labels):
        d.add_sequence(flatten(record), int(label))
    d.finalize()
    return d


@dataclass
class NeuronLabels:
    """Per-neuron class assignment from mean training spike counts.

    labels holds -1 for neurons that never fired during fitting.
    """

    class_means: np.ndarray  # (n_neurons, n_classes)
    labels: np.ndarray
    strengths: np.ndarray


def fit_neuron_labels(records, labels, n_neurons: int, n_classes: int) -> NeuronLabels:
    sums = np.zeros((n_neurons, n_classes), dtype=np.float64)
    n_examples = np.zeros(n_classes, dtype=np.int64)
    for record, label in zip(records, labels):
        sums[:, int(label)] += record.per_neuron_counts
        n_examples[int(label)] += 1
    means = np.divide(
        sums, np.maximum(n_examples, 1)[None, :], dtype=np.float64
    )
    assigned = np.argmax(means, axis=1)
    silent = ~(means > 0).any(axis=1)
    assigned[silent] = -1
    return NeuronLabels(means, assigned, means.max(axis=1))


def predict_activity(record, neuron_labels: NeuronLabels, n_classes: int) -> int:
    """Sum-of-spikes voting with per-neuron labels; silent record -> class 0."""
    counts = record.per_neuron_counts
    labeled = neuron_labels.labels >= 0
    votes = np.bincount(
        neuron_labels.labels[labeled],
        weights=counts[labeled],
        minlength=n_classes,
    )
    if votes.sum() == 0:
        return 0
    return int(np.argmax(votes))


def predict_ngram(
    record,
    dictionary: NgramDictionary,
    n_classes: int,
    neuron_labels: NeuronLabels | None = None,
) -> int:
    """Single-thread n-gram vote; falls back to activity voting, then class 0."""
    votes = dictionary.votes_for(flatten(record))
    if votes.sum() > 0:
        return int(np.argmax(votes))
    if neuron_labels is not None:
        return predict_activity(record, neuron_labels, n_classes)
    return 0


def fit_patch_ngrams(
    records, labels, partition: np.ndarray, n: int, n_classes: int
) -> dict[int, NgramDictionary]:
    """One dictionary per patch, fit on that patch's subsequence of each record."""
    n_neurons = len(partition)
    dicts: dict[int, NgramDictionary] = {}
    for record, label in zip(records, labels):
        seq = flatten(record)
        patches = partition[seq]
        for p in np.unique(patches).tolist():
            d = dicts.get(p)
            if d is None:
                d = dicts[p] = NgramDictionary(n, n_classes, n_neurons)
            d.add_sequence(seq[patches == p], int(label))
    for d in dicts.values():
        d.finalize()
    return dicts


def _add_ranked_votes(scores: np.ndarray, top_n: int, votes: np.ndarray) -> bool:
    """Weighted top-N contribution: rank 1 earns top_n, rank top_n earns 1.

    Only classes with positive score are ranked (score ties resolve toward
    the smaller class index). Returns False when the patch abstains.
    """
    nz = np.flatnonzero(scores > 0)
    if nz.size == 0:
        return False
    order = nz[np.argsort(-scores[nz], kind="stable")]
    for r, c in enumerate(order[:top_n]):
        votes[c] += top_n - r
    return True


def predict_multithread_ngram(
    record,
    patch_dicts: dict[int, NgramDictionary],
    partition: np.ndarray,
    top_n: int,
    n_classes: int,
    neuron_labels: NeuronLabels | None = None,
) -> int:
    """Each patch ranks classes by its own n-gram votes; ranks are aggregated."""
    seq = flatten(record)
    votes = np.zeros(n_classes, dtype=np.int64)
    any_votes = False
    if len(seq):
        patches = partition[seq]
        for p in np.unique(patches).tolist():
            d = patch_dicts.get(p)
            if d is None:
                continue
            local = d.votes_for(seq[patches == p])
            any_votes |= _add_ranked_votes(local, top_n, votes)
    if any_votes:
        return int(np.argmax(votes))
    if neuron_labels is not None:
        return predict_activity(record, neuron_labels, n_classes)
    return 0


def predict_multithread_sum(
    record,
    neuron_labels: NeuronLabels,
    partition: np.ndarray,
    top_n: int,
    n_classes: int,
) -> int:
    """Each patch ranks classes by labeled-neuron spike sums; ranks aggregate."""
    counts = record.per_neuron_counts
    votes = np.zeros(n_classes, dtype=np.int64)
    any_votes = False
    active = np.flatnonzero((counts > 0) & (neuron_labels.labels >= 0))
    for p in np.unique(partition[active]).tolist():
        in_patch = active[partition[active] == p]
        local = np.bincount(
            neuron_labels.labels[in_patch],
            weights=counts[in_patch],
            minlength=n_classes,
        )
        any_votes |= _add_ranked_votes(local, top_n, votes)
    if any_votes:
        return int(np.argmax(votes))
    return 0


@dataclass
class ClassifierState:
    """Everything needed to turn a spike record into a class prediction."""

    n: int
    n_classes: int
    partition: np.ndarray  # output neuron -> patch
    ngram: NgramDictionary | None = None
    patch_ngrams: dict[int, NgramDictionary] | None = None
    neuron_labels: NeuronLabels | None = None

    METHODS = ("ngram", "multi-ngram", "multi-sum", "activity")


def fit_classifier_state(
    records, labels, partition: np.ndarray, n: int, n_classes: int
) -> ClassifierState:
    """Fit all decision rules in one pass over the training records."""
    n_neurons = len(partition)
    state = ClassifierState(n, n_classes, partition)
    state.ngram = NgramDictionary(n, n_classes, n_neurons)
    patch_dicts: dict[int, NgramDictionary] = {}
    sums = np.zeros((n_neurons, n_classes), dtype=np.float64)
    n_examples = np.zeros(n_classes, dtype=np.int64)

    for record, label in zip(records, labels):
        label = int(label)
        seq = flatten(record)
        state.ngram.add_sequence(seq, label)
        patches = partition[seq]
        for p in np.unique(patches).tolist():
            d = patch_dicts.get(p)
            if d is None:
                d = patch_dicts[p] = NgramDictionary(n, n_classes, n_neurons)
            d.add_sequence(seq[patches == p], label)
        sums[:, label] += record.per_neuron_counts
        n_examples[label] += 1

    state.ngram.finalize()
    for d in patch_dicts.values():
        d.finalize()
    state.patch_ngrams = patch_dicts
    means = np.divide(sums, np.maximum(n_examples, 1)[None, :], dtype=np.float64)
    assigned = np.argmax(means, axis=1)
    assigned[~(means > 0).any(axis=1)] = -1
    state.neuron_labels = NeuronLabels(means, assigned, means.max(axis=1))
    return state


def ngram_to_arrays(d: NgramDictionary) -> tuple[np.ndarray, np.ndarray]:
    """Dictionary as two aligned arrays: gram rows (m, n) and counts (m, n_classes)."""
    codes = sorted(d.counts)
    keys = np.zeros((len(codes), d.n), dtype=np.int64)
    counts = np.zeros((len(codes), d.n_classes), dtype=np.int64)
    for i, code in enumerate(codes):
        keys[i] = _decode_gram(code, d.n, d.n_neurons)
        counts[i] = d.counts[code]
    return keys, counts


def ngram_from_arrays(
    keys: np.ndarray, counts: np.ndarray, n_neurons: int
) -> NgramDictionary:
    d = NgramDictionary(int(keys.shape[1]), int(counts.shape[1]), n_neurons)
    for row, cnt in zip(keys, counts):
        d.counts[d.encode(tuple(row))] = cnt.astype(np.int64).copy()
    d.finalize()
    return d


def patch_ngrams_to_arrays(
    dicts: dict[int, NgramDictionary], n: int, n_classes: int
) -> tuple[np.ndarray, np.ndarray]:
    """All patch dictionaries stacked; key rows are (patch, gram...)."""
    blocks = []
    for p in sorted(dicts):
        keys, counts = ngram_to_arrays(dicts[p])
        tagged = np.concatenate(
            [np.full((len(keys), 1), p, dtype=np.int64), keys], axis=1
        )
        blocks.append((tagged, counts))
    if not blocks:
        return (
            np.zeros((0, 1 + n), dtype=np.int64),
            np.zeros((0, n_classes), dtype=np.int64),
        )
    return (
        np.concatenate([b[0] for b in blocks], axis=0),
        np.concatenate([b[1] for b in blocks], axis=0),
    )


def patch_ngrams_from_arrays(
    keys: np.ndarray, counts: np.ndarray, n_neurons: int
) -> dict[int, NgramDictionary]:
    n = int(keys.shape[1]) - 1
    n_classes = int(counts.shape[1])
    dicts: dict[int, NgramDictionary] = {}
    for row, cnt in zip(keys, counts):
        p = int(row[0])
        d = dicts.get(p)
        if d is None:
            d = dicts[p] = NgramDictionary(n, n_classes, n_neurons)
        d.counts[d.encode(tuple(row[1:]))] = cnt.astype(np.int64).copy()
    for d in dicts.values():
        d.finalize()
    return dicts


def predict(record, state: ClassifierState, method: str = "ngram", top_n: int = 3) -> int:
    """Dispatch one record through a decision rule with the fallback chain."""
    if method == "ngram":
        if state.ngram is None:
            raise ValueError("classifier state has no fitted n-gram dictionary")
        return predict_ngram(record, state.ngram, state.n_classes, state.neuron_labels)
    if method == "multi-ngram":
        if state.patch_ngrams is None:
            raise ValueError("classifier state has no fitted patch dictionaries")
        return predict_multithread_ngram(
            record, state.patch_ngrams, state.partition, top_n,
            state.n_classes, state.neuron_labels,
        )
    if method == "multi-sum":
        if state.neuron_labels is None:
            raise ValueError("classifier state has no fitted neuron labels")
        return predict_multithread_sum(
            record, state.neuron_labels, state.partition, top_n, state.n_classes
        )
    if method == "activity":
        if state.neuron_labels is None:
            raise ValueError("classifier state has no fitted neuron labels")
        return predict_activity(record, state.neuron_labels, state.n_classes)
    raise ValueError(f"unknown decision rule {method!r}")
