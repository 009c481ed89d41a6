"""Post-training degradation: random synapse deletion and neuron removal.

Ablations act on checkpoint copies (the trained checkpoint is never
mutated) and the classifier state is reused as trained — never refit on
the damaged network. Sweep cells are independent and can evaluate in
parallel; each cell's ablation RNG is derived from (seed, mode, p,
repeat), so results do not depend on grid order or worker count.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .engine import Checkpoint, evaluate, network_from_checkpoint

_S_ABLATE = 7
_MODES = ("synapse", "neuron")


@dataclass(frozen=True)
class AblationSpec:
    mode: str
    p: float
    repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")


def _cell_rng(spec: AblationSpec, repeat: int) -> np.random.Generator:
    words = [spec.seed, _S_ABLATE, _MODES.index(spec.mode),
             int(round(spec.p * 10**9)), repeat]
    return np.random.default_rng(np.random.SeedSequence(words))


def structural_mask(cp: Checkpoint) -> np.ndarray:
    """Boolean (n_inputs, n_neurons) matrix of actual synapses."""
    return network_from_checkpoint(cp).mask


def delete_synapses(cp: Checkpoint, p: float, rng: np.random.Generator) -> Checkpoint:
    """Zero each structural synapse independently with probability p.

    Returns an ablated copy; draws one Bernoulli per synapse in row-major
    order of the weight matrix.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    out = cp.copy()
    synapses = np.flatnonzero(structural_mask(cp).ravel())
    dropped = synapses[rng.random(synapses.size) < p]
    out.weights.reshape(-1)[dropped] = 0.0
    return out


def remove_neurons(cp: Checkpoint, p: float, rng: np.random.Generator) -> Checkpoint:
    """Select each output neuron independently with probability p and zero
    all of its incoming weights. Returns an ablated copy."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    out = cp.copy()
    removed = rng.random(cp.n_neurons) < p
    out.weights[:, removed] = 0.0
    return out


def ablate(cp: Checkpoint, mode: str, p: float, rng: np.random.Generator) -> Checkpoint:
    if mode == "synapse":
        return delete_synapses(cp, p, rng)
    if mode == "neuron":
        return remove_neurons(cp, p, rng)
    raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")


@dataclass(frozen=True)
class SweepRow:
    mode: str
    p: float
    repeat: int
    accuracy: float


def sweep_grid(
    modes=("synapse", "neuron"),
    ps=tuple(round(0.1 * i, 1) for i in range(10)),
    repeats: int = 5,
    seed: int = 0,
) -> list[AblationSpec]:
    """The default Fig.-4-style grid: both modes x p in {0, 0.1, ..., 0.9}."""
    return [AblationSpec(mode, float(p), repeats, seed) for mode in modes for p in ps]


_WORKER_STATE: dict = {}


def _init_sweep_worker(cp, dataset, method, top_n, eval_seed):
    _WORKER_STATE.update(
        cp=cp, dataset=dataset, method=method, top_n=top_n, eval_seed=eval_seed
    )


def _sweep_cell_local(cp, dataset, spec, repeat, method, top_n, eval_seed) -> SweepRow:
    ablated = ablate(cp, spec.mode, spec.p, _cell_rng(spec, repeat))
    result = evaluate(
        dataset, ablated, method, top_n=top_n, workers=1, seed=eval_seed
    )
    return SweepRow(spec.mode, spec.p, repeat, result.accuracy)


def _sweep_cell_worker(spec: AblationSpec, repeat: int) -> SweepRow:
    s = _WORKER_STATE
    return _sweep_cell_local(
        s["cp"], s["dataset"], spec, repeat, s["method"], s["top_n"], s["eval_seed"]
    )


def robustness_sweep(
    cp: Checkpoint,
    dataset: Dataset,
    specs: list[AblationSpec] | None = None,
    *,
    method: str = "ngram",
    top_n: int = 3,
    workers: int = 1,
    eval_seed: int | None = None,
    progress=None,
) -> list[SweepRow]:
    """Evaluate every (spec, repeat) cell; rows come back in grid order."""
    if specs is None:
        specs = sweep_grid()
    cells = [(spec, r) for spec in specs for r in range(spec.repeats)]
    rows: dict[int, SweepRow] = {}
    if workers <= 1 or len(cells) == 1:
        for i, (spec, repeat) in enumerate(cells):
            rows[i] = _sweep_cell_local(
                cp, dataset, spec, repeat, method, top_n, eval_seed
            )
            if progress is not None:
                progress(len(rows), len(cells))
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_sweep_worker,
            initargs=(cp, dataset, method, top_n, eval_seed),
        ) as pool:
            futures = {
                pool.submit(_sweep_cell_worker, spec, repeat): i
                for i, (spec, repeat) in enumerate(cells)
            }
            for done, future in enumerate(as_completed(futures), start=1):
                rows[futures[future]] = future.result()
                if progress is not None:
                    progress(done, len(cells))
    return [rows[i] for i in sorted(rows)]


def summarize(rows: list[SweepRow]) -> list[tuple[str, float, float, float]]:
    """Per (mode, p): (mode, p, mean accuracy, std accuracy) in grid order."""
    order: list[tuple[str, float]] = []
    grouped: dict[tuple[str, float], list[float]] = {}
    for row in rows:
        key = (row.mode, row.p)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(row.accuracy)
    return [
        (mode, p, float(np.mean(grouped[mode, p])), float(np.std(grouped[mode, p])))
        for mode, p in order
    ]
