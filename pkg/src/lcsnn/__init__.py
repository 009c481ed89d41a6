"""Locally-connected spiking neural networks with STDP, n-gram readouts,
and robustness experiments."""

from .data import Dataset, center_crop, crop_dataset, load_idx, load_split
from .engine import (
    Checkpoint,
    EvalResult,
    Network,
    SimConfig,
    SpikeRecord,
    TrainResult,
    evaluate,
    load_checkpoint,
    run_example,
    save_checkpoint,
    train,
)
from .neurons import LIFState, NeuronParams, SpikeTrain, lif_step, poisson_encode
from .plasticity import LearningParams, Traces, normalize_incoming, stdp_update
from .topology import (
    BaselineTopology,
    LocalTopology,
    build_baseline,
    build_lc,
    compute_receptive_fields,
    count_parameters,
)

__version__ = "0.1.0"
