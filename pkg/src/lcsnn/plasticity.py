"""Online trace-based STDP with clipping, normalization, and rate decay.

Weight change is asymmetric: a postsynaptic spike potentiates by
eta_post * x_pre, a presynaptic spike depresses by eta_pre * x_post,
where the traces x are set to 1 on their owner's spike and decay
exponentially to 0 otherwise. Weights are clipped to [0, w_max] after
every update; the incoming weight vector of each output neuron is
rescaled to sum c_norm once per example.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class LearningParams:
    eta_post: float = 1e-2
    eta_pre: float = 1e-4
    tau_trace: float = 20.0
    w_max: float = 1.0
    c_norm: float = 14.4  # incoming-sum target per output neuron
    lr_decay: float = 1.0  # multiplicative, applied once per example

    def __post_init__(self):
        if not (self.eta_post > self.eta_pre >= 0):
            raise ValueError("need eta_post > eta_pre >= 0")
        if self.tau_trace <= 0 or self.w_max <= 0 or self.c_norm <= 0:
            raise ValueError("tau_trace, w_max, c_norm must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ValueError("lr_decay must be in (0, 1]")


@dataclass
class Traces:
    """Pre- and post-synaptic spike traces in [0, 1]."""

    x_pre: np.ndarray
    x_post: np.ndarray

    @classmethod
    def zeros(cls, n_pre: int, n_post: int) -> "Traces":
        return cls(np.zeros(n_pre), np.zeros(n_post))

    def decay(self, factor: float):
        self.x_pre *= factor
        self.x_post *= factor

    def reset(self):
        self.x_pre[:] = 0.0
        self.x_post[:] = 0.0

    def record(self, pre_spikes: np.ndarray, post_spikes: np.ndarray):
        self.x_pre[pre_spikes] = 1.0
        self.x_post[post_spikes] = 1.0


def trace_step(
    traces: Traces,
    pre_spikes: np.ndarray,
    post_spikes: np.ndarray,
    params: LearningParams,
    dt: float,
) -> Traces:
    """Decay both traces by exp(-dt/tau_trace), then reset spiking entries to 1."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    traces.decay(math.exp(-dt / params.tau_trace))
    traces.record(pre_spikes, post_spikes)
    return traces


def stdp_update(
    weights: np.ndarray,
    pre_spikes: np.ndarray,
    post_spikes: np.ndarray,
    traces: Traces,
    params: LearningParams,
) -> np.ndarray:
    """One STDP step; mutates weights in place and returns them.

    Expects traces that do not yet include this step's spikes. Both
    branches apply when a pre and a post neuron fire on the same step.
    Touched synapses are clipped to [0, w_max] after both branches; the
    rest of the matrix is already in range and is left alone.
    """
    post_idx = np.flatnonzero(post_spikes)
    pre_idx = np.flatnonzero(pre_spikes)

    if post_idx.size:
        weights[:, post_idx] += params.eta_post * traces.x_pre[:, None]
    if pre_idx.size and params.eta_pre:
        weights[pre_idx, :] -= params.eta_pre * traces.x_post[None, :]
    if post_idx.size:
        weights[:, post_idx] = np.clip(weights[:, post_idx], 0.0, params.w_max)
    if pre_idx.size and params.eta_pre:
        weights[pre_idx, :] = np.clip(weights[pre_idx, :], 0.0, params.w_max)
    return weights


def normalize_incoming(weights: np.ndarray, c_norm: float) -> np.ndarray:
    """Rescale each output neuron's incoming weights to sum c_norm (in place).

    All-zero columns are left untouched.
    """
    sums = weights.sum(axis=0)
    nz = sums > 0
    if nz.any():
        weights[:, nz] *= c_norm / sums[nz]
    return weights


def decay_learning_rates(params: LearningParams) -> LearningParams:
    """Apply one multiplicative learning-rate decay; called once per example."""
    if params.lr_decay == 1.0:
        return params
    return replace(
        params,
        eta_post=params.eta_post * params.lr_decay,
        eta_pre=params.eta_pre * params.lr_decay,
    )
