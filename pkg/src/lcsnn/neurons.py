"""Adaptive-threshold LIF population dynamics and Poisson rate encoding.

Membrane voltage decays exponentially toward rest each step (exact
per-step factor exp(-dt/tau_v)), then integrates its input directly: a
presynaptic spike through weight w adds w millivolts. A neuron fires when
v >= theta0 + theta, resets, enters a refractory period, and bumps its
adaptive threshold theta by theta_plus. theta decays with its own (very
slow) time constant every step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NeuronParams:
    """LIF parameters (mV / ms). Defaults follow the usual digit-classification setup."""

    v_rest: float = -65.0
    v_reset: float = -65.0
    theta0: float = -52.0
    theta_plus: float = 0.05
    tau_v: float = 20.0
    tau_theta: float = 1e6  # 1000 s, quasi-permanent within one presentation
    refrac: float = 5.0
    v_min: float = -120.0  # hyperpolarization floor

    def __post_init__(self):
        if not (self.theta0 > self.v_reset and self.theta0 > self.v_rest):
            raise ValueError("theta0 must exceed v_reset and v_rest")
        if self.tau_v <= 0 or self.tau_theta <= 0:
            raise ValueError("time constants must be positive")
        if self.refrac < 0:
            raise ValueError("refractory period must be non-negative")


@dataclass
class LIFState:
    """Mutable per-neuron state of one LIF population."""

    v: np.ndarray
    theta: np.ndarray
    refrac_remaining: np.ndarray
    last: np.ndarray  # spike flags from the most recent step

    @classmethod
    def zeros(cls, n: int, params: NeuronParams) -> "LIFState":
        return cls(
            v=np.full(n, params.v_rest, dtype=np.float64),
            theta=np.zeros(n, dtype=np.float64),
            refrac_remaining=np.zeros(n, dtype=np.float64),
            last=np.zeros(n, dtype=bool),
        )

    def reset_example(self, params: NeuronParams):
        """Between-example reset: v and refractory clear, theta persists."""
        self.v[:] = params.v_rest
        self.refrac_remaining[:] = 0.0
        self.last[:] = False


def lif_step(
    state: LIFState,
    input_current: np.ndarray,
    params: NeuronParams,
    dt: float,
    *,
    v_decay: float | None = None,
    theta_decay: float | None = None,
) -> tuple[LIFState, np.ndarray]:
    """Advance the population one step; mutates state, returns (state, spikes).

    Order: theta decay -> voltage decay -> integrate input -> threshold
    test -> reset/theta bump/refractory arm. Refractory neurons stay
    clamped at v_reset, ignore input, and count down. The optional decay
    factors let callers hoist the two exps out of hot loops.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if v_decay is None:
        v_decay = math.exp(-dt / params.tau_v)
    if theta_decay is None:
        theta_decay = math.exp(-dt / params.tau_theta)

    active = state.refrac_remaining <= 0.0
    if theta_decay != 1.0:
        state.theta *= theta_decay

    if active.all():
        v = state.v
        v -= params.v_rest
        v *= v_decay
        v += params.v_rest
        v += input_current
        np.maximum(v, params.v_min, out=v)
    else:
        state.refrac_remaining[~active] -= dt
        va = state.v[active]
        va -= params.v_rest
        va *= v_decay
        va += params.v_rest
        va += input_current[active]
        np.maximum(va, params.v_min, out=va)
        state.v[active] = va

    spikes = active & (state.v >= params.theta0 + state.theta)
    if spikes.any():
        state.v[spikes] = params.v_reset
        state.theta[spikes] += params.theta_plus
        state.refrac_remaining[spikes] = params.refrac
    state.last = spikes
    return state, spikes


@dataclass
class SpikeTrain:
    """Binary (timestep x input-neuron) spike raster for one presentation."""

    bits: np.ndarray
    dt: float
    duration: float

    def __post_init__(self):
        steps = self.duration / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) != self.bits.shape[0]:
            raise ValueError(
                f"{self.bits.shape[0]} timesteps inconsistent with "
                f"duration {self.duration} ms at dt={self.dt}"
            )

    @property
    def n_steps(self) -> int:
        return self.bits.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.bits.shape[1]


def poisson_encode(
    rates: np.ndarray, duration: float, dt: float, rng: np.random.Generator
) -> SpikeTrain:
    """Bernoulli-per-step approximation of Poisson spike trains.

    Each input fires independently each step with probability
    rate * dt / 1000 (rates in Hz, dt in ms). rates may be any shape;
    it is flattened row-major into the input-neuron axis.
    """
    rates = np.asarray(rates, dtype=np.float64).ravel()
    if (rates < 0).any():
        raise ValueError("rates must be non-negative")
    p = rates * (dt / 1000.0)
    if (p > 1.0).any():
        raise ValueError(
            f"spike probability {p.max():.3f} exceeds 1; lower rates or dt"
        )
    steps = int(round(duration / dt))
    bits = rng.random((steps, rates.size)) < p
    return SpikeTrain(bits=bits, dt=dt, duration=duration)
