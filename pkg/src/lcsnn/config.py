"""Flat run configuration: one JSON-serializable record for a whole run.

A config file holds any subset of the fields below; CLI flags override
file values, and every command writes the fully resolved result next to
its outputs so a run can be reproduced from its artifacts alone.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

from .engine import ConfigurationError, Network, SimConfig, stream_rng, _S_INIT
from .neurons import NeuronParams
from .plasticity import LearningParams
from .topology import build_baseline, build_lc


@dataclass
class RunConfig:
    # data
    dataset: str = "mnist"  # mnist | emnist-letters
    data_dir: str = "data/mnist"
    crop: int = 20
    # topology
    arch: str = "lc"  # lc | baseline
    k: int = 12
    s: int = 4
    n_filters: int = 25
    n_neurons: int = 100  # baseline only
    inhib_weight: float = 100.0
    w_init_max: float = 0.3
    # neuron dynamics
    v_rest: float = -65.0
    v_reset: float = -65.0
    theta0: float = -52.0
    theta_plus: float = 0.05
    tau_v: float = 20.0
    tau_theta: float = 1e6
    refrac: float = 5.0
    v_min: float = -120.0
    # learning
    eta_post: float = 1e-2
    eta_pre: float = 1e-4
    tau_trace: float = 20.0
    w_max: float = 1.0
    c_norm: float | None = None  # None -> 0.1 * fan-in
    lr_decay: float = 1.0
    # simulation
    present_ms: float = 250.0
    dt: float = 1.0
    epochs: int = 1
    seed: int = 0
    estimate_every: int = 250
    estimate_size: int = 250
    refit_size: int = 10000
    intensity_scale: float = 0.5
    # classifier
    method: str = "ngram"
    ngram_n: int = 2
    top_n: int = 3
    # run control
    limit: int | None = None
    workers: int = 0  # 0 -> all available cores

    def __post_init__(self):
        if self.arch not in ("lc", "baseline"):
            raise ConfigurationError(f"arch must be lc or baseline, got {self.arch!r}")
        if self.dataset not in ("mnist", "emnist-letters"):
            raise ConfigurationError(f"unknown dataset {self.dataset!r}")
        if self.crop < 1:
            raise ConfigurationError("crop must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")
        if self.method not in ("ngram", "multi-ngram", "multi-sum", "activity"):
            raise ConfigurationError(f"unknown decision rule {self.method!r}")

    @property
    def fan_in(self) -> int:
        return self.k * self.k if self.arch == "lc" else self.crop * self.crop

    def resolved_c_norm(self) -> float:
        return self.c_norm if self.c_norm is not None else 0.1 * self.fan_in


def load_config(path: str | os.PathLike) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return config_from_dict(raw, source=str(path))


def config_from_dict(raw: dict, source: str = "config") -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"{source}: unknown config keys {unknown}")
    return RunConfig(**raw)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Non-None entries in overrides replace fields of cfg."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **updates)


def save_config(cfg: RunConfig, path: str | os.PathLike):
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def neuron_params(cfg: RunConfig) -> NeuronParams:
    return NeuronParams(
        v_rest=cfg.v_rest,
        v_reset=cfg.v_reset,
        theta0=cfg.theta0,
        theta_plus=cfg.theta_plus,
        tau_v=cfg.tau_v,
        tau_theta=cfg.tau_theta,
        refrac=cfg.refrac,
        v_min=cfg.v_min,
    )


def learning_params(cfg: RunConfig) -> LearningParams:
    return LearningParams(
        eta_post=cfg.eta_post,
        eta_pre=cfg.eta_pre,
        tau_trace=cfg.tau_trace,
        w_max=cfg.w_max,
        c_norm=cfg.resolved_c_norm(),
        lr_decay=cfg.lr_decay,
    )


def sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(
        present_ms=cfg.present_ms,
        dt=cfg.dt,
        epochs=cfg.epochs,
        seed=cfg.seed,
        estimate_every=cfg.estimate_every,
        estimate_size=cfg.estimate_size,
        refit_size=cfg.refit_size,
        intensity_scale=cfg.intensity_scale,
    )


def build_topology(cfg: RunConfig):
    rng = stream_rng(cfg.seed, _S_INIT)
    if cfg.arch == "lc":
        return build_lc(
            cfg.crop, cfg.crop, cfg.k, cfg.s, cfg.n_filters, rng,
            inhib_weight=cfg.inhib_weight,
            w_init_max=cfg.w_init_max,
            c_norm=cfg.resolved_c_norm(),
        )
    return build_baseline(
        cfg.crop, cfg.crop, cfg.n_neurons, rng,
        inhib_weight=cfg.inhib_weight,
        w_init_max=cfg.w_init_max,
        c_norm=cfg.resolved_c_norm(),
    )


def build_network(cfg: RunConfig) -> Network:
    return Network(build_topology(cfg), neuron_params(cfg), learning_params(cfg),
                   sim_config(cfg))


def resolve_workers(cfg_workers: int) -> int:
    if cfg_workers and cfg_workers > 0:
        return cfg_workers
    return os.cpu_count() or 1
