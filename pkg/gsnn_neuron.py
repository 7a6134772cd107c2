# -*- coding: utf-8 -*-
"""
gsnn_neuron.py — Graph SNN • neuron dynamics
--------------------------------------------
LIF membrane recursion with firing-and-reset, the rectangular surrogate
derivative, and spatial-temporal feature normalization (STFN).

    V_{t+1} = κ · V_t · (1 − H_t) + I_{t+1}
    H_{t+1} = g(V_{t+1} − V_th),  g(0) = 1

STFN standardizes each node's pre-activations jointly over the feature and
time axes, rescales by ρ·V_th and applies the per-(node, channel) affine λ, γ.
It needs the whole window at once; the network evaluates layer-major so the
statistics are available before the LIF recursion starts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np


class ShapeError(ValueError):
    """Arrays whose shapes do not agree with each other or with a cache."""


# =========================
#  1. Configs and state
# =========================

@dataclass(frozen=True)
class LifConfig:
    kappa: float = 0.2
    v_threshold: float = 0.5
    v_reset: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.kappa < 1.0):
            raise ValueError(f"kappa must lie in [0, 1), got {self.kappa}")
        if self.v_threshold <= 0.0:
            raise ValueError(f"v_threshold must be > 0, got {self.v_threshold}")
        if self.v_reset != 0.0:
            raise ValueError("v_reset is fixed at 0")


@dataclass(frozen=True)
class SurrogateConfig:
    half_width: float = 0.5

    def __post_init__(self) -> None:
        if self.half_width <= 0.0:
            raise ValueError(f"surrogate half_width must be > 0, got {self.half_width}")


@dataclass
class MembraneState:
    potential: np.ndarray
    last_spike: np.ndarray

    @classmethod
    def zeros(cls, shape: Tuple[int, ...]) -> "MembraneState":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StfnParams:
    lambda_: np.ndarray           # (node × channel)
    gamma: np.ndarray             # (node × channel)
    rho: np.ndarray               # 0-d array, one per layer
    epsilon: float = 1e-5

    def __post_init__(self) -> None:
        if self.epsilon <= 0.0:
            raise ValueError("STFN epsilon must be > 0")
        if self.lambda_.shape != self.gamma.shape:
            raise ShapeError(f"lambda {self.lambda_.shape} and gamma {self.gamma.shape} differ")
        self.rho = np.asarray(self.rho, dtype=np.float64).reshape(())

    @classmethod
    def identity(cls, num_nodes: int, channels: int, rho: float = 1.0, epsilon: float = 1e-5) -> "StfnParams":
        return cls(
            lambda_=np.ones((num_nodes, channels)),
            gamma=np.zeros((num_nodes, channels)),
            rho=np.array(rho, dtype=np.float64),
            epsilon=epsilon,
        )


@dataclass
class StatsCache:
    mean: np.ndarray              # (1 × node × 1)
    var: np.ndarray
    sigma: np.ndarray
    x_hat: np.ndarray             # (S − E) / sqrt(Var + ε)
    s_hat: np.ndarray             # ρ · V_th · x_hat
    v_th: float


# =========================
#  2. Spike function and surrogate
# =========================

def heaviside(x):
    """1 where x ≥ 0, else 0."""
    return (np.asarray(x) >= 0.0).astype(np.float64)


def surrogate_grad(x, cfg: SurrogateConfig):
    """Rectangular pulse 1/(2a) on |x| ≤ a, zero outside; unit mass."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) <= cfg.half_width, 1.0 / (2.0 * cfg.half_width), 0.0)


# =========================
#  3. LIF recursion
# =========================

def lif_step(state: MembraneState, inputs: np.ndarray, cfg: LifConfig) -> Tuple[MembraneState, np.ndarray]:
    if state.potential.shape != np.shape(inputs) or state.last_spike.shape != state.potential.shape:
        raise ShapeError(
            f"membrane {state.potential.shape} / spikes {state.last_spike.shape} vs input {np.shape(inputs)}"
        )
    potential = cfg.kappa * state.potential * (1.0 - state.last_spike) + inputs
    spikes = heaviside(potential - cfg.v_threshold)
    return MembraneState(potential, spikes), spikes


def clamped_ramp(x, cfg: SurrogateConfig):
    """Piecewise-linear stand-in for the spike whose slope is exactly surrogate_grad."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip((x + cfg.half_width) / (2.0 * cfg.half_width), 0.0, 1.0)


def run_lif(
    inputs: np.ndarray,
    cfg: LifConfig,
    spike_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    gates: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unroll lif_step over the leading time axis from a zero state.

    spike_fn replaces the Heaviside (relaxed model); gates, when given, are
    used as H_t in the reset term instead of the spikes just produced.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    potentials = np.empty_like(inputs)
    spikes = np.empty_like(inputs)
    if spike_fn is None and gates is None:
        state = MembraneState.zeros(inputs.shape[1:])
        for t in range(inputs.shape[0]):
            state, s = lif_step(state, inputs[t], cfg)
            potentials[t] = state.potential
            spikes[t] = s
        return potentials, spikes

    fire = spike_fn or heaviside
    v = np.zeros(inputs.shape[1:])
    h = np.zeros(inputs.shape[1:])
    for t in range(inputs.shape[0]):
        v = cfg.kappa * v * (1.0 - h) + inputs[t]
        out = fire(v - cfg.v_threshold)
        potentials[t] = v
        spikes[t] = out
        h = gates[t] if gates is not None else out
    return potentials, spikes


def lif_backward(
    grad_spikes: np.ndarray,
    potentials: np.ndarray,
    spikes: np.ndarray,
    cfg: LifConfig,
    surrogate: SurrogateConfig,
    reset_gate_grad: bool = False,
) -> np.ndarray:
    """
    BPTT through run_lif. dH/dV is replaced by surrogate_grad(V − V_th).
    The reset gate (1 − H_t) is a constant unless reset_gate_grad is set,
    in which case the −κ·V_t path into H_t is followed as well.
    """
    if not (grad_spikes.shape == potentials.shape == spikes.shape):
        raise ShapeError(
            f"grad {grad_spikes.shape}, potentials {potentials.shape}, spikes {spikes.shape} differ"
        )
    T = grad_spikes.shape[0]
    grad_inputs = np.empty_like(potentials)
    sg = surrogate_grad(potentials - cfg.v_threshold, surrogate)
    grad_v_next = np.zeros(potentials.shape[1:])
    for t in range(T - 1, -1, -1):
        grad_h = grad_spikes[t]
        if reset_gate_grad and t < T - 1:
            grad_h = grad_h - grad_v_next * cfg.kappa * potentials[t]
        carry = grad_v_next * cfg.kappa * (1.0 - spikes[t]) if t < T - 1 else 0.0
        grad_v = grad_h * sg[t] + carry
        grad_inputs[t] = grad_v
        grad_v_next = grad_v
    return grad_inputs


# =========================
#  4. STFN
# =========================

def stfn_forward(pre_acts: np.ndarray, params: StfnParams, v_th: float) -> Tuple[np.ndarray, StatsCache]:
    pre_acts = np.asarray(pre_acts, dtype=np.float64)
    if pre_acts.ndim != 3:
        raise ShapeError(f"STFN expects (T, node, channel), got {pre_acts.shape}")
    if pre_acts.shape[1:] != params.lambda_.shape:
        raise ShapeError(f"pre-activations {pre_acts.shape[1:]} vs lambda {params.lambda_.shape}")

    mean = pre_acts.mean(axis=(0, 2), keepdims=True)
    centered = pre_acts - mean
    var = (centered * centered).mean(axis=(0, 2), keepdims=True)
    sigma = np.sqrt(var + params.epsilon)
    x_hat = centered / sigma
    s_hat = params.rho * v_th * x_hat
    out = params.lambda_[None] * s_hat + params.gamma[None]
    return out, StatsCache(mean=mean, var=var, sigma=sigma, x_hat=x_hat, s_hat=s_hat, v_th=v_th)


def stfn_backward(
    grad_out: np.ndarray, cache: StatsCache, params: StfnParams
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_in, grad_lambda, grad_gamma, grad_rho)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.x_hat.shape:
        raise ShapeError(f"grad {grad_out.shape} does not match cached forward {cache.x_hat.shape}")

    grad_lambda = (grad_out * cache.s_hat).sum(axis=0)
    grad_gamma = grad_out.sum(axis=0)
    grad_s_hat = grad_out * params.lambda_[None]
    grad_rho = np.asarray((grad_s_hat * cache.v_th * cache.x_hat).sum())
    grad_x_hat = grad_s_hat * (params.rho * cache.v_th)

    # layer-norm adjoint over the joint (time, channel) block of each node
    mean_g = grad_x_hat.mean(axis=(0, 2), keepdims=True)
    mean_gx = (grad_x_hat * cache.x_hat).mean(axis=(0, 2), keepdims=True)
    grad_in = (grad_x_hat - mean_g - cache.x_hat * mean_gx) / cache.sigma
    return grad_in, grad_lambda, grad_gamma, grad_rho


def normalize_or_pass(
    pre_acts: np.ndarray, params: Optional[StfnParams], v_th: float
) -> Tuple[np.ndarray, Optional[StatsCache]]:
    """STFN when params are given, identity otherwise (the no-STFN ablation)."""
    if params is None:
        return np.asarray(pre_acts, dtype=np.float64), None
    return stfn_forward(pre_acts, params, v_th)
