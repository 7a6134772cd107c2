# -*- coding: utf-8 -*-
"""
gsnn_aggregators.py — Graph SNN • propagation step instantiations
-----------------------------------------------------------------
Per-time-step pre-synaptic input from a binary spike matrix:

- GC: symmetric-normalized graph convolution, out = P·X·W + b, with
  either order of the (linear) propagation and the affine transform.
- GA: single-head graph attention, out[i] = Σ_{j∈N(i)} α_ij · z_j with
  z = X·W and α a softmax over N(i) of leaky_relu(aᵀ[z_i ‖ z_j]).

Both come with exact reverse-mode passes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from gsnn_graph import SparseGraph, propagate, propagate_transpose
from gsnn_neuron import ShapeError


class ExecutionOrder(str, Enum):
    TRANSFORM_FIRST = "transform_first"
    PROPAGATE_FIRST = "propagate_first"


# =========================
#  1. Parameters
# =========================

@dataclass
class GcLayerParams:
    weight: np.ndarray            # (C_in × C_out)
    bias: np.ndarray              # (C_out,)

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"weight {self.weight.shape} / bias {self.bias.shape} do not fit")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("GC parameters must be finite")


@dataclass
class GaLayerParams:
    weight: np.ndarray            # (C_in × C_out)
    attn: np.ndarray              # (2·C_out,) = [a_src ‖ a_dst]
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.attn.shape != (2 * self.weight.shape[1],):
            raise ShapeError(f"weight {self.weight.shape} / attn {self.attn.shape} do not fit")
        if not (0.0 < self.leaky_slope < 1.0):
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.attn))):
            raise ValueError("GA parameters must be finite")


@dataclass
class AttentionCache:
    z: np.ndarray                 # (node × C_out)
    rows: np.ndarray              # edge i, aligned with g.indices
    cols: np.ndarray              # edge j
    scores: np.ndarray            # pre-activation aᵀ[z_i ‖ z_j]
    alpha: np.ndarray             # softmax over N(i)


# =========================
#  2. Binary row gathers
# =========================

def spike_matmul(spikes: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """spikes · W as additions of the weight rows selected by each node's active inputs."""
    return np.asarray(sp.csr_matrix(spikes, dtype=np.float64) @ weight)


def spike_matmul_transpose(spikes: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """spikesᵀ · grad, again a gather over active entries."""
    return np.asarray(sp.csr_matrix(spikes, dtype=np.float64).T @ grad)


def _check_input(g: SparseGraph, spikes: np.ndarray, weight: np.ndarray) -> None:
    if spikes.ndim != 2 or spikes.shape[0] != g.num_nodes:
        raise ShapeError(f"spikes {spikes.shape} vs graph with {g.num_nodes} nodes")
    if spikes.shape[1] != weight.shape[0]:
        raise ShapeError(f"spike channels {spikes.shape[1]} vs weight rows {weight.shape[0]}")


# =========================
#  3. Graph convolution
# =========================

def gc_forward(
    g: SparseGraph,
    spikes: np.ndarray,
    p: GcLayerParams,
    order: ExecutionOrder = ExecutionOrder.TRANSFORM_FIRST,
) -> np.ndarray:
    _check_input(g, spikes, p.weight)
    if ExecutionOrder(order) is ExecutionOrder.TRANSFORM_FIRST:
        out = propagate(g, spike_matmul(spikes, p.weight))
    else:
        out = propagate(g, spikes) @ p.weight
    return out + p.bias[None, :]


def gc_backward(
    g: SparseGraph,
    spikes: np.ndarray,
    p: GcLayerParams,
    grad_out: np.ndarray,
    need_input_grad: bool = True,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_weight, grad_bias, grad_spikes); grad_spikes is None when not requested."""
    _check_input(g, spikes, p.weight)
    if grad_out.shape != (g.num_nodes, p.weight.shape[1]):
        raise ShapeError(f"grad_out {grad_out.shape} vs expected {(g.num_nodes, p.weight.shape[1])}")
    grad_bias = grad_out.sum(axis=0)
    grad_xw = propagate_transpose(g, grad_out)
    grad_weight = spike_matmul_transpose(spikes, grad_xw)
    grad_spikes = grad_xw @ p.weight.T if need_input_grad else None
    return grad_weight, grad_bias, grad_spikes


# =========================
#  4. Graph attention
# =========================

def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def ga_forward(g: SparseGraph, spikes: np.ndarray, p: GaLayerParams) -> Tuple[np.ndarray, AttentionCache]:
    _check_input(g, spikes, p.weight)
    c_out = p.weight.shape[1]
    z = spike_matmul(spikes, p.weight)
    f_src = z @ p.attn[:c_out]
    f_dst = z @ p.attn[c_out:]

    rows = g.edge_rows()
    cols = g.indices
    scores = f_src[rows] + f_dst[cols]
    e = _leaky(scores, p.leaky_slope)

    # every row holds its self-loop, so reduceat never sees an empty segment
    starts = g.indptr[:-1]
    row_max = np.maximum.reduceat(e, starts)
    w = np.exp(e - row_max[rows])
    denom = np.add.reduceat(w, starts)
    alpha = w / denom[rows]

    attn_matrix = sp.csr_matrix((alpha, g.indices, g.indptr), shape=(g.num_nodes, g.num_nodes))
    out = np.asarray(attn_matrix @ z)
    return out, AttentionCache(z=z, rows=rows, cols=cols, scores=scores, alpha=alpha)


def ga_backward(
    g: SparseGraph,
    spikes: np.ndarray,
    p: GaLayerParams,
    cache: AttentionCache,
    grad_out: np.ndarray,
    need_input_grad: bool = True,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_weight, grad_attn, grad_spikes); grad_spikes is None when not requested."""
    _check_input(g, spikes, p.weight)
    c_out = p.weight.shape[1]
    if grad_out.shape != (g.num_nodes, c_out):
        raise ShapeError(f"grad_out {grad_out.shape} vs expected {(g.num_nodes, c_out)}")
    if cache.alpha.shape[0] != g.nnz:
        raise ShapeError("attention cache does not belong to this graph")

    z, rows, cols, alpha = cache.z, cache.rows, cache.cols, cache.alpha
    attn_matrix = sp.csr_matrix((alpha, g.indices, g.indptr), shape=(g.num_nodes, g.num_nodes))
    grad_z = np.asarray(attn_matrix.T @ grad_out)

    # softmax adjoint within each neighborhood
    grad_alpha = np.einsum("ec,ec->e", grad_out[rows], z[cols])
    weighted = np.add.reduceat(alpha * grad_alpha, g.indptr[:-1])
    grad_e = alpha * (grad_alpha - weighted[rows])
    grad_scores = grad_e * np.where(cache.scores > 0.0, 1.0, p.leaky_slope)

    grad_f_src = np.bincount(rows, weights=grad_scores, minlength=g.num_nodes)
    grad_f_dst = np.bincount(cols, weights=grad_scores, minlength=g.num_nodes)
    a_src, a_dst = p.attn[:c_out], p.attn[c_out:]
    grad_attn = np.concatenate([z.T @ grad_f_src, z.T @ grad_f_dst])
    grad_z += np.outer(grad_f_src, a_src) + np.outer(grad_f_dst, a_dst)

    grad_weight = spike_matmul_transpose(spikes, grad_z)
    grad_spikes = grad_z @ p.weight.T if need_input_grad else None
    return grad_weight, grad_attn, grad_spikes
