# -*- coding: utf-8 -*-
"""
gsnn_network.py — Graph SNN • layer composition and readout
-----------------------------------------------------------
One spiking graph layer = aggregator → STFN → (dropout) → LIF.

Evaluation is layer-major: a layer's pre-activations S_t depend only on the
previous layer's spikes, so all T slices are built first, normalized with
full-window statistics, and only then fed through the LIF recursion.

The last layer's firing rates are the class logits (identity readout) unless
the optional linear readout head is enabled.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gsnn_aggregators import (
    AttentionCache,
    ExecutionOrder,
    GaLayerParams,
    GcLayerParams,
    ga_forward,
    gc_forward,
)
from gsnn_data import SpikeTensor
from gsnn_graph import SparseGraph
from gsnn_neuron import (
    LifConfig,
    ShapeError,
    StatsCache,
    StfnParams,
    normalize_or_pass,
    run_lif,
)

logger = logging.getLogger("gsnn.network")

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file unreadable, of an unknown version, or incompatible with the data."""


class LayerKind(str, Enum):
    GC = "gc"
    GA = "ga"


# =========================
#  1. Layer description
# =========================

@dataclass
class LayerSpec:
    kind: LayerKind
    in_dim: int
    out_dim: int
    lif: LifConfig
    stfn: Optional[StfnParams] = None
    gc: Optional[GcLayerParams] = None
    ga: Optional[GaLayerParams] = None
    dropout_rate: float = 0.0
    order: ExecutionOrder = ExecutionOrder.TRANSFORM_FIRST

    def __post_init__(self) -> None:
        self.kind = LayerKind(self.kind)
        self.order = ExecutionOrder(self.order)
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ShapeError(f"layer dims must be positive, got {self.in_dim}→{self.out_dim}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        agg = self.gc if self.kind is LayerKind.GC else self.ga
        if agg is None:
            raise ValueError(f"{self.kind.value} layer is missing its aggregator parameters")
        if agg.weight.shape != (self.in_dim, self.out_dim):
            raise ShapeError(f"weight {agg.weight.shape} vs dims {(self.in_dim, self.out_dim)}")
        if self.stfn is not None and self.stfn.lambda_.shape[1] != self.out_dim:
            raise ShapeError(f"STFN params {self.stfn.lambda_.shape} vs out_dim {self.out_dim}")

    @property
    def weight(self) -> np.ndarray:
        return self.gc.weight if self.kind is LayerKind.GC else self.ga.weight

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays by name; updates happen in place on these objects."""
        params: Dict[str, np.ndarray] = {"weight": self.weight}
        if self.kind is LayerKind.GC:
            params["bias"] = self.gc.bias
        else:
            params["attn"] = self.ga.attn
        if self.stfn is not None:
            params["lambda"] = self.stfn.lambda_
            params["gamma"] = self.stfn.gamma
            params["rho"] = self.stfn.rho
        return params


@dataclass
class LinearReadout:
    weight: np.ndarray            # (C^L × C^L)
    bias: np.ndarray

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, rates: np.ndarray) -> np.ndarray:
        return rates @ self.weight + self.bias[None, :]

    def backward(self, rates: np.ndarray, grad_logits: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        grads = {"weight": rates.T @ grad_logits, "bias": grad_logits.sum(axis=0)}
        return grads, grad_logits @ self.weight.T


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_layers(
    dims: Sequence[int],
    num_nodes: int,
    kind: Union[LayerKind, str],
    lif: LifConfig,
    rng: np.random.Generator,
    use_stfn: bool = True,
    rho_init: float = 1.0,
    epsilon: float = 1e-5,
    dropout_rate: float = 0.5,
    leaky_slope: float = 0.2,
    order: Union[ExecutionOrder, str] = ExecutionOrder.TRANSFORM_FIRST,
) -> List[LayerSpec]:
    """Glorot-uniform weights and attention vectors, zero bias, λ = 1, γ = 0, ρ = rho_init."""
    if len(dims) < 2:
        raise ShapeError("need at least input and output dims")
    kind = LayerKind(kind)
    layers: List[LayerSpec] = []
    for c_in, c_out in zip(dims[:-1], dims[1:]):
        weight = _glorot(rng, c_in, c_out, (c_in, c_out))
        gc = ga = None
        if kind is LayerKind.GC:
            gc = GcLayerParams(weight=weight, bias=np.zeros(c_out))
        else:
            ga = GaLayerParams(weight=weight, attn=_glorot(rng, 2 * c_out, 1, (2 * c_out,)), leaky_slope=leaky_slope)
        stfn = StfnParams.identity(num_nodes, c_out, rho=rho_init, epsilon=epsilon) if use_stfn else None
        layers.append(
            LayerSpec(kind=kind, in_dim=c_in, out_dim=c_out, lif=lif, stfn=stfn,
                      gc=gc, ga=ga, dropout_rate=dropout_rate, order=ExecutionOrder(order))
        )
    return layers


# =========================
#  2. Traces
# =========================

@dataclass
class LayerTrace:
    inputs: SpikeTensor
    pre_acts: np.ndarray          # S_t, (T × node × C_out)
    normalized: np.ndarray        # after STFN, before dropout
    drive: np.ndarray             # what the LIF recursion integrates
    potentials: np.ndarray
    spikes: np.ndarray
    stfn_cache: Optional[StatsCache] = None
    attn_caches: Optional[List[AttentionCache]] = None
    dropout_mask: Optional[np.ndarray] = None
    gates: Optional[np.ndarray] = None   # frozen reset gates of the relaxed model

    def firing_rate(self) -> float:
        return float(self.spikes.mean()) if self.spikes.size else 0.0


@dataclass
class ForwardTrace:
    layers: List[LayerTrace]
    rates: np.ndarray             # (node × C^L)
    logits: np.ndarray
    extras: Dict[str, Any] = field(default_factory=dict)

    def firing_rates(self) -> List[float]:
        return [lt.firing_rate() for lt in self.layers]


# =========================
#  3. Forward
# =========================

def layer_forward(
    g: SparseGraph,
    input_spikes: SpikeTensor,
    spec: LayerSpec,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    spike_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    gates: Optional[np.ndarray] = None,
) -> Tuple[SpikeTensor, LayerTrace]:
    """
    spike_fn / gates switch the LIF stage to the relaxed model used for
    gradient checks; leave them unset for the spiking network.
    """
    if input_spikes.channels != spec.in_dim:
        raise ShapeError(f"input channels {input_spikes.channels} vs layer in_dim {spec.in_dim}")
    if input_spikes.num_nodes != g.num_nodes:
        raise ShapeError(f"input nodes {input_spikes.num_nodes} vs graph {g.num_nodes}")

    T = input_spikes.time_window
    pre_acts = np.empty((T, g.num_nodes, spec.out_dim))
    attn_caches: Optional[List[AttentionCache]] = [] if spec.kind is LayerKind.GA else None
    for t in range(T):
        x_t = input_spikes.step(t)
        if spec.kind is LayerKind.GC:
            pre_acts[t] = gc_forward(g, x_t, spec.gc, spec.order)
        else:
            pre_acts[t], cache = ga_forward(g, x_t, spec.ga)
            attn_caches.append(cache)

    normalized, stfn_cache = normalize_or_pass(pre_acts, spec.stfn, spec.lif.v_threshold)

    mask = None
    drive = normalized
    if training and spec.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("dropout in training needs an rng")
        keep = 1.0 - spec.dropout_rate
        mask = (rng.random(normalized.shape) < keep) / keep
        drive = normalized * mask

    potentials, spikes = run_lif(drive, spec.lif, spike_fn=spike_fn, gates=gates)
    trace = LayerTrace(
        inputs=input_spikes,
        pre_acts=pre_acts,
        normalized=normalized,
        drive=drive,
        potentials=potentials,
        spikes=spikes,
        stfn_cache=stfn_cache,
        attn_caches=attn_caches,
        dropout_mask=mask,
        gates=gates,
    )
    return SpikeTensor(spikes), trace


def check_dim_chain(specs: Sequence[LayerSpec], input_dim: int, class_count: Optional[int] = None) -> None:
    expected = input_dim
    for n, spec in enumerate(specs):
        if spec.in_dim != expected:
            raise ShapeError(f"layer {n} expects {spec.in_dim} inputs, previous stage gives {expected}")
        expected = spec.out_dim
    if class_count is not None and expected != class_count:
        raise ShapeError(f"last layer emits {expected} channels, dataset has {class_count} classes")


def model_forward(
    g: SparseGraph,
    encoded: SpikeTensor,
    specs: Sequence[LayerSpec],
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    head: Optional[LinearReadout] = None,
    spike_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    gates: Optional[Sequence[np.ndarray]] = None,
) -> ForwardTrace:
    if not specs:
        raise ShapeError("model has no layers")
    check_dim_chain(specs, encoded.channels)
    traces: List[LayerTrace] = []
    x = encoded
    for n, spec in enumerate(specs):
        x, lt = layer_forward(g, x, spec, training=training, rng=rng, spike_fn=spike_fn,
                              gates=None if gates is None else gates[n])
        traces.append(lt)
    rates = readout(x)
    logits = head.forward(rates) if head is not None else rates
    return ForwardTrace(layers=traces, rates=rates, logits=logits)


def readout(final_spikes: SpikeTensor) -> np.ndarray:
    """Rate decoding: per-node average of the spike train over the window."""
    return np.asarray(final_spikes.data, dtype=np.float64).mean(axis=0)


# =========================
#  4. Loss and metrics
# =========================

def _mask_indices(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        mask = np.flatnonzero(mask)
    mask = mask.astype(np.int64)
    if mask.size == 0:
        raise ValueError("mask selects no nodes")
    return mask


def masked_cross_entropy(
    rates: np.ndarray, labels: np.ndarray, mask, reduction: str = "sum"
) -> Tuple[float, np.ndarray]:
    """
    −Σ_{l∈mask} ln softmax(rates_l)[label_l] and its gradient w.r.t. rates
    (zero outside the mask). reduction="mean" divides both by |mask|.
    """
    idx = _mask_indices(mask)
    z = rates[idx]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    y = labels[idx]
    loss = -float(log_probs[np.arange(idx.shape[0]), y].sum())

    grad_rows = np.exp(log_probs)
    grad_rows[np.arange(idx.shape[0]), y] -= 1.0
    grad = np.zeros_like(rates, dtype=np.float64)
    np.add.at(grad, idx, grad_rows)
    if reduction == "mean":
        loss /= idx.shape[0]
        grad /= idx.shape[0]
    elif reduction != "sum":
        raise ValueError(f"unknown reduction '{reduction}'")
    return loss, grad


def accuracy(rates: np.ndarray, labels: np.ndarray, mask) -> float:
    """Fraction of masked nodes whose argmax (lowest index on ties) matches the label."""
    idx = _mask_indices(mask)
    pred = np.argmax(rates[idx], axis=1)
    return float(np.mean(pred == labels[idx]))


# =========================
#  5. Checkpoints
# =========================

@dataclass
class Checkpoint:
    layers: List[LayerSpec]
    run_config: Dict[str, Any]
    head: Optional[LinearReadout] = None
    meta: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(
    path: Union[str, Path],
    layers: Sequence[LayerSpec],
    run_config: Dict[str, Any],
    head: Optional[LinearReadout] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """Versioned .npz: raw float64 arrays per layer plus a JSON header."""
    path = Path(path)
    arrays: Dict[str, np.ndarray] = {}
    layer_meta: List[Dict[str, Any]] = []
    for n, spec in enumerate(layers):
        for name, arr in spec.parameters().items():
            arrays[f"layer{n}/{name}"] = np.asarray(arr)
        layer_meta.append({
            "kind": spec.kind.value,
            "in_dim": spec.in_dim,
            "out_dim": spec.out_dim,
            "kappa": spec.lif.kappa,
            "v_threshold": spec.lif.v_threshold,
            "dropout_rate": spec.dropout_rate,
            "order": spec.order.value,
            "leaky_slope": spec.ga.leaky_slope if spec.ga is not None else None,
            "stfn_epsilon": spec.stfn.epsilon if spec.stfn is not None else None,
        })
    if head is not None:
        arrays["head/weight"] = head.weight
        arrays["head/bias"] = head.bias
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "layers": layer_meta,
        "run_config": run_config,
        "has_head": head is not None,
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with path.open("wb") as f:
        np.savez(f, **arrays)
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
        header = json.loads(arrays.pop("header").tobytes().decode("utf-8"))
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")

    try:
        layers: List[LayerSpec] = []
        for n, lm in enumerate(header["layers"]):
            kind = LayerKind(lm["kind"])
            weight = arrays[f"layer{n}/weight"]
            stfn = None
            if lm["stfn_epsilon"] is not None:
                stfn = StfnParams(
                    lambda_=arrays[f"layer{n}/lambda"],
                    gamma=arrays[f"layer{n}/gamma"],
                    rho=arrays[f"layer{n}/rho"],
                    epsilon=lm["stfn_epsilon"],
                )
            gc = GcLayerParams(weight, arrays[f"layer{n}/bias"]) if kind is LayerKind.GC else None
            ga = (GaLayerParams(weight, arrays[f"layer{n}/attn"], lm["leaky_slope"])
                  if kind is LayerKind.GA else None)
            layers.append(LayerSpec(
                kind=kind, in_dim=lm["in_dim"], out_dim=lm["out_dim"],
                lif=LifConfig(kappa=lm["kappa"], v_threshold=lm["v_threshold"]),
                stfn=stfn, gc=gc, ga=ga, dropout_rate=lm["dropout_rate"], order=lm["order"],
            ))
        head = None
        if header.get("has_head"):
            head = LinearReadout(arrays["head/weight"], arrays["head/bias"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"checkpoint {path} is inconsistent: {exc}") from exc

    return Checkpoint(layers=layers, run_config=header["run_config"], head=head, meta=header.get("meta", {}))
