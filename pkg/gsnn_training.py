# -*- coding: utf-8 -*-
"""
gsnn_training.py — Graph SNN • BPTT, optimizer and experiment loop
------------------------------------------------------------------
- RunConfig: every knob of one training run (pydantic, validated).
- backward(): exact reverse pass over the unrolled T-step network, with the
  Heaviside derivative replaced by the rectangular surrogate.
- adam_step(): bias-corrected adaptive moments, in place.
- train() / evaluate() / run_seeds(): full-graph epochs with early stopping
  on validation accuracy, repeated over seeds.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from gsnn_aggregators import ga_backward, gc_backward
from gsnn_data import Dataset, DatasetError, SpikeTensor, encode, random_split, standard_split
from gsnn_graph import SparseGraph
from gsnn_network import (
    ForwardTrace,
    LayerKind,
    LayerSpec,
    LinearReadout,
    accuracy,
    check_dim_chain,
    init_layers,
    masked_cross_entropy,
    model_forward,
)
from gsnn_neuron import LifConfig, ShapeError, SurrogateConfig, lif_backward, stfn_backward

logger = logging.getLogger("gsnn.training")


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training."""


# =========================
#  1. Run configuration
# =========================

class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    time_window: int = 8
    kappa: float = 0.2
    v_threshold: float = 0.5
    surrogate_half_width: float = 0.5
    hidden_dims: List[int] = Field(default_factory=lambda: [16])
    layer_kind: Literal["gc", "ga"] = "gc"
    gc_order: Literal["transform_first", "propagate_first"] = "transform_first"
    use_stfn: bool = True
    stfn_rho_init: float = 1.0
    stfn_epsilon: float = 1e-5
    leaky_slope: float = 0.2
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    max_epochs: int = 300
    patience: int = 50
    seeds: List[int] = Field(default_factory=lambda: list(range(10)))
    dropout_rate: float = 0.5
    encoding: Literal["repeat", "bernoulli"] = "repeat"
    encoding_seed: int = 0
    split: Literal["planetoid", "random"] = "planetoid"
    split_seed: int = 0
    reset_gate_grad: bool = False
    readout_head: bool = False

    @field_validator("time_window", "max_epochs", "patience")
    @classmethod
    def _at_least_one(cls, v: int, info) -> int:
        if v < 1:
            raise ValueError(f"{info.field_name} must be >= 1, got {v}")
        return v

    @field_validator("kappa")
    @classmethod
    def _kappa_range(cls, v: float) -> float:
        if not (0.0 <= v < 1.0):
            raise ValueError(f"kappa must lie in [0, 1), got {v}")
        return v

    @field_validator("v_threshold", "surrogate_half_width", "learning_rate", "stfn_epsilon", "adam_eps")
    @classmethod
    def _positive(cls, v: float, info) -> float:
        if v <= 0.0:
            raise ValueError(f"{info.field_name} must be > 0, got {v}")
        return v

    @field_validator("weight_decay")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if v < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {v}")
        return v

    @field_validator("dropout_rate")
    @classmethod
    def _dropout_range(cls, v: float) -> float:
        if not (0.0 <= v < 1.0):
            raise ValueError(f"dropout_rate must lie in [0, 1), got {v}")
        return v

    @field_validator("leaky_slope")
    @classmethod
    def _slope_range(cls, v: float) -> float:
        if not (0.0 < v < 1.0):
            raise ValueError(f"leaky_slope must lie in (0, 1), got {v}")
        return v

    @field_validator("hidden_dims")
    @classmethod
    def _hidden_positive(cls, v: List[int]) -> List[int]:
        if any(h < 1 for h in v):
            raise ValueError(f"hidden_dims must be positive, got {v}")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("seeds must not be empty")
        return v

    @field_validator("adam_betas")
    @classmethod
    def _betas_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= b < 1.0 for b in v):
            raise ValueError(f"adam_betas must lie in [0, 1), got {v}")
        return v

    def lif_config(self) -> LifConfig:
        return LifConfig(kappa=self.kappa, v_threshold=self.v_threshold)

    def surrogate_config(self) -> SurrogateConfig:
        return SurrogateConfig(half_width=self.surrogate_half_width)

    def layer_dims(self, feature_dim: int, class_count: int) -> List[int]:
        return [feature_dim, *self.hidden_dims, class_count]


# =========================
#  2. Gradients
# =========================

@dataclass
class GradientSet:
    layers: List[Dict[str, np.ndarray]]
    head: Optional[Dict[str, np.ndarray]] = None

    def named(self) -> Dict[str, np.ndarray]:
        out = {f"layer{n}/{k}": v for n, grads in enumerate(self.layers) for k, v in grads.items()}
        if self.head is not None:
            out.update({f"head/{k}": v for k, v in self.head.items()})
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.named().values())


def named_parameters(specs: Sequence[LayerSpec], head: Optional[LinearReadout] = None) -> Dict[str, np.ndarray]:
    out = {f"layer{n}/{k}": v for n, spec in enumerate(specs) for k, v in spec.parameters().items()}
    if head is not None:
        out.update({f"head/{k}": v for k, v in head.parameters().items()})
    return out


def backward(
    g: SparseGraph,
    trace: ForwardTrace,
    grad_logits: np.ndarray,
    specs: Sequence[LayerSpec],
    surrogate: SurrogateConfig = SurrogateConfig(),
    weight_decay: float = 0.0,
    reset_gate_grad: bool = False,
    head: Optional[LinearReadout] = None,
) -> GradientSet:
    """
    Reverse pass for one forward trace. grad_logits is dLoss/dlogits; without
    a head the logits are the rates. Weight decay adds wd·W to aggregator
    weights only.
    """
    if len(trace.layers) != len(specs):
        raise ShapeError(f"trace has {len(trace.layers)} layers, model has {len(specs)}")
    if grad_logits.shape != trace.logits.shape:
        raise ShapeError(f"grad {grad_logits.shape} vs logits {trace.logits.shape}")

    head_grads = None
    grad_rates = grad_logits
    if head is not None:
        head_grads, grad_rates = head.backward(trace.rates, grad_logits)

    last = trace.layers[-1]
    T = last.spikes.shape[0]
    grad_spikes = np.broadcast_to(grad_rates[None] / T, last.spikes.shape).copy()

    layer_grads: List[Dict[str, np.ndarray]] = [dict() for _ in specs]
    for n in range(len(specs) - 1, -1, -1):
        spec, lt = specs[n], trace.layers[n]
        if lt.spikes.shape != grad_spikes.shape or lt.pre_acts.shape[2] != spec.out_dim:
            raise ShapeError(f"layer {n}: trace does not match the layer it came from")

        frozen = lt.gates is not None
        grad_drive = lif_backward(
            grad_spikes,
            lt.potentials,
            lt.gates if frozen else lt.spikes,
            spec.lif,
            surrogate,
            reset_gate_grad=reset_gate_grad and not frozen,
        )
        grad_norm = grad_drive * lt.dropout_mask if lt.dropout_mask is not None else grad_drive

        grads: Dict[str, np.ndarray] = {}
        if spec.stfn is not None:
            grad_pre, grads["lambda"], grads["gamma"], grads["rho"] = stfn_backward(
                grad_norm, lt.stfn_cache, spec.stfn
            )
        else:
            grad_pre = grad_norm

        need_input = n > 0
        grad_in = np.zeros((T, g.num_nodes, spec.in_dim)) if need_input else None
        grad_w = np.zeros_like(spec.weight)
        if spec.kind is LayerKind.GC:
            grad_b = np.zeros_like(spec.gc.bias)
            for t in range(T):
                gw, gb, gx = gc_backward(g, lt.inputs.step(t), spec.gc, grad_pre[t], need_input)
                grad_w += gw
                grad_b += gb
                if need_input:
                    grad_in[t] = gx
            grads["bias"] = grad_b
        else:
            grad_a = np.zeros_like(spec.ga.attn)
            for t in range(T):
                gw, ga, gx = ga_backward(
                    g, lt.inputs.step(t), spec.ga, lt.attn_caches[t], grad_pre[t], need_input
                )
                grad_w += gw
                grad_a += ga
                if need_input:
                    grad_in[t] = gx
            grads["attn"] = grad_a

        if weight_decay:
            grad_w += weight_decay * spec.weight
        grads["weight"] = grad_w
        layer_grads[n] = grads
        grad_spikes = grad_in

    if head_grads is not None and weight_decay:
        head_grads["weight"] = head_grads["weight"] + weight_decay * head.weight
    return GradientSet(layers=layer_grads, head=head_grads)


# =========================
#  3. Optimizer
# =========================

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
        )


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Updates params in place; missing moment buffers start at zero."""
    beta1, beta2 = betas
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p, dtype=np.float64))
        v = state.v.setdefault(name, np.zeros_like(p, dtype=np.float64))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p[...] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# =========================
#  4. Experiment loop
# =========================

@dataclass
class TrainResult:
    seed: int
    layers: List[LayerSpec]
    head: Optional[LinearReadout]
    history: pd.DataFrame
    best_epoch: int
    best_val_acc: float
    test_acc: float
    firing_rates: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "test_acc": self.test_acc,
            "firing_rates": self.firing_rates,
            "epochs_run": int(len(self.history)),
        }


def ensure_split(d: Dataset, cfg: RunConfig) -> Dataset:
    if d.split is not None:
        return d
    if cfg.split == "planetoid":
        return standard_split(d, seed=cfg.split_seed)
    return random_split(d, seed=cfg.split_seed)


def build_model(
    d: Dataset, cfg: RunConfig, rng: np.random.Generator
) -> Tuple[List[LayerSpec], Optional[LinearReadout]]:
    specs = init_layers(
        cfg.layer_dims(d.feature_dim, d.class_count),
        num_nodes=d.num_nodes,
        kind=cfg.layer_kind,
        lif=cfg.lif_config(),
        rng=rng,
        use_stfn=cfg.use_stfn,
        rho_init=cfg.stfn_rho_init,
        epsilon=cfg.stfn_epsilon,
        dropout_rate=cfg.dropout_rate,
        leaky_slope=cfg.leaky_slope,
        order=cfg.gc_order,
    )
    head = None
    if cfg.readout_head:
        head = LinearReadout(weight=np.eye(d.class_count), bias=np.zeros(d.class_count))
    return specs, head


def _split_metrics(trace: ForwardTrace, d: Dataset, name: str) -> Tuple[float, float]:
    idx = d.split.get(name)
    if idx.shape[0] == 0:
        return float("nan"), float("nan")
    loss, _ = masked_cross_entropy(trace.logits, d.labels, idx, reduction="mean")
    return loss, accuracy(trace.logits, d.labels, idx)


def train(d: Dataset, cfg: RunConfig, seed: int = 0) -> TrainResult:
    d = ensure_split(d, cfg)
    if d.split.train.shape[0] == 0:
        raise DatasetError("training split is empty")
    if d.split.val.shape[0] == 0:
        raise DatasetError("validation split is empty; early stopping needs it")

    rng = np.random.default_rng(seed)
    dropout_rng = np.random.default_rng([seed, 1])
    specs, head = build_model(d, cfg, rng)
    check_dim_chain(specs, d.feature_dim, d.class_count)
    encoded = encode(d, cfg.time_window, cfg.encoding, cfg.encoding_seed)
    g = d.graph
    surrogate = cfg.surrogate_config()

    params = named_parameters(specs, head)
    state = AdamState.zeros(params)
    rows: List[Dict[str, float]] = []
    best_val = -1.0
    best_epoch = 0
    best_snapshot: Dict[str, np.ndarray] = {}
    stale = 0

    logger.info("Seed %d: training %s-SNN on %s (T=%d, dims=%s, stfn=%s)",
                seed, cfg.layer_kind.upper(), d.name, cfg.time_window,
                cfg.layer_dims(d.feature_dim, d.class_count), cfg.use_stfn)

    for epoch in range(1, cfg.max_epochs + 1):
        trace = model_forward(g, encoded, specs, training=True, rng=dropout_rng, head=head)
        train_loss, grad = masked_cross_entropy(trace.logits, d.labels, d.split.train, reduction="mean")
        if not np.isfinite(train_loss):
            raise TrainingDivergedError(f"seed {seed}, epoch {epoch}: training loss is {train_loss}")

        grads = backward(g, trace, grad, specs, surrogate, cfg.weight_decay, cfg.reset_gate_grad, head)
        if not grads.is_finite():
            raise TrainingDivergedError(f"seed {seed}, epoch {epoch}: non-finite gradients")
        adam_step(params, grads.named(), state, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)

        ev = model_forward(g, encoded, specs, training=False, head=head)
        _, train_acc = _split_metrics(ev, d, "train")
        val_loss, val_acc = _split_metrics(ev, d, "val")
        test_loss, test_acc = _split_metrics(ev, d, "test")
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "train_acc": train_acc,
            "val_loss": val_loss,
            "val_acc": val_acc,
            "test_loss": test_loss,
            "test_acc": test_acc,
        }
        for n, fr in enumerate(ev.firing_rates(), start=1):
            row[f"fr_layer{n}"] = fr
        rows.append(row)
        logger.debug("seed %d epoch %d: loss=%.4f val=%.4f test=%.4f", seed, epoch, train_loss, val_acc, test_acc)

        if val_acc > best_val:
            best_val, best_epoch, stale = val_acc, epoch, 0
            best_snapshot = {k: p.copy() for k, p in params.items()}
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("Seed %d: early stop at epoch %d (best epoch %d, val %.4f)",
                            seed, epoch, best_epoch, best_val)
                break

    for k, p in params.items():
        p[...] = best_snapshot[k]

    history = pd.DataFrame(rows)
    history["is_best"] = history["epoch"] == best_epoch
    best_row = history.loc[history["epoch"] == best_epoch].iloc[0]
    fr_cols = [c for c in history.columns if c.startswith("fr_layer")]
    result = TrainResult(
        seed=seed,
        layers=specs,
        head=head,
        history=history,
        best_epoch=best_epoch,
        best_val_acc=float(best_val),
        test_acc=float(best_row["test_acc"]),
        firing_rates=[float(best_row[c]) for c in fr_cols],
    )
    logger.info("Seed %d: done, best epoch %d, val %.4f, test %.4f",
                seed, best_epoch, result.best_val_acc, result.test_acc)
    return result


def evaluate(
    d: Dataset,
    specs: Sequence[LayerSpec],
    cfg: RunConfig,
    split: Literal["train", "val", "test"] = "test",
    head: Optional[LinearReadout] = None,
    encoded: Optional[SpikeTensor] = None,
) -> Dict[str, Any]:
    """Deterministic forward (dropout off) and metrics on one split."""
    d = ensure_split(d, cfg)
    check_dim_chain(specs, d.feature_dim, d.class_count)
    if encoded is None:
        encoded = encode(d, cfg.time_window, cfg.encoding, cfg.encoding_seed)
    trace = model_forward(d.graph, encoded, specs, training=False, head=head)
    loss, acc = _split_metrics(trace, d, split)
    return {
        "split": split,
        "accuracy": acc,
        "loss": loss,
        "firing_rates": trace.firing_rates(),
        "num_nodes": int(d.split.get(split).shape[0]),
    }


# =========================
#  5. Seed repetition
# =========================

@dataclass
class SeedSummary:
    results: List[TrainResult]

    def to_dict(self) -> Dict[str, Any]:
        accs = np.array([r.test_acc for r in self.results])
        return {
            "seeds": [r.seed for r in self.results],
            "test_acc_mean": float(accs.mean()),
            "test_acc_std": float(accs.std()),
            "best_epoch_mean": float(np.mean([r.best_epoch for r in self.results])),
            "firing_rate_mean": [float(x) for x in np.mean([r.firing_rates for r in self.results], axis=0)],
            "per_seed": [r.to_dict() for r in self.results],
        }


def _train_one(args: Tuple[Dataset, RunConfig, int]) -> TrainResult:
    d, cfg, seed = args
    return train(d, cfg, seed)


def run_seeds(d: Dataset, cfg: RunConfig, workers: int = 1) -> SeedSummary:
    """One train() per seed in cfg.seeds; results ordered by seed position regardless of scheduling."""
    d = ensure_split(d, cfg)
    jobs = [(d, cfg, seed) for seed in cfg.seeds]
    if workers <= 1 or len(jobs) == 1:
        results = [_train_one(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    summary = SeedSummary(results)
    s = summary.to_dict()
    logger.info("%s: test accuracy %.4f ± %.4f over %d seeds",
                d.name, s["test_acc_mean"], s["test_acc_std"], len(results))
    return summary
