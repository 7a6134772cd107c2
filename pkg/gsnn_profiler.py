# -*- coding: utf-8 -*-
"""
gsnn_profiler.py — Graph SNN • operation counts and firing statistics
---------------------------------------------------------------------
Post-hoc efficiency analysis of a forward trace.

Accounting (written into every report header):
- transform: the feature affine map X·W only. A GNN pays one multiplication
  per (node, C_in, C_out) triple; a spiking layer pays one addition per
  active input spike and output channel, summed over the time window, and
  no multiplications.
- propagation: multiply-adds of the normalized neighborhood sum, graph_nnz·C_out
  per pass. Reported separately, never part of the ratio.
- overhead: scalar LIF and STFN work per neuron and step, reported separately.
- compression ratio: GNN transform multiplications / SNN transform additions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from gsnn_network import ForwardTrace

logger = logging.getLogger("gsnn.profiler")

ACCOUNTING_MODES = ("dense", "sparse_input")
LIF_OPS_PER_STEP = 4          # decay, gate, integrate, compare
STFN_OPS_PER_ELEMENT = 6      # mean, variance, center, scale, affine (2)
RATE_BIN_WIDTH = 0.05
LOW_RATE_CUTOFF = 0.10


# =========================
#  1. Reports
# =========================

@dataclass
class LayerOps:
    layer: int
    c_in: int
    c_out: int
    transform_mults: int = 0
    transform_adds: int = 0
    propagation_macs: int = 0
    overhead_ops: int = 0

    def to_dict(self) -> Dict[str, int]:
        return {
            "layer": self.layer,
            "c_in": self.c_in,
            "c_out": self.c_out,
            "transform_mults": self.transform_mults,
            "transform_adds": self.transform_adds,
            "propagation_macs": self.propagation_macs,
            "overhead_ops": self.overhead_ops,
        }


@dataclass
class OpReport:
    model: str                    # "gnn" or "snn"
    accounting: str
    layers: List[LayerOps] = field(default_factory=list)
    firing_rates: List[float] = field(default_factory=list)

    @property
    def mult_count(self) -> int:
        return sum(l.transform_mults for l in self.layers)

    @property
    def add_count(self) -> int:
        return sum(l.transform_adds for l in self.layers)

    @property
    def propagation_macs(self) -> int:
        return sum(l.propagation_macs for l in self.layers)

    @property
    def overhead_ops(self) -> int:
        return sum(l.overhead_ops for l in self.layers)

    @property
    def transform_ops(self) -> int:
        """What the ratio compares: multiplications for the GNN, additions for the SNN."""
        return self.mult_count if self.model == "gnn" else self.add_count

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "accounting": self.accounting,
            "mult_count": self.mult_count,
            "add_count": self.add_count,
            "propagation_macs": self.propagation_macs,
            "overhead_ops": self.overhead_ops,
            "firing_rates": list(self.firing_rates),
            "layers": [l.to_dict() for l in self.layers],
        }


def count_gnn_ops(
    layer_dims: Sequence[int],
    num_nodes: int,
    graph_nnz: int,
    accounting: str = "dense",
    input_nnz: Optional[int] = None,
) -> OpReport:
    """
    Matched GNN cost of one inference. "sparse_input" charges the first layer
    only for nonzero input features (input_nnz of them), the rest stay dense.
    """
    if len(layer_dims) < 2:
        raise ValueError("need at least input and output dims")
    if accounting not in ACCOUNTING_MODES:
        raise ValueError(f"unknown accounting '{accounting}' (expected one of {ACCOUNTING_MODES})")
    if accounting == "sparse_input" and input_nnz is None:
        raise ValueError("sparse_input accounting needs input_nnz")

    report = OpReport(model="gnn", accounting=accounting)
    for n, (c_in, c_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        if n == 0 and accounting == "sparse_input":
            mults = int(input_nnz) * c_out
            adds = max(int(input_nnz) - num_nodes, 0) * c_out
        else:
            mults = num_nodes * c_in * c_out
            adds = num_nodes * max(c_in - 1, 0) * c_out
        report.layers.append(LayerOps(
            layer=n + 1,
            c_in=c_in,
            c_out=c_out,
            transform_mults=mults,
            transform_adds=adds,
            propagation_macs=graph_nnz * c_out,
        ))
    return report


def count_snn_ops(
    trace: ForwardTrace,
    layer_dims: Optional[Sequence[int]] = None,
    T: Optional[int] = None,
    graph_nnz: int = 0,
    accounting: str = "dense",
) -> OpReport:
    """
    Spike-gated row additions read off the trace, summed over the window.
    `accounting` is only recorded; the count is the same in both modes.
    """
    if accounting not in ACCOUNTING_MODES:
        raise ValueError(f"unknown accounting '{accounting}' (expected one of {ACCOUNTING_MODES})")
    report = OpReport(model="snn", accounting=accounting)
    for n, lt in enumerate(trace.layers):
        window, num_nodes, c_out = lt.spikes.shape
        c_in = lt.inputs.channels
        if T is not None and window != T:
            raise ValueError(f"layer {n + 1} ran {window} steps, expected T={T}")
        if layer_dims is not None and (layer_dims[n], layer_dims[n + 1]) != (c_in, c_out):
            raise ValueError(f"layer {n + 1} is {c_in}→{c_out}, dims say {layer_dims[n]}→{layer_dims[n + 1]}")
        active = int(np.count_nonzero(lt.inputs.data))
        per_elem = LIF_OPS_PER_STEP + (STFN_OPS_PER_ELEMENT if lt.stfn_cache is not None else 0)
        report.layers.append(LayerOps(
            layer=n + 1,
            c_in=c_in,
            c_out=c_out,
            transform_mults=0,
            transform_adds=active * c_out,
            propagation_macs=window * graph_nnz * c_out,
            overhead_ops=window * num_nodes * c_out * per_elem,
        ))
        report.firing_rates.append(lt.firing_rate())
    return report


# =========================
#  2. Firing and potential statistics
# =========================

@dataclass
class FiringStats:
    layer: int
    mean_rate: float
    bin_edges: List[float]
    counts: List[int]
    fraction_below_10pct: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layer": self.layer,
            "mean_rate": self.mean_rate,
            "bin_edges": self.bin_edges,
            "counts": self.counts,
            "fraction_below_10pct": self.fraction_below_10pct,
        }


def firing_stats(trace: ForwardTrace) -> List[FiringStats]:
    """Per layer: mean rate and a histogram of per-neuron rates in bins of 0.05."""
    edges = np.linspace(0.0, 1.0, int(round(1.0 / RATE_BIN_WIDTH)) + 1)
    out: List[FiringStats] = []
    for n, lt in enumerate(trace.layers):
        per_neuron = lt.spikes.mean(axis=0).ravel() if lt.spikes.size else np.zeros(0)
        counts, _ = np.histogram(per_neuron, bins=edges)
        below = float(np.mean(per_neuron < LOW_RATE_CUTOFF)) if per_neuron.size else 1.0
        out.append(FiringStats(
            layer=n + 1,
            mean_rate=lt.firing_rate(),
            bin_edges=[float(e) for e in edges],
            counts=[int(c) for c in counts],
            fraction_below_10pct=below,
        ))
    return out


def _histogram(values: np.ndarray, bins: int) -> Dict[str, Any]:
    values = values.ravel()
    if values.size == 0:
        return {"mean": 0.0, "std": 0.0, "bin_edges": [], "counts": []}
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return {
        "mean": float(values.mean()),
        "std": float(values.std()),
        "bin_edges": [float(e) for e in edges],
        "counts": [int(c) for c in counts],
    }


def preactivation_stats(trace: ForwardTrace, bins: int = 40, v_threshold: Optional[float] = None) -> List[Dict[str, Any]]:
    """Distribution of pre-activations before and after STFN, per layer."""
    out: List[Dict[str, Any]] = []
    for n, lt in enumerate(trace.layers):
        entry: Dict[str, Any] = {
            "layer": n + 1,
            "raw": _histogram(lt.pre_acts, bins),
            "normalized": _histogram(lt.normalized, bins),
        }
        if v_threshold is not None and lt.normalized.size:
            entry["fraction_above_threshold"] = float(np.mean(lt.normalized >= v_threshold))
        out.append(entry)
    return out


# =========================
#  3. Efficiency report
# =========================

def compression_ratio(gnn: OpReport, snn: OpReport) -> float:
    snn_ops = snn.transform_ops
    if snn_ops == 0:
        return math.inf
    return gnn.transform_ops / snn_ops


def _ratio_out(ratio: float) -> Union[float, str]:
    return "inf" if math.isinf(ratio) else ratio


@dataclass
class EfficiencyReport:
    gnn: OpReport
    snn: OpReport
    compression_ratio: float
    firing: List[FiringStats]
    time_window: int
    num_nodes: int
    graph_nnz: int
    preactivations: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def layer_count(self) -> int:
        return len(self.snn.layers)

    def header(self) -> Dict[str, str]:
        return {
            "transform": "feature affine map only; GNN counts multiplications, SNN counts spike-gated additions summed over the window",
            "propagation": "graph_nnz * C_out multiply-adds per pass, reported separately",
            "overhead": f"LIF {LIF_OPS_PER_STEP} ops per neuron-step, STFN {STFN_OPS_PER_ELEMENT} ops per element, reported separately",
            "ratio": "gnn transform mults / snn transform adds",
            "gnn_accounting": self.gnn.accounting,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accounting": self.header(),
            "time_window": self.time_window,
            "num_nodes": self.num_nodes,
            "graph_nnz": self.graph_nnz,
            "layer_count": self.layer_count,
            "compression_ratio": _ratio_out(self.compression_ratio),
            "gnn": self.gnn.to_dict(),
            "snn": self.snn.to_dict(),
            "firing": [f.to_dict() for f in self.firing],
            "preactivations": self.preactivations,
        }

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for rep in (self.gnn, self.snn):
            for l in rep.layers:
                rows.append({"model": rep.model, **l.to_dict()})
        return pd.DataFrame(rows)


def build_efficiency_report(
    trace: ForwardTrace,
    layer_dims: Sequence[int],
    num_nodes: int,
    graph_nnz: int,
    T: int,
    accounting: str = "dense",
    input_nnz: Optional[int] = None,
    v_threshold: Optional[float] = None,
) -> EfficiencyReport:
    if accounting == "sparse_input" and input_nnz is None:
        # one time step of the first layer's input stands for the static feature matrix
        input_nnz = int(np.count_nonzero(trace.layers[0].inputs.step(0)))
    gnn = count_gnn_ops(layer_dims, num_nodes, graph_nnz, accounting=accounting, input_nnz=input_nnz)
    snn = count_snn_ops(trace, layer_dims, T, graph_nnz=graph_nnz, accounting=accounting)
    report = EfficiencyReport(
        gnn=gnn,
        snn=snn,
        compression_ratio=compression_ratio(gnn, snn),
        firing=firing_stats(trace),
        time_window=T,
        num_nodes=num_nodes,
        graph_nnz=graph_nnz,
        preactivations=preactivation_stats(trace, v_threshold=v_threshold),
    )
    logger.info("Efficiency: %d-layer model, GNN mults=%d, SNN adds=%d, ratio=%s",
                report.layer_count, gnn.mult_count, snn.add_count, _ratio_out(report.compression_ratio))
    return report


# =========================
#  4. Writers
# =========================

def write_report_json(report: EfficiencyReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
    return path


def write_report_csv(report: EfficiencyReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    report.to_frame().to_csv(path, index=False)
    return path


def ratio_by_depth(reports: Sequence[EfficiencyReport]) -> pd.DataFrame:
    """Plot-ready rows: one per model depth."""
    rows = [
        {
            "layer_count": r.layer_count,
            "gnn_mults": r.gnn.mult_count,
            "snn_adds": r.snn.add_count,
            "ratio": _ratio_out(r.compression_ratio),
        }
        for r in reports
    ]
    return pd.DataFrame(rows, columns=["layer_count", "gnn_mults", "snn_adds", "ratio"]).sort_values(
        "layer_count", kind="stable"
    ).reset_index(drop=True)


def write_ratio_by_depth(reports: Sequence[EfficiencyReport], path: Union[str, Path]) -> Path:
    path = Path(path)
    ratio_by_depth(reports).to_csv(path, index=False)
    return path
