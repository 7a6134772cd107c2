# -*- coding: utf-8 -*-
"""
gsnn_graph.py — Graph SNN • sparse graph core
---------------------------------------------
Immutable undirected graph with the symmetric degree-normalized propagation
operator D^{-1/2}(A+I)D^{-1/2} that every aggregator uses.

- Raw edges keep A_ii = 0; self-loops are added as a separate augmentation step.
- Neighbor lists are sorted by node id so sums happen in a fixed order.
- The operator is stored once as a scipy CSR matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger("gsnn.graph")


class GraphError(ValueError):
    """Invalid graph construction or a feature matrix that does not fit the graph."""


# =========================
#  1. SparseGraph
# =========================

@dataclass(frozen=True, eq=False)
class SparseGraph:
    num_nodes: int
    edges: Tuple[Tuple[int, int], ...]
    indptr: np.ndarray
    indices: np.ndarray
    degree: np.ndarray
    norm_coeff: np.ndarray
    operator: sp.csr_matrix = field(repr=False, compare=False)

    @property
    def num_edges(self) -> int:
        """Undirected edges, self-loops excluded."""
        return len(self.edges)

    @property
    def nnz(self) -> int:
        """Stored entries of the augmented operator (2·|E| + N)."""
        return int(self.indices.shape[0])

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def coeff(self, i: int, j: int) -> float:
        """1/c_ij, or 0.0 when j is not in N(i)."""
        row = self.neighbors(i)
        pos = np.searchsorted(row, j)
        if pos < row.shape[0] and row[pos] == j:
            return float(self.norm_coeff[self.indptr[i] + pos])
        return 0.0

    def edge_rows(self) -> np.ndarray:
        """Row index of every stored entry, aligned with `indices`."""
        return np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "num_edges": self.num_edges,
            "nnz": self.nnz,
            "max_degree": int(self.degree.max()) if self.num_nodes else 0,
        }


def build_graph(num_nodes: int, edge_list: Iterable[Sequence[int]]) -> SparseGraph:
    """
    Deduplicate, symmetrize and self-loop-augment an undirected edge list.
    Input self-loops are dropped (the augmentation adds exactly one per node).
    """
    if num_nodes < 0:
        raise GraphError(f"num_nodes must be non-negative, got {num_nodes}")

    pairs = set()
    dropped_loops = 0
    for pair in edge_list:
        u, v = int(pair[0]), int(pair[1])
        if not (0 <= u < num_nodes and 0 <= v < num_nodes):
            raise GraphError(f"edge ({u}, {v}) references a node outside [0, {num_nodes})")
        if u == v:
            dropped_loops += 1
            continue
        pairs.add((min(u, v), max(u, v)))

    if dropped_loops:
        logger.debug("Dropped %d self-loops from the raw edge list.", dropped_loops)

    edges = tuple(sorted(pairs))

    # A + I in coordinate form
    if edges:
        e = np.asarray(edges, dtype=np.int64)
        rows = np.concatenate([e[:, 0], e[:, 1], np.arange(num_nodes)])
        cols = np.concatenate([e[:, 1], e[:, 0], np.arange(num_nodes)])
    else:
        rows = np.arange(num_nodes)
        cols = np.arange(num_nodes)

    adj = sp.csr_matrix(
        (np.ones(rows.shape[0]), (rows, cols)), shape=(num_nodes, num_nodes)
    )
    adj.sort_indices()

    degree = np.diff(adj.indptr).astype(np.int64)
    inv_sqrt = 1.0 / np.sqrt(degree.astype(np.float64))
    row_of_entry = np.repeat(np.arange(num_nodes), degree)
    norm_coeff = inv_sqrt[row_of_entry] * inv_sqrt[adj.indices]

    indptr = adj.indptr.astype(np.int64)
    indices = adj.indices.astype(np.int64)
    operator = sp.csr_matrix((norm_coeff, indices, indptr), shape=(num_nodes, num_nodes))

    for arr in (indptr, indices, degree, norm_coeff):
        arr.setflags(write=False)

    return SparseGraph(
        num_nodes=num_nodes,
        edges=edges,
        indptr=indptr,
        indices=indices,
        degree=degree,
        norm_coeff=norm_coeff,
        operator=operator,
    )


# =========================
#  2. Propagation
# =========================

def _check_rows(g: SparseGraph, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    if features.ndim == 0 or features.shape[0] != g.num_nodes:
        raise GraphError(
            f"feature rows {features.shape[:1]} do not match num_nodes={g.num_nodes}"
        )
    return features


def propagate(g: SparseGraph, features: np.ndarray) -> np.ndarray:
    """
    out[i] = Σ_{j ∈ N(i)} norm_coeff(i, j) · features[j].
    Trailing dimensions beyond the node axis are treated as channels.
    """
    features = _check_rows(g, features)
    width = int(np.prod(features.shape[1:], dtype=np.int64))
    flat = features.reshape(g.num_nodes, width).astype(np.float64, copy=False)
    out = g.operator @ flat
    return np.asarray(out).reshape(features.shape)


def propagate_transpose(g: SparseGraph, grad: np.ndarray) -> np.ndarray:
    """Adjoint of `propagate`; the operator is symmetric so this is the same map."""
    return propagate(g, grad)


def dense_operator(g: SparseGraph) -> np.ndarray:
    return g.operator.toarray()


def edges_from_dense(adjacency: np.ndarray) -> List[Tuple[int, int]]:
    """Upper-triangle (u, v) pairs of a dense 0/1 adjacency, diagonal ignored."""
    adjacency = np.asarray(adjacency)
    us, vs = np.nonzero(np.triu(adjacency, k=1))
    return list(zip(us.tolist(), vs.tolist()))
