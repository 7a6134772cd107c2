# -*- coding: utf-8 -*-
"""
gsnn_data.py — Graph SNN • citation dataset ingest
--------------------------------------------------
Reads the plain-text citation datasets (Cora, Citeseer, converted Pubmed):

    <name>.content : "<paper-id> <C binary features> <class-label>" per line
    <name>.cites   : "<paper-id> <paper-id>" per line (direction is discarded)

and turns them into a Dataset (graph + binary features + labels + split),
then encodes the features as spike trains over a time window.

The binary Planetoid pickles are not read. Pubmed's public release carries
TF-IDF weights in its own layout; to use it here, binarize every nonzero weight
to 1 and write one content row per paper and one cites row per link.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from gsnn_graph import SparseGraph, build_graph

logger = logging.getLogger("gsnn.data")

PathLike = Union[str, Path]

PLANETOID_TRAIN_PER_CLASS = 20
PLANETOID_NUM_VAL = 500
PLANETOID_NUM_TEST = 1000


class DatasetError(ValueError):
    """Malformed dataset files, impossible split request, or manifest mismatch."""


# =========================
#  1. Types
# =========================

@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def get(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise DatasetError(f"unknown split '{name}'")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {"train": len(self.train), "val": len(self.val), "test": len(self.test)}


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    graph: SparseGraph
    features: np.ndarray          # (node × C) uint8, strictly {0, 1}
    labels: np.ndarray            # (node,) int64 in [0, class_count)
    class_names: Tuple[str, ...]
    node_ids: Tuple[str, ...]
    split: Optional[DatasetSplit] = None
    citation_rows: int = 0

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def summary(self) -> Dict[str, object]:
        density = float(self.features.mean()) if self.features.size else 0.0
        out: Dict[str, object] = {
            "name": self.name,
            "nodes": self.num_nodes,
            "edges": self.graph.num_edges,
            "citation_rows": self.citation_rows,
            "features": self.feature_dim,
            "classes": self.class_count,
            "feature_density": round(density, 6),
        }
        if self.split is not None:
            out["split"] = self.split.sizes()
        return out


@dataclass(frozen=True, eq=False)
class SpikeTensor:
    data: np.ndarray              # (T × node × channel), strictly {0, 1}

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise DatasetError(f"spike tensor must be 3-D (T, node, channel), got {self.data.shape}")
        if self.data.shape[0] < 1:
            raise DatasetError("spike tensor needs a time window of at least 1 step")

    @property
    def time_window(self) -> int:
        return int(self.data.shape[0])

    @property
    def num_nodes(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    def step(self, t: int) -> np.ndarray:
        return self.data[t]

    def density(self) -> float:
        return float(self.data.mean()) if self.data.size else 0.0


# =========================
#  2. Manifest (dataset catalog)
# =========================

class DatasetEntry(BaseModel):
    name: str
    content: str
    cites: str
    expected_nodes: Optional[int] = None
    expected_features: Optional[int] = None
    expected_classes: Optional[int] = None
    expected_citation_rows: Optional[int] = None
    notes: str = ""


class DatasetManifest(BaseModel):
    version: int = 1
    datasets: List[DatasetEntry] = Field(default_factory=list)

    def entry(self, name: str) -> DatasetEntry:
        for item in self.datasets:
            if item.name.lower() == name.lower():
                return item
        known = ", ".join(d.name for d in self.datasets) or "none"
        raise DatasetError(f"dataset '{name}' not in manifest (known: {known})")


def load_manifest(path: PathLike) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset manifest not found at {path}")
    with path.open("r", encoding="utf-8") as f:
        return DatasetManifest.model_validate(json.load(f))


def validate_against_entry(d: Dataset, entry: DatasetEntry) -> None:
    checks = [
        ("nodes", entry.expected_nodes, d.num_nodes),
        ("features", entry.expected_features, d.feature_dim),
        ("classes", entry.expected_classes, d.class_count),
        ("citation rows", entry.expected_citation_rows, d.citation_rows),
    ]
    for label, expected, actual in checks:
        if expected is not None and expected != actual:
            raise DatasetError(
                f"{entry.name}: expected {expected} {label}, ingest produced {actual}"
            )


def load_from_manifest(manifest_path: PathLike, name: str, data_dir: Optional[PathLike] = None) -> Dataset:
    """Load a catalogued dataset and verify its counts. Paths resolve against data_dir or the manifest's folder."""
    manifest_path = Path(manifest_path)
    entry = load_manifest(manifest_path).entry(name)
    base = Path(data_dir) if data_dir is not None else manifest_path.resolve().parent
    d = load_citation_dataset(base / entry.content, base / entry.cites, name=entry.name)
    validate_against_entry(d, entry)
    return d


# =========================
#  3. Plain-text ingest
# =========================

def load_citation_dataset(content_path: PathLike, cites_path: PathLike, name: Optional[str] = None) -> Dataset:
    content_path = Path(content_path)
    cites_path = Path(cites_path)
    for p in (content_path, cites_path):
        if not p.exists():
            raise DatasetError(f"dataset file not found: {p}")

    node_ids: List[str] = []
    raw_labels: List[str] = []
    rows: List[np.ndarray] = []
    feature_dim: Optional[int] = None
    index: Dict[str, int] = {}

    with content_path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DatasetError(f"{content_path}:{lineno}: expected '<id> <features...> <label>'")
            pid, feats, label = parts[0], parts[1:-1], parts[-1]
            if feature_dim is None:
                feature_dim = len(feats)
            elif len(feats) != feature_dim:
                raise DatasetError(
                    f"{content_path}:{lineno}: {len(feats)} features, expected {feature_dim}"
                )
            bad = [v for v in feats if v not in ("0", "1")]
            if bad:
                raise DatasetError(
                    f"{content_path}:{lineno}: non-binary feature value '{bad[0]}' for node {pid}"
                )
            if pid in index:
                raise DatasetError(f"{content_path}:{lineno}: duplicate node id {pid}")
            index[pid] = len(node_ids)
            node_ids.append(pid)
            raw_labels.append(label)
            rows.append(np.fromiter((v == "1" for v in feats), dtype=np.uint8, count=len(feats)))

    num_nodes = len(node_ids)
    features = np.vstack(rows) if rows else np.zeros((0, feature_dim or 0), dtype=np.uint8)

    class_names = tuple(sorted(set(raw_labels)))
    class_index = {c: i for i, c in enumerate(class_names)}
    labels = np.asarray([class_index[c] for c in raw_labels], dtype=np.int64)

    edge_list: List[Tuple[int, int]] = []
    citation_rows = 0
    dangling = 0
    with cites_path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise DatasetError(f"{cites_path}:{lineno}: expected two paper ids")
            citation_rows += 1
            a, b = parts
            if a not in index or b not in index:
                dangling += 1
                logger.warning("%s:%d: citation references unknown id (%s, %s); edge skipped.",
                               cites_path.name, lineno, a, b)
                continue
            edge_list.append((index[a], index[b]))

    graph = build_graph(num_nodes, edge_list)
    features.setflags(write=False)
    labels.setflags(write=False)

    d = Dataset(
        name=name or content_path.stem,
        graph=graph,
        features=features,
        labels=labels,
        class_names=class_names,
        node_ids=tuple(node_ids),
        citation_rows=citation_rows,
    )
    logger.info("Loaded dataset %s", d.summary())
    if dangling:
        logger.warning("%s: %d dangling citation rows skipped.", d.name, dangling)
    return d


# =========================
#  4. Splits
# =========================

def standard_split(
    d: Dataset,
    seed: int = 0,
    train_per_class: int = PLANETOID_TRAIN_PER_CLASS,
    num_val: int = PLANETOID_NUM_VAL,
    num_test: int = PLANETOID_NUM_TEST,
) -> Dataset:
    """
    Planetoid-style split: `train_per_class` nodes per class for training, the
    next `num_val` nodes for validation and the next `num_test` for testing,
    all taken from one seeded node ordering.
    """
    counts = np.bincount(d.labels, minlength=d.class_count)
    short = [d.class_names[c] for c in range(d.class_count) if counts[c] < train_per_class]
    if short:
        raise DatasetError(
            f"classes {short} have fewer than {train_per_class} labeled nodes"
        )

    order = np.random.default_rng(seed).permutation(d.num_nodes)
    taken = np.zeros(d.num_nodes, dtype=bool)
    per_class = np.zeros(d.class_count, dtype=np.int64)
    train: List[int] = []
    for v in order:
        c = d.labels[v]
        if per_class[c] < train_per_class:
            per_class[c] += 1
            taken[v] = True
            train.append(int(v))

    rest = [int(v) for v in order if not taken[v]]
    val = rest[:num_val]
    test = rest[num_val : num_val + num_test]
    split = DatasetSplit(
        train=np.sort(np.asarray(train, dtype=np.int64)),
        val=np.sort(np.asarray(val, dtype=np.int64)),
        test=np.sort(np.asarray(test, dtype=np.int64)),
    )
    return replace(d, split=split)


def random_split(
    d: Dataset,
    seed: int,
    train_per_class: int = PLANETOID_TRAIN_PER_CLASS,
    val_fraction: float = 0.2,
    test_fraction: float = 0.4,
) -> Dataset:
    """Seeded random fallback: class-balanced train, then val/test as fractions of the remaining nodes."""
    if not (0.0 <= val_fraction and 0.0 <= test_fraction and val_fraction + test_fraction <= 1.0):
        raise DatasetError("val_fraction + test_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    train: List[int] = []
    for c in range(d.class_count):
        members = np.flatnonzero(d.labels == c)
        if members.shape[0] < train_per_class:
            raise DatasetError(
                f"class {d.class_names[c]} has fewer than {train_per_class} labeled nodes"
            )
        train.extend(rng.choice(members, size=train_per_class, replace=False).tolist())

    rest = np.setdiff1d(np.arange(d.num_nodes), np.asarray(train, dtype=np.int64))
    rest = rng.permutation(rest)
    n_val = int(round(val_fraction * rest.shape[0]))
    n_test = int(round(test_fraction * rest.shape[0]))
    split = DatasetSplit(
        train=np.sort(np.asarray(train, dtype=np.int64)),
        val=np.sort(rest[:n_val]),
        test=np.sort(rest[n_val : n_val + n_test]),
    )
    return replace(d, split=split)


# =========================
#  5. Spike encoding
# =========================

def encode_repeat(d: Dataset, T: int) -> SpikeTensor:
    """Every time step sees the binary feature matrix itself (read-only broadcast view)."""
    if T < 1:
        raise DatasetError(f"time window must be >= 1, got {T}")
    feats = d.features
    return SpikeTensor(np.broadcast_to(feats[None, :, :], (T,) + feats.shape))


def encode_bernoulli(d: Dataset, T: int, rng_seed: int) -> SpikeTensor:
    """data[t, v, k] ~ Bernoulli(features[v, k]), independent across t; deterministic given the seed."""
    if T < 1:
        raise DatasetError(f"time window must be >= 1, got {T}")
    probs = np.asarray(d.features, dtype=np.float64)
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise DatasetError("Bernoulli encoding needs feature values in [0, 1]")
    rng = np.random.default_rng(rng_seed)
    draws = rng.random((T,) + probs.shape)
    return SpikeTensor((draws < probs[None, :, :]).astype(np.uint8))


def encode(d: Dataset, T: int, method: str = "repeat", rng_seed: int = 0) -> SpikeTensor:
    if method == "repeat":
        return encode_repeat(d, T)
    if method == "bernoulli":
        return encode_bernoulli(d, T, rng_seed)
    raise DatasetError(f"unknown encoding '{method}' (expected 'repeat' or 'bernoulli')")


def from_arrays(
    features: np.ndarray,
    labels: Sequence[int],
    edges: Sequence[Tuple[int, int]],
    name: str = "inline",
) -> Dataset:
    """Build a Dataset from in-memory arrays (toy graphs, tests)."""
    features = np.asarray(features)
    labels_arr = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels_arr.shape[0]:
        raise DatasetError("features must be (node × C) with one label per node")
    class_count = int(labels_arr.max()) + 1 if labels_arr.size else 0
    return Dataset(
        name=name,
        graph=build_graph(features.shape[0], edges),
        features=features,
        labels=labels_arr,
        class_names=tuple(str(c) for c in range(class_count)),
        node_ids=tuple(str(i) for i in range(features.shape[0])),
        citation_rows=len(edges),
    )
