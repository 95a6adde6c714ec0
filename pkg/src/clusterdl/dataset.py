"""Synthetic clustered classification data and node-level partitioning.

The base task is a Gaussian mixture: class means drawn uniformly on the
sphere of radius 3, unit-variance isotropic noise around each mean. A
cluster sees the same task through its own random orthogonal change of
basis (cluster 0 keeps the identity), so every cluster is equally hard
but a single linear map cannot serve them all. Within each cluster a
shared test split is held out, then the remaining samples are sharded
equally and label-balanced across the cluster's nodes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tinynet import Batch

#: Radius of the sphere the class means live on.
MEAN_RADIUS = 3.0


class FeaturizedFormatError(ValueError):
    """A featurized CSV file did not match the expected layout."""


@dataclass(frozen=True)
class SamplePool:
    """A bag of labelled feature vectors."""

    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if features.ndim != 2 or labels.ndim != 1:
            raise ValueError("features must be (n, dim), labels (n,)")
        if features.shape[0] != labels.shape[0]:
            raise ValueError("features and labels must be aligned")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class NodeDataset:
    """One node's local training shard plus a pointer to its test set."""

    features: np.ndarray
    labels: np.ndarray
    test_ref: str

    def __post_init__(self) -> None:
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        if len(labels) == 0:
            raise ValueError("a node dataset cannot be empty")

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster layout: node counts per cluster and transform seeds."""

    sizes: tuple[int, ...]
    transform_seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(
            self, "transform_seeds", tuple(int(s) for s in self.transform_seeds)
        )
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("cluster sizes must be positive")
        if len(self.transform_seeds) != len(self.sizes):
            raise ValueError("need one transform seed per cluster")

    @property
    def num_clusters(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return sum(self.sizes)

    def node_cluster(self, node: int) -> int:
        """Cluster id of a node; nodes are numbered cluster by cluster."""
        if not 0 <= node < self.num_nodes:
            raise IndexError(f"node {node} out of range")
        acc = 0
        for j, size in enumerate(self.sizes):
            acc += size
            if node < acc:
                return j
        raise AssertionError("unreachable")

    def cluster_nodes(self, cluster: int) -> range:
        start = sum(self.sizes[:cluster])
        return range(start, start + self.sizes[cluster])


def gen_base(classes: int, dim: int, per_class: int, seed) -> SamplePool:
    """Sample the base Gaussian mixture, grouped by class."""
    if classes < 2 or dim < 2 or per_class < 1:
        raise ValueError("need classes >= 2, dim >= 2, per_class >= 1")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, dim))
    means *= MEAN_RADIUS / np.linalg.norm(means, axis=1, keepdims=True)
    features = np.concatenate(
        [means[c] + rng.normal(size=(per_class, dim)) for c in range(classes)]
    )
    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    return SamplePool(features, labels)


def cluster_transform(spec: ClusterSpec, cluster: int, dim: int) -> np.ndarray:
    """The cluster's orthogonal basis change (identity for cluster 0).

    Built as the Q factor of a seeded Gaussian matrix with the usual sign
    fix to make the factorization unique, then one column flip if needed
    so the determinant is +1.
    """
    if cluster == 0:
        return np.eye(dim)
    rng = np.random.default_rng(spec.transform_seeds[cluster])
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def apply_cluster_transform(pool: SamplePool, cluster: int, spec: ClusterSpec) -> SamplePool:
    """Rotate every feature vector into the cluster's basis."""
    rot = cluster_transform(spec, cluster, pool.dim)
    return SamplePool(pool.features @ rot.T, pool.labels.copy())


@dataclass(frozen=True)
class ClusterPartition:
    """Result of splitting one cluster's pool across its nodes."""

    node_shards: tuple[NodeDataset, ...]
    test: SamplePool
    dropped: SamplePool


def partition(
    pool: SamplePool,
    nodes_in_cluster: int,
    seed,
    test_frac: float = 0.1,
    test_per_class: int | None = None,
    test_ref: str = "cluster-0",
) -> ClusterPartition:
    """Hold out a shared test split, then shard the rest label-balanced.

    Each node receives the same number of samples of every class; leftover
    samples that do not divide evenly are dropped. ``test_per_class``
    overrides the fractional split when given.
    """
    if nodes_in_cluster < 1:
        raise ValueError("need at least one node")
    if not 0.0 <= test_frac < 1.0:
        raise ValueError("test_frac must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    class_ids = np.unique(pool.labels)

    test_idx: list[np.ndarray] = []
    shard_idx: list[list[np.ndarray]] = [[] for _ in range(nodes_in_cluster)]
    dropped_idx: list[np.ndarray] = []
    for c in class_ids:
        idx = np.flatnonzero(pool.labels == c)
        idx = rng.permutation(idx)
        n_test = test_per_class if test_per_class is not None else round(len(idx) * test_frac)
        if n_test > len(idx):
            raise ValueError(f"test split larger than class {c} population")
        test_idx.append(idx[:n_test])
        rest = idx[n_test:]
        per_node = len(rest) // nodes_in_cluster
        if per_node < 1:
            raise ValueError(
                f"class {c} has {len(rest)} training samples for "
                f"{nodes_in_cluster} nodes; every node needs at least one"
            )
        for i in range(nodes_in_cluster):
            shard_idx[i].append(rest[i * per_node : (i + 1) * per_node])
        dropped_idx.append(rest[nodes_in_cluster * per_node :])

    def take(chunks: list[np.ndarray]) -> SamplePool:
        if chunks:
            idx = np.concatenate(chunks)
        else:
            idx = np.array([], dtype=np.int64)
        return SamplePool(pool.features[idx], pool.labels[idx])

    shards = []
    for i in range(nodes_in_cluster):
        merged = take(shard_idx[i])
        order = rng.permutation(len(merged))
        shards.append(
            NodeDataset(merged.features[order], merged.labels[order], test_ref)
        )
    return ClusterPartition(tuple(shards), take(test_idx), take(dropped_idx))


def build_clustered_data(
    spec: ClusterSpec,
    classes: int,
    dim: int,
    train_per_node: int,
    test_per_cluster: int,
    seed,
) -> tuple[list[NodeDataset], dict[int, SamplePool]]:
    """Full pipeline: base mixture, per-cluster rotation, per-node shards.

    ``train_per_node`` and ``test_per_cluster`` must be divisible by the
    class count so shards and test sets come out exactly balanced.
    """
    if train_per_node % classes or test_per_cluster % classes:
        raise ValueError(
            "train_per_node and test_per_cluster must be divisible by classes"
        )
    train_pc = train_per_node // classes
    test_pc = test_per_cluster // classes
    datasets: list[NodeDataset] = []
    test_sets: dict[int, SamplePool] = {}
    for j, size in enumerate(spec.sizes):
        per_class = train_pc * size + test_pc
        base = gen_base(classes, dim, per_class, np.random.SeedSequence([int(seed), j]))
        pool = apply_cluster_transform(base, j, spec)
        part = partition(
            pool,
            size,
            np.random.SeedSequence([int(seed), j, 1]),
            test_per_class=test_pc,
            test_ref=f"cluster-{j}",
        )
        datasets.extend(part.node_shards)
        test_sets[j] = part.test
    return datasets, test_sets


def sample_batch(dataset: NodeDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform minibatch without replacement from the node's shard."""
    if batch_size < 1 or batch_size > len(dataset):
        raise ValueError(
            f"batch_size must be in [1, {len(dataset)}], got {batch_size}"
        )
    idx = rng.choice(len(dataset), size=batch_size, replace=False)
    return Batch(dataset.features[idx], dataset.labels[idx])


def save_featurized(path, pool: SamplePool) -> None:
    """Write ``label,f0,...`` CSV; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(pool.dim)])
        for label, row in zip(pool.labels, pool.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_featurized(path) -> SamplePool:
    """Read a CSV written by :func:`save_featurized`.

    Raises FeaturizedFormatError with the offending line number on any
    malformed header, label, or feature value.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FeaturizedFormatError(f"{path}: empty file") from None
        dim = len(header) - 1
        if dim < 1 or header[0] != "label" or header[1:] != [f"f{i}" for i in range(dim)]:
            raise FeaturizedFormatError(f"{path}: line 1: bad header {header!r}")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise FeaturizedFormatError(
                    f"{path}: line {lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise FeaturizedFormatError(
                    f"{path}: line {lineno}: bad label {row[0]!r}"
                ) from None
            try:
                feats.append([float(v) for v in row[1:]])
            except ValueError:
                raise FeaturizedFormatError(
                    f"{path}: line {lineno}: bad feature value"
                ) from None
    if not feats:
        raise FeaturizedFormatError(f"{path}: no data rows")
    return SamplePool(np.array(feats), np.array(labels, dtype=np.int64))
