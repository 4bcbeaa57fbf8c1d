"""Contextual clustering of compressed feature maps and the selector network
that picks an expert model for a new target.

Cluster indices are 1-based in the public API.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError, InsufficientDistinct, ShapeMismatch

CTXM_MAGIC = b"CTXM"
CTXM_VERSION = 1


def make_descriptor(z: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean of a compressed map, L2-normalized.
    An all-zero map yields the all-zero vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeMismatch(f"expected (h, w, c) map, got {z.shape}")
    pooled = z.mean(axis=(0, 1))
    norm = np.linalg.norm(pooled)
    return pooled / norm if norm > 0 else pooled


def _min_pairwise_dist(points: np.ndarray) -> float:
    d = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((d * d).sum(axis=2))
    n = len(points)
    return float(dist[np.triu_indices(n, k=1)].min()) if n > 1 else np.inf


def farthest_init(
    descriptors: np.ndarray, k: int, trials: int = 1000, rng=None
) -> np.ndarray:
    """Best-of-`trials` random k-subset by maximum minimum pairwise distance."""
    d = np.asarray(descriptors, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng()
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    n_distinct = np.unique(d, axis=0).shape[0]
    if n_distinct < k:
        raise InsufficientDistinct(f"{n_distinct} distinct descriptors < k={k}")
    n = d.shape[0]
    if k == n:
        return d.copy()
    best_idx, best_score = None, -np.inf
    for _ in range(trials):
        idx = rng.choice(n, size=k, replace=False)
        score = _min_pairwise_dist(d[idx])
        if score > best_score:
            best_idx, best_score = idx, score
    return d[best_idx].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int = 100):
    """Lloyd iterations to an assignment fixpoint; empty clusters are
    re-seeded with the sample currently farthest from its own centroid.
    Returns (centroids, assignments, per-iteration objective)."""
    cents = centroids.copy()
    k = len(cents)
    assign = None
    objective = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for j in range(k):
            if not (new_assign == j).any():
                worst = int(d2[np.arange(len(points)), new_assign].argmax())
                cents[j] = points[worst]
                new_assign[worst] = j
                d2[:, j] = ((points - cents[j]) ** 2).sum(axis=1)
        if assign is not None and (new_assign == assign).all():
            break
        assign = new_assign
        for j in range(k):
            cents[j] = points[assign == j].mean(axis=0)
        d2 = ((points[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        objective.append(float(d2[np.arange(len(points)), assign].sum()))
    return cents, assign, objective


@dataclass
class ClusterModel:
    """Final centroids plus 1-based per-sample assignments."""

    centroids: np.ndarray  # (n_clusters, dim)
    assignments: np.ndarray  # (n_samples,), values in 1..n_clusters
    # squared-distance objective after each update, one list per Lloyd run
    objective_traces: list | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)


def two_step_cluster(
    descriptors: np.ndarray, n_clusters: int, rng=None, trials: int = 1000
) -> ClusterModel:
    """K-means with 2*n_clusters spread-out seeds, then dropping the
    n_clusters smallest clusters and re-clustering around the survivors.
    Every returned cluster is nonempty."""
    d = np.asarray(descriptors, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng()
    seeds = farthest_init(d, 2 * n_clusters, trials=trials, rng=rng)
    cents, assign, trace1 = _lloyd(d, seeds)
    counts = np.bincount(assign, minlength=2 * n_clusters)
    order = np.lexsort((np.arange(2 * n_clusters), counts))
    survivors = np.sort(order[n_clusters:])
    cents2, assign2, trace2 = _lloyd(d, cents[survivors])
    return ClusterModel(
        centroids=cents2,
        assignments=assign2 + 1,
        objective_traces=[trace1, trace2],
    )


@dataclass
class SelectorNetwork:
    """Two dense layers (ReLU then softmax) scoring cluster membership."""

    w1: np.ndarray  # (dim, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, n_classes)
    b2: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]


@dataclass
class SelectorTrainConfig:
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 100
    hidden: int = 1024
    init_std: float = 0.01
    seed: int = 0
    n_classes: int | None = None  # inferred from labels when None


def _selector_forward(net: SelectorNetwork, x: np.ndarray):
    hidden = np.maximum(x @ net.w1 + net.b1, 0.0)
    logits = hidden @ net.w2 + net.b2
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return hidden, probs


def selector_probs(net: SelectorNetwork, x: np.ndarray) -> np.ndarray:
    return _selector_forward(net, np.atleast_2d(np.asarray(x, dtype=np.float64)))[1]


def selector_loss_and_grads(net: SelectorNetwork, x: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus gradients for all four
    parameter arrays. Labels are 1-based."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp) - 1
    m = len(x)
    hidden, probs = _selector_forward(net, x)
    eps = 1e-300
    loss = float(-np.log(probs[np.arange(m), y] + eps).mean())
    dlogits = probs.copy()
    dlogits[np.arange(m), y] -= 1.0
    dlogits /= m
    dw2 = hidden.T @ dlogits
    db2 = dlogits.sum(axis=0)
    dhidden = (dlogits @ net.w2.T) * (hidden > 0)
    dw1 = x.T @ dhidden
    db1 = dhidden.sum(axis=0)
    return loss, (dw1, db1, dw2, db2)


def train_selector(
    descriptors: np.ndarray,
    labels: np.ndarray,
    cfg: SelectorTrainConfig,
    history: list | None = None,
) -> SelectorNetwork:
    """Mini-batch SGD on cross-entropy; weights start zero-mean Gaussian."""
    x = np.asarray(descriptors, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ConfigError("descriptors/labels must be nonempty and aligned")
    n_classes = cfg.n_classes or int(y.max())
    if y.min() < 1 or y.max() > n_classes:
        raise ConfigError("labels must lie in 1..n_classes")
    rng = np.random.default_rng(cfg.seed)
    dim = x.shape[1]
    net = SelectorNetwork(
        w1=rng.normal(0.0, cfg.init_std, (dim, cfg.hidden)),
        b1=np.zeros(cfg.hidden),
        w2=rng.normal(0.0, cfg.init_std, (cfg.hidden, n_classes)),
        b2=np.zeros(n_classes),
    )
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, (dw1, db1, dw2, db2) = selector_loss_and_grads(net, x[idx], y[idx])
            net.w1 -= cfg.learning_rate * dw1
            net.b1 -= cfg.learning_rate * db1
            net.w2 -= cfg.learning_rate * dw2
            net.b2 -= cfg.learning_rate * db2
            epoch_loss += loss * len(idx)
        if history is not None:
            history.append(epoch_loss / n)
    return net


def select(net: SelectorNetwork, descriptor: np.ndarray):
    """Most probable cluster (1-based) and the full probability vector.
    Ties resolve to the lowest index."""
    d = np.asarray(descriptor, dtype=np.float64)
    if d.shape != (net.input_dim,):
        raise ShapeMismatch(f"descriptor shape {d.shape} != ({net.input_dim},)")
    probs = selector_probs(net, d)[0]
    return int(probs.argmax()) + 1, probs


def save_context(cluster: ClusterModel, net: SelectorNetwork, path) -> None:
    """One CTXM checkpoint holding centroids and the selector weights."""
    cents = np.ascontiguousarray(cluster.centroids, dtype="<f4")
    n_e, dim = cents.shape
    with open(path, "wb") as fh:
        fh.write(CTXM_MAGIC)
        fh.write(struct.pack("<III", CTXM_VERSION, n_e, dim))
        fh.write(cents.tobytes())
        for w, b in ((net.w1, net.b1), (net.w2, net.b2)):
            fh.write(struct.pack("<II", *w.shape))
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_context(path):
    """Returns (centroids, SelectorNetwork)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CTXM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        version, n_e, dim = struct.unpack_from("<III", data, 4)
        if version != CTXM_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        pos = 16
        cents = np.frombuffer(data, dtype="<f4", count=n_e * dim, offset=pos)
        cents = cents.reshape(n_e, dim).astype(np.float64)
        pos += 4 * n_e * dim
        dense = []
        for _ in range(2):
            rows, cols = struct.unpack_from("<II", data, pos)
            pos += 8
            w = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=pos)
            pos += 4 * rows * cols
            b = np.frombuffer(data, dtype="<f4", count=cols, offset=pos)
            pos += 4 * cols
            dense.append((w.reshape(rows, cols).astype(np.float64), b.astype(np.float64)))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint") from exc
    net = SelectorNetwork(w1=dense[0][0], b1=dense[0][1], w2=dense[1][0], b2=dense[1][1])
    if net.n_classes != n_e or net.input_dim != dim:
        raise FormatError(f"{path}: selector dimensions disagree with header")
    return cents, net
