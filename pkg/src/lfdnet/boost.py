"""Second-order gradient-boosted trees over per-view probability vectors.

One ensemble of regression trees per class is fitted to the softmax
gradients of the running class scores (one-vs-all).  Splits are found by
exact greedy scans over presorted features; leaves carry the learning rate
already folded in, so a prediction is just the sum of tree outputs.

Features for a view are its class-probability vector concatenated with a
one-hot encoding of the view index.  Model-level prediction majority-votes
the per-view labels.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BoostFormatError
from .kernels import split_scan

MAGIC = b"GBDT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BoostConfig:
    rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 4
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    gamma: float = 0.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max depth must be at least 1")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("regularizers must be non-negative")


class Tree:
    """Flat-array binary regression tree; feature -1 marks a leaf.

    ``x[feature] < threshold`` goes left.  Leaves keep their gradient and
    hessian sums for introspection.
    """

    __slots__ = ("feature", "threshold", "left", "right", "value", "sum_grad", "sum_hess")

    def __init__(self, feature, threshold, left, right, value, sum_grad, sum_hess):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)
        self.sum_grad = np.asarray(sum_grad, dtype=np.float64)
        self.sum_hess = np.asarray(sum_hess, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.feature)

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(len(x), dtype=np.int32)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            rows = np.flatnonzero(internal)
            vals = x[rows, feat[rows]]
            goes_left = vals < self.threshold[node[rows]]
            nxt = np.where(goes_left, self.left[node[rows]], self.right[node[rows]])
            node = node.copy()
            node[rows] = nxt

    def leaves(self):
        """(value, sum_grad, sum_hess) triples of the leaf nodes."""
        mask = self.feature < 0
        return self.value[mask], self.sum_grad[mask], self.sum_hess[mask]


def _softmax64(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _grow_tree(x, g, h, presort, cfg: BoostConfig) -> Tree:
    n = len(g)
    feature, threshold, left, right, value = [], [], [], [], []
    sum_grad, sum_hess = [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        sum_grad.append(0.0)
        sum_hess.append(0.0)
        return len(feature) - 1

    queue = [(new_node(), np.ones(n, dtype=bool), 0)]
    qi = 0
    while qi < len(queue):
        node, mask, depth = queue[qi]
        qi += 1
        g_total = math.fsum(g[mask])
        h_total = math.fsum(h[mask])
        sum_grad[node] = g_total
        sum_hess[node] = h_total
        best_gain = 0.0
        best = None
        if depth < cfg.max_depth and int(mask.sum()) >= 2:
            for f in range(x.shape[1]):
                order = presort[f]
                rows = order[mask[order]]
                xs = np.ascontiguousarray(x[rows, f])
                gain, pos = split_scan(
                    xs,
                    np.ascontiguousarray(g[rows]),
                    np.ascontiguousarray(h[rows]),
                    g_total,
                    h_total,
                    cfg.reg_lambda,
                    cfg.gamma,
                    cfg.min_child_weight,
                )
                if pos >= 0 and gain > best_gain:
                    lo, hi = xs[pos], xs[pos + 1]
                    thr = (lo + hi) / 2.0
                    if thr <= lo:  # adjacent floats: keep the partition non-empty
                        thr = hi
                    best_gain = gain
                    best = (f, float(thr))
        if best is None:
            value[node] = -cfg.learning_rate * g_total / (h_total + cfg.reg_lambda)
            continue
        f, thr = best
        go_left = mask & (x[:, f] < thr)
        go_right = mask & (x[:, f] >= thr)
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        queue.append((left[node], go_left, depth + 1))
        queue.append((right[node], go_right, depth + 1))
    return Tree(feature, threshold, left, right, value, sum_grad, sum_hess)


class BoostModel:
    """Per-class tree ensembles with shared feature layout."""

    def __init__(self, n_classes: int, n_features: int, config: BoostConfig, trees=None):
        self.n_classes = n_classes
        self.n_features = n_features
        self.config = config
        self.trees = trees if trees is not None else [[] for _ in range(n_classes)]

    def class_scores(self, x: np.ndarray) -> np.ndarray:
        """Raw boosted scores [N, K]; zero when the model has no trees."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(f"expected features [N, {self.n_features}]")
        scores = np.zeros((len(x), self.n_classes), dtype=np.float64)
        for k in range(self.n_classes):
            for tree in self.trees[k]:
                scores[:, k] += tree.predict(x)
        return scores

    def predict_view(self, x: np.ndarray):
        """Per-view labels and scores; argmax ties pick the lowest class index."""
        scores = self.class_scores(np.atleast_2d(x))
        return scores.argmax(axis=1), scores

    def predict_model(self, view_features: np.ndarray) -> int:
        """Majority vote over the per-view labels of one model's views.

        Ties are broken by the highest mean boosted score among the tied
        classes, then by the lowest class index.
        """
        labels, scores = self.predict_view(view_features)
        counts = np.bincount(labels, minlength=self.n_classes)
        top = counts.max()
        tied = np.flatnonzero(counts == top)
        if len(tied) == 1:
            return int(tied[0])
        mean_scores = scores[:, tied].mean(axis=0)
        return int(tied[int(np.argmax(mean_scores))])


def fit(features: np.ndarray, labels: np.ndarray, n_classes: int, cfg: BoostConfig) -> BoostModel:
    """Fit one boosted ensemble per class on the given feature matrix."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("features must be [N, F] aligned with labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label outside [0, n_classes)")
    if len(np.unique(y)) < 2:
        raise ValueError("training data contains a single class; nothing to separate")

    n, f = x.shape
    presort = np.empty((f, n), dtype=np.int64)
    for j in range(f):
        presort[j] = np.argsort(x[:, j], kind="stable")

    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    scores = np.zeros((n, n_classes), dtype=np.float64)
    model = BoostModel(n_classes, f, cfg)
    for _ in range(cfg.rounds):
        p = _softmax64(scores)
        for k in range(n_classes):
            g = p[:, k] - onehot[:, k]
            h = p[:, k] * (1.0 - p[:, k])
            tree = _grow_tree(x, g, h, presort, cfg)
            model.trees[k].append(tree)
            scores[:, k] += tree.predict(x)
    return model


def build_view_features(probs: np.ndarray, view_ids: np.ndarray, n_views: int = 20) -> np.ndarray:
    """Concatenate probability vectors with one-hot view indices.

    Each probability row must sum to 1 within 1e-5.
    """
    probs = np.asarray(probs, dtype=np.float64)
    view_ids = np.asarray(view_ids, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(view_ids):
        raise ValueError("probs must be [N, K] aligned with view_ids")
    sums = probs.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-5:
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValueError(f"probability row {bad} sums to {sums[bad]!r}, not 1")
    if view_ids.min() < 0 or view_ids.max() >= n_views:
        raise ValueError(f"view index outside [0, {n_views})")
    out = np.zeros((len(probs), probs.shape[1] + n_views), dtype=np.float64)
    out[:, : probs.shape[1]] = probs
    out[np.arange(len(probs)), probs.shape[1] + view_ids] = 1.0
    return out


def _pack_tree(out: bytearray, tree: Tree) -> None:
    out += struct.pack("<I", len(tree))
    out += tree.feature.astype("<i4").tobytes()
    out += tree.threshold.astype("<f8").tobytes()
    out += tree.left.astype("<i4").tobytes()
    out += tree.right.astype("<i4").tobytes()
    out += tree.value.astype("<f8").tobytes()
    out += tree.sum_grad.astype("<f8").tobytes()
    out += tree.sum_hess.astype("<f8").tobytes()


def model_bytes(model: BoostModel) -> bytes:
    cfg = model.config
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack(
        "<IdIddd",
        cfg.rounds,
        cfg.learning_rate,
        cfg.max_depth,
        cfg.min_child_weight,
        cfg.reg_lambda,
        cfg.gamma,
    )
    out += struct.pack("<II", model.n_classes, model.n_features)
    for k in range(model.n_classes):
        out += struct.pack("<I", len(model.trees[k]))
        for tree in model.trees[k]:
            _pack_tree(out, tree)
    return bytes(out)


def save_model(model: BoostModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(model_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise BoostFormatError("truncated boost model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype).copy()


def load_model(path) -> BoostModel:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BoostFormatError("bad boost model: magic mismatch")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise BoostFormatError(f"unsupported boost model version {version}")
    rounds, lr, depth, mcw, lam, gamma = r.unpack("<IdIddd")
    cfg = BoostConfig(
        rounds=rounds,
        learning_rate=lr,
        max_depth=depth,
        min_child_weight=mcw,
        reg_lambda=lam,
        gamma=gamma,
    )
    n_classes, n_features = r.unpack("<II")
    trees = []
    for _ in range(n_classes):
        (count,) = r.unpack("<I")
        cls_trees = []
        for _ in range(count):
            (n_nodes,) = r.unpack("<I")
            cls_trees.append(
                Tree(
                    r.array("<i4", n_nodes),
                    r.array("<f8", n_nodes),
                    r.array("<i4", n_nodes),
                    r.array("<i4", n_nodes),
                    r.array("<f8", n_nodes),
                    r.array("<f8", n_nodes),
                    r.array("<f8", n_nodes),
                )
            )
        trees.append(cls_trees)
    return BoostModel(n_classes, n_features, cfg, trees)
