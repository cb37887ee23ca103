"""Non-neural baselines over classical encodings: softmax regression, CART and random forest."""

from __future__ import annotations

import json
import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from catcast import __version__
from catcast.core import Schema
from catcast.encoders import EncodingScheme, code_table, encode_indices
from catcast.errors import ConfigError, DataError, FormatError
from catcast.neural.layers import softmax
from catcast.neural.model import CLAMP
from catcast.neural.train import SHUFFLE_STREAM, derive_rng

BASELINE_KINDS = ("logreg", "tree", "forest")
ARTIFACT_FORMAT = "catcast-baseline"
ARTIFACT_VERSION = 1


def _check_labels(X, labels, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError(f"matrix {X.shape} and labels {y.shape} disagree")
    if X.shape[0] == 0:
        raise DataError("no training rows")
    if not np.isfinite(X).all():
        raise DataError("encoded matrix holds non-finite values")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise DataError(f"labels must lie in 0..{n_classes - 1}")
    return X, y, n_classes


# Softmax regression ----------------------------------------------------------

@dataclass
class LogisticModel:
    W: np.ndarray
    b: np.ndarray
    history: list[float] = field(default_factory=list)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(np.asarray(X, dtype=np.float64) @ self.W + self.b)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist(), "history": self.history}

    @classmethod
    def from_dict(cls, d) -> "LogisticModel":
        W = np.asarray(d["W"], dtype=np.float64)
        return cls(W.reshape(-1, len(d["b"])), np.asarray(d["b"], dtype=np.float64), list(d.get("history", [])))


def logreg_fit(X, labels, lr: float = 0.1, epochs: int = 100, seed: int = 0,
               batch_size: int = 128, n_classes: int | None = None) -> LogisticModel:
    """Multinomial logistic regression by mini-batch gradient descent.

    Weights start at zero. Rows are visited in a seeded permutation per
    epoch; ``history`` holds the row-weighted mean batch loss of each epoch.
    """
    X, y, k = _check_labels(X, labels, n_classes)
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    if lr <= 0 or batch_size < 1:
        raise ConfigError("learning rate must be > 0 and batch size >= 1")
    n, d = X.shape
    W = np.zeros((d, k))
    b = np.zeros(k)
    rng = derive_rng(seed, SHUFFLE_STREAM)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = X[idx], y[idx]
            p = softmax(xb @ W + b)
            rows = np.arange(idx.size)
            total += float(-np.mean(np.log(np.clip(p[rows, yb], CLAMP, 1.0)))) * idx.size
            d_logits = p.copy()
            d_logits[rows, yb] -= 1.0
            d_logits /= idx.size
            W -= lr * (xb.T @ d_logits)
            b -= lr * d_logits.sum(axis=0)
        history.append(total / n)
    return LogisticModel(W, b, history)


# CART ------------------------------------------------------------------------

@dataclass
class TreeNode:
    """Split node (``feature``/``threshold`` set) or leaf (``counts`` set).

    Rows with ``x[feature] <= threshold`` go left.
    """

    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    counts: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.counts is not None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        return self.left.n_leaves() + self.right.n_leaves()


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _weighted_gini(left, right):
    """Row-weighted Gini of candidate splits; left/right are (..., K) count arrays."""
    nl = left.sum(axis=-1)
    nr = right.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = nl - np.where(nl > 0, (left * left).sum(axis=-1) / nl, 0.0)
        gr = nr - np.where(nr > 0, (right * right).sum(axis=-1) / nr, 0.0)
    return (gl + gr) / (nl + nr)


def _best_split_binary(Xn, Yn, features):
    """All features 0/1, threshold 0.5: class counts of the right side via one matmul."""
    right = Xn[:, features].T @ Yn
    total = Yn.sum(axis=0)
    left = total[None, :] - right
    nl, nr = left.sum(axis=1), right.sum(axis=1)
    score = _weighted_gini(left, right)
    score = np.where((nl > 0) & (nr > 0), score, np.inf)
    j = int(np.argmin(score))
    if not np.isfinite(score[j]):
        return None
    return score[j], features[j], 0.5


def _best_split_sorted(Xn, yn, k, features):
    best = None
    for f in features:
        col = Xn[:, f]
        order = np.argsort(col, kind="stable")
        v = col[order]
        change = np.flatnonzero(v[1:] != v[:-1])
        if change.size == 0:
            continue
        onehot = np.zeros((v.size, k))
        onehot[np.arange(v.size), yn[order]] = 1.0
        cum = np.cumsum(onehot, axis=0)
        left = cum[change]
        right = cum[-1][None, :] - left
        score = _weighted_gini(left, right)
        j = int(np.argmin(score))
        if best is None or score[j] < best[0]:
            best = (score[j], int(f), float((v[change[j]] + v[change[j] + 1]) / 2.0))
    return best


def tree_fit(X, labels, max_depth: int | None = None, min_samples: int = 2, n_classes: int | None = None,
             max_features: int | None = None, rng: np.random.Generator | None = None) -> TreeNode:
    """CART with Gini impurity.

    Every (feature, threshold) pair is scanned; thresholds are midpoints
    between consecutive distinct values (0.5 for 0/1 columns). Ties go to the
    lowest feature, then the lowest threshold. A node becomes a leaf when it
    is pure, at ``max_depth``, holds fewer than ``min_samples`` rows, or has
    no valid split. With ``max_features`` a random feature subset (drawn from
    ``rng``) is scanned at each split.
    """
    X, y, k = _check_labels(X, labels, n_classes)
    n, d = X.shape
    binary = bool(np.all((X == 0.0) | (X == 1.0)))
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1.0
    if max_features is not None:
        if rng is None:
            raise ConfigError("max_features needs an rng")
        max_features = max(1, min(int(max_features), d))

    root = TreeNode()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(y[idx], minlength=k)
        if (np.count_nonzero(counts) <= 1 or (max_depth is not None and depth >= max_depth)
                or idx.size < min_samples):
            node.counts = counts
            continue
        if max_features is None:
            features = np.arange(d)
        else:
            features = np.sort(rng.choice(d, size=max_features, replace=False))
        Xn = X[idx]
        if binary:
            best = _best_split_binary(Xn, Y[idx], features)
        else:
            best = _best_split_sorted(Xn, y[idx], k, features)
        if best is None:
            node.counts = counts
            continue
        _, f, thr = best
        go_left = Xn[:, f] <= thr
        node.feature, node.threshold = int(f), float(thr)
        node.left, node.right = TreeNode(), TreeNode()
        # push right first so the left subtree is built first
        stack.append((node.right, idx[~go_left], depth + 1))
        stack.append((node.left, idx[go_left], depth + 1))
    return root


def _flatten(root: TreeNode):
    feature, threshold, left, right, counts = [], [], [], [], []
    nodes = deque([root])
    while nodes:
        node = nodes.popleft()
        i = len(feature)
        feature.append(-1 if node.is_leaf else node.feature)
        threshold.append(0.0 if node.is_leaf else node.threshold)
        left.append(-1)
        right.append(-1)
        counts.append(node.counts)
        if not node.is_leaf:
            left[i] = i + len(nodes) + 1
            right[i] = i + len(nodes) + 2
            nodes.extend([node.left, node.right])
    return feature, threshold, left, right, counts


class FlatTree:
    """Array form of a fitted tree for vectorised prediction."""

    def __init__(self, root: TreeNode, n_classes: int):
        feature, threshold, left, right, counts = _flatten(root)
        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.counts = np.zeros((len(feature), n_classes))
        for i, c in enumerate(counts):
            if c is not None:
                self.counts[i] = c
        self.root = root

    def leaf_index(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        rows = np.arange(X.shape[0])
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        c = self.counts[self.leaf_index(X)]
        return c / c.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.counts[self.leaf_index(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "FlatTree":
        return cls(_unflatten(d), len(d["counts"][0]))


def _unflatten(d) -> TreeNode:
    def build(i):
        if d["feature"][i] < 0:
            return TreeNode(counts=np.asarray(d["counts"][i]))
        return TreeNode(d["feature"][i], d["threshold"][i], build(d["left"][i]), build(d["right"][i]))
    return build(0)


def tree_predict(root: TreeNode, X, n_classes: int) -> np.ndarray:
    return FlatTree(root, n_classes).predict(X)


# Random forest ---------------------------------------------------------------

@dataclass
class ForestModel:
    trees: list[FlatTree]
    n_classes: int
    feature_subsample: int | None
    seed: int

    def __post_init__(self):
        if not self.trees:
            raise ConfigError("a forest needs at least one tree")

    def votes(self, X) -> np.ndarray:
        v = np.zeros((np.asarray(X).shape[0], self.n_classes))
        rows = np.arange(v.shape[0])
        for t in self.trees:
            v[rows, t.predict(X)] += 1.0
        return v

    def predict_proba(self, X) -> np.ndarray:
        return self.votes(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.votes(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "feature_subsample": self.feature_subsample,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> "ForestModel":
        return cls([FlatTree.from_dict(t) for t in d["trees"]], d["n_classes"], d["feature_subsample"], d["seed"])


def forest_fit(X, labels, n_trees: int = 100, max_depth: int | None = None, seed: int = 0,
               bootstrap: bool = True, max_features: int | str | None = "sqrt", min_samples: int = 2,
               n_classes: int | None = None, threads: int = 1) -> ForestModel:
    """Bagged CART trees; each split scans a random subset of sqrt(width) features.

    Tree ``i`` draws its bootstrap sample and feature subsets from the
    stream ``[seed, i]``, so the forest does not depend on ``threads``.
    """
    if n_trees < 1:
        raise ConfigError(f"n_trees must be >= 1, got {n_trees}")
    X, y, k = _check_labels(X, labels, n_classes)
    n, d = X.shape
    if max_features == "sqrt":
        max_features = max(1, int(math.isqrt(d)))
    elif max_features is not None:
        max_features = int(max_features)

    def grow(i):
        rng = np.random.default_rng([seed, i])
        rows = rng.integers(n, size=n) if bootstrap else np.arange(n)
        root = tree_fit(X[rows], y[rows], max_depth, min_samples, k,
                        max_features if max_features is not None and max_features < d else None, rng)
        return FlatTree(root, k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(n_trees)))
    else:
        trees = [grow(i) for i in range(n_trees)]
    return ForestModel(trees, k, max_features, seed)


# Stage wrapper and artifacts -------------------------------------------------

class EncodedClassifier:
    """Stage model adapter: index rows -> classical encoding -> baseline."""

    def __init__(self, kind: str, scheme: EncodingScheme, estimator, schema: Schema, inputs, target=None,
                 stage=None, provenance=None):
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {kind!r}; choose from {BASELINE_KINDS}")
        self.kind = kind
        self.scheme = scheme
        self.estimator = estimator
        self.schema = schema
        self.inputs = list(inputs)
        self.target = target
        self.stage = stage
        self.provenance = dict(provenance or {})
        self._tables = [code_table(schema.vocab(n), scheme) for n in self.inputs]

    def encode(self, index_rows) -> np.ndarray:
        return encode_indices(index_rows, [self.schema.vocab(n) for n in self.inputs], self.scheme, self._tables)

    def predict_proba(self, index_rows) -> np.ndarray:
        return self.estimator.predict_proba(self.encode(index_rows))

    def save(self, path) -> None:
        doc = {
            "format": ARTIFACT_FORMAT,
            "format_version": ARTIFACT_VERSION,
            "tool_version": __version__,
            "kind": self.kind,
            "scheme": {"kind": self.scheme.kind, "buckets": self.scheme.buckets},
            "schema": self.schema.to_dict(),
            "inputs": self.inputs,
            "target": self.target,
            "stage": self.stage,
            "provenance": self.provenance,
            "model": self.estimator.to_dict(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EncodedClassifier":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, ValueError) as exc:
            raise FormatError(f"cannot read baseline artifact {path}: {exc}") from exc
        if doc.get("format") != ARTIFACT_FORMAT:
            raise FormatError(f"{path} is not a catcast baseline artifact")
        if doc.get("format_version") != ARTIFACT_VERSION:
            raise FormatError(f"{path}: unsupported format version {doc.get('format_version')!r}")
        kind = doc["kind"]
        loader = {"logreg": LogisticModel, "tree": FlatTree, "forest": ForestModel}[kind]
        est = loader.from_dict(doc["model"])
        scheme = EncodingScheme(doc["scheme"]["kind"], doc["scheme"]["buckets"])
        return cls(kind, scheme, est, Schema.from_dict(doc["schema"]), doc["inputs"], doc.get("target"),
                   doc.get("stage"), doc.get("provenance"))
