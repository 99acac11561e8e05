"""Bag-of-words baselines: L2 logistic regression and a CART random forest."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError


def _xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(int).reshape(-1)
    if X.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] == 0:
        raise ContractError("empty training data")
    return X, y


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, X):
        z = self.decision_function(X)
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def state(self):
        return {"weights": self.weights, "bias": np.array([self.bias])}

    @classmethod
    def from_state(cls, state):
        return cls(np.asarray(state["weights"], dtype=np.float64), float(np.asarray(state["bias"])[0]))


def train_logreg(X, y, l2=1e-3, epochs=500, lr=0.5, seed=0) -> LogisticModel:
    """Full-batch gradient descent on mean BCE plus ``l2/2 * |w|^2``, starting from zero.

    Deterministic; ``seed`` is accepted for interface symmetry with the forest.
    """
    X, y = _xy(X, y)
    if y.min() == y.max():
        raise ContractError("logistic regression needs both classes in the training labels")
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 0.5 * (1.0 + np.tanh(0.5 * (X @ w + b)))
        err = p - y
        w = w - lr * (X.T @ err / n + l2 * w)
        b = b - lr * err.mean()
    return LogisticModel(w, float(b))


# ---------------------------------------------------------------------------
# random forest

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # fraction of positives in the node's training rows

    def leaf_values(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] != LEAF
        return self.value[node]

    def vote(self, X):
        v = self.leaf_values(X)
        return np.where(v > 0.5, 1.0, np.where(v < 0.5, 0.0, 0.5))


def gini(pos, total):
    p = pos / total
    return 2.0 * p * (1.0 - p)


def best_split(X, y, features):
    """Best (gain, feature, threshold) by Gini decrease over ``features``.

    Zero-gain splits are accepted so that interaction-only targets can still be
    fit; None means every candidate feature is constant on these rows.
    """
    n = len(y)
    parent = gini(y.sum(), n)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="mergesort")
        xs, ys = X[order, f], y[order]
        cut = np.nonzero(xs[1:] != xs[:-1])[0]
        if cut.size == 0:
            continue
        n_left = cut + 1.0
        pos_left = np.cumsum(ys)[cut]
        n_right = n - n_left
        pos_right = ys.sum() - pos_left
        child = (n_left * gini(pos_left, n_left) + n_right * gini(pos_right, n_right)) / n
        i = int(np.argmin(child))
        gain = parent - child[i]
        if best is None or gain > best[0] + 1e-12:
            best = (gain, int(f), 0.5 * (xs[cut[i]] + xs[cut[i] + 1]))
    return best


def _n_features(max_features, d):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(d)))
    if max_features is None:
        return d
    return max(1, min(d, int(max_features)))


def build_tree(X, y, rng, max_depth=None, max_features="sqrt", min_samples_split=2) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    k = _n_features(max_features, X.shape[1])

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[rows].mean()))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        if len(rows) < min_samples_split or ys.min() == ys.max():
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        feats = rng.choice(X.shape[1], size=k, replace=False) if k < X.shape[1] else np.arange(X.shape[1])
        split = best_split(X[rows], ys, feats)
        if split is None and k < X.shape[1]:
            rest = np.setdiff1d(np.arange(X.shape[1]), feats)
            split = best_split(X[rows], ys, rng.permutation(rest))
        if split is None:
            continue
        _, f, t = split
        mask = X[rows, f] <= t
        feature[node], threshold[node] = f, t
        li, ri = new_node(rows[mask]), new_node(rows[~mask])
        left[node], right[node] = li, ri
        stack.append((ri, rows[~mask], depth + 1))
        stack.append((li, rows[mask], depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class RandomForest:
    trees: list

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.vote(X) for t in self.trees], axis=0)

    def state(self):
        out = {}
        for i, t in enumerate(self.trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                out[f"tree{i}.{name}"] = np.asarray(getattr(t, name), dtype=np.float64)
        return out

    @classmethod
    def from_state(cls, state):
        n = len({k.split(".")[0] for k in state if k.startswith("tree")})
        trees = []
        for i in range(n):
            g = lambda name: np.asarray(state[f"tree{i}.{name}"])
            trees.append(Tree(g("feature").astype(np.int64), g("threshold").astype(np.float64),
                              g("left").astype(np.int64), g("right").astype(np.int64),
                              g("value").astype(np.float64)))
        return cls(trees)


def train_random_forest(X, y, n_trees=100, max_depth=None, seed=0, max_features="sqrt",
                        bootstrap=True) -> RandomForest:
    """Bootstrap-sampled Gini CART trees; each tree gets its own seed derived from ``seed``."""
    X, y = _xy(X, y)
    if n_trees < 1:
        raise ContractError("n_trees must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
        trees.append(build_tree(X[rows], y[rows], rng, max_depth, max_features))
    return RandomForest(trees)
