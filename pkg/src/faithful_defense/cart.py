"""Binary CART classifier (Gini impurity) used as the attacker's surrogate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class Node:
    counts: tuple
    label: int
    depth: int
    feature: int = -1
    threshold: float = 0.0
    categorical: bool = False
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        if self.categorical:
            return values == self.threshold
        return values <= self.threshold


def gini(n0: float, n1: float) -> float:
    n = n0 + n1
    if n == 0:
        return 0.0
    return 1.0 - (n0 / n) ** 2 - (n1 / n) ** 2


def split_impurity(x: np.ndarray, y: np.ndarray, threshold: float, categorical: bool) -> float:
    """Weighted Gini impurity of one split (reference implementation)."""
    left = x == threshold if categorical else x <= threshold
    nl, nr = left.sum(), (~left).sum()
    n = nl + nr
    gl = gini(nl - y[left].sum(), y[left].sum())
    gr = gini(nr - y[~left].sum(), y[~left].sum())
    return (nl * gl + nr * gr) / n


def candidate_splits(x: np.ndarray, categorical: bool) -> np.ndarray:
    u = np.unique(x)
    if categorical:
        return u if len(u) > 1 else np.empty(0)
    return (u[:-1] + u[1:]) / 2.0


def _best_split_feature(x, y, categorical, min_leaf):
    """Return (score, threshold) maximising sum_side (n0^2 + n1^2) / n_side."""
    n = len(y)
    if categorical:
        cats, inv = np.unique(x, return_inverse=True)
        if len(cats) < 2:
            return None
        nl = np.bincount(inv, minlength=len(cats)).astype(float)
        l1 = np.bincount(inv, weights=y, minlength=len(cats))
        thresholds = cats
    else:
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], y[order]
        change = np.flatnonzero(xs[1:] != xs[:-1])
        if len(change) == 0:
            return None
        cum1 = np.cumsum(ys)
        nl = (change + 1).astype(float)
        l1 = cum1[change].astype(float)
        thresholds = (xs[change] + xs[change + 1]) / 2.0
    l0 = nl - l1
    nr = n - nl
    r1 = y.sum() - l1
    r0 = nr - r1
    ok = (nl >= min_leaf) & (nr >= min_leaf)
    if not ok.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (l0 ** 2 + l1 ** 2) / nl + (r0 ** 2 + r1 ** 2) / nr
    score = np.where(ok, score, -np.inf)
    i = int(np.argmax(score))
    return float(score[i]), float(thresholds[i])


class SurrogateTree:
    """Depth-limited binary classification tree."""

    def __init__(self, root: Node, max_depth: int, categorical: np.ndarray):
        self.root = root
        self.max_depth = max_depth
        self.categorical = categorical

    def _leaves(self, X: np.ndarray) -> list:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = [None] * len(X)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                for i in idx:
                    out[i] = node
                continue
            left = node.goes_left(X[idx, node.feature])
            stack.append((node.left, idx[left]))
            stack.append((node.right, idx[~left]))
        return out

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X), dtype=np.int8)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.label
                continue
            left = node.goes_left(X[idx, node.feature])
            stack.append((node.left, idx[left]))
            stack.append((node.right, idx[~left]))
        return out

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    def apply(self, X) -> list:
        """Leaf node reached by each row."""
        return self._leaves(X)

    def nodes(self) -> list:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack += [node.right, node.left]
        return out

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    @property
    def n_leaves(self) -> int:
        return sum(n.is_leaf for n in self.nodes())


def train_cart(X, y, max_depth: int = 5, min_leaf: int = 1,
               categorical: Sequence[bool] | None = None) -> SurrogateTree:
    """Grow a tree by greedy Gini splits.

    Continuous features split at midpoints of sorted unique values,
    categorical ones on equality with a single category.  Ties between
    splits go to the lower feature index, then the smaller threshold.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(y) == 0:
        raise ValueError("train_cart needs at least one record")
    p = X.shape[1]
    cat = np.zeros(p, bool) if categorical is None else np.asarray(categorical, bool)

    def grow(idx: np.ndarray, depth: int) -> Node:
        yi = y[idx]
        n1 = float(yi.sum())
        n0 = len(yi) - n1
        node = Node((int(n0), int(n1)), int(n1 > n0), depth)
        if depth >= max_depth or n0 == 0 or n1 == 0 or len(idx) < 2 * min_leaf:
            return node
        parent = (n0 ** 2 + n1 ** 2) / len(yi)
        best = None
        for j in range(p):
            res = _best_split_feature(X[idx, j], yi, cat[j], min_leaf)
            if res is not None and (best is None or res[0] > best[0]):
                best = (res[0], j, res[1])
        if best is None or best[0] <= parent + 1e-12:
            return node
        _, j, t = best
        node.feature, node.threshold, node.categorical = j, t, bool(cat[j])
        left = node.goes_left(X[idx, j])
        node.left = grow(idx[left], depth + 1)
        node.right = grow(idx[~left], depth + 1)
        return node

    return SurrogateTree(grow(np.arange(len(y)), 0), max_depth, cat)


class ConstantModel:
    def __init__(self, label: int = 0):
        self.label = label

    def predict(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.label, dtype=np.int8)

    __call__ = predict
