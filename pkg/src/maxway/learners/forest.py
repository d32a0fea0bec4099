"""Random forests with total-impurity-decrease feature importances.

Trees are grown on bootstrap resamples with per-node feature
subsampling, the classic recipe.  Splitting is exhaustive over sorted
candidate thresholds using cumulative-sum scans, so a node costs
O(mtry * n log n).  Importance is the impurity decrease (variance for
regression, Gini for classification) summed over every split of every
tree and attributed to the split feature, normalized to sum to one when
any split occurred.

Determinism: tree t consumes the derived stream ``rng.derive(t)`` and
node processing order is fixed, so a forest is a pure function of
(data, config, rng) no matter how training is scheduled.

If the sampled feature subset offers no legal split at an impure node,
the search widens to the remaining features before giving up; this
keeps small-mtry trees able to interpolate when min_leaf is 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, sqrt
from typing import Optional

import numpy as np

from ..data import RngHandle
from .base import DimensionMismatch, LearnerError

__all__ = ["ForestConfig", "ForestFit", "fit_forest"]


@dataclass(frozen=True)
class ForestConfig:
    """Training configuration; ``mtry=None`` means the task default
    (ceil(sqrt(p)) for classification, ceil(p/3) for regression)."""

    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 5
    mtry: Optional[int] = None
    bootstrap: bool = True


@dataclass(frozen=True)
class _Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            live = feat >= 0
            if not np.any(live):
                return self.value[node]
            rows = np.flatnonzero(live)
            f = feat[rows]
            go_left = X[rows, f] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])


@dataclass(frozen=True)
class ForestFit:
    trees: tuple[_Tree, ...]
    importance: np.ndarray
    task: str  # "regression" | "classification"
    config: ForestConfig
    seed_path: tuple
    n_features: int
    y_min: float
    y_max: float
    constant: Optional[float] = None  # set when the target was degenerate

    def __post_init__(self):
        imp = np.array(self.importance, dtype=float, copy=True)
        imp.setflags(write=False)
        object.__setattr__(self, "importance", imp)


def _node_impurity_sums(sy: np.ndarray, task: str):
    """Cumulative statistics for split scanning.

    Returns (total_metric, cum_metric_left, cum_metric_right) where the
    metric is n * impurity: the residual sum of squares for regression,
    n * Gini for classification.  Index i of the cumulative arrays
    corresponds to a split after sorted position i (left size i + 1).
    """
    n = sy.shape[0]
    cnt = np.arange(1, n, dtype=float)  # left sizes for splits 0..n-2
    cum = np.cumsum(sy)[:-1]
    if task == "regression":
        cum2 = np.cumsum(sy**2)[:-1]
        tot_sum = float(np.sum(sy))
        tot2 = float(np.sum(sy**2))
        total = max(tot2 - tot_sum**2 / n, 0.0)
        left = np.maximum(cum2 - cum**2 / cnt, 0.0)
        right = np.maximum((tot2 - cum2) - (tot_sum - cum) ** 2 / (n - cnt), 0.0)
    else:
        ones = cum
        tot_ones = float(np.sum(sy))
        total = 2.0 * tot_ones * (n - tot_ones) / n
        left = 2.0 * ones * (cnt - ones) / cnt
        right = 2.0 * (tot_ones - ones) * ((n - cnt) - (tot_ones - ones)) / (n - cnt)
    return total, left, right


def _best_split_on_feature(v, sy_parent, task, min_leaf):
    """(decrease, threshold, order) for the best legal split, or None."""
    order = np.argsort(v, kind="stable")
    sv = v[order]
    if sv[0] == sv[-1]:
        return None
    sy = sy_parent[order]
    total, left, right = _node_impurity_sums(sy, task)
    n = v.shape[0]
    pos = np.arange(1, n)
    legal = (sv[:-1] < sv[1:]) & (pos >= min_leaf) & ((n - pos) >= min_leaf)
    if not np.any(legal):
        return None
    dec = np.where(legal, total - (left + right), -np.inf)
    best = int(np.argmax(dec))  # first max: deterministic tie-break
    if dec[best] <= 0.0:
        return None
    thr = 0.5 * (sv[best] + sv[best + 1])
    # guard against midpoint rounding onto the right value
    if thr >= sv[best + 1]:
        thr = sv[best]
    return float(dec[best]), float(thr), order, best


def _grow_tree(X, y, task, config, gen, importance):
    n, p = X.shape
    mtry = config.mtry
    if mtry is None:
        mtry = ceil(sqrt(p)) if task == "classification" else ceil(p / 3)
    mtry = min(max(1, mtry), p)
    max_depth = np.inf if config.max_depth is None else config.max_depth

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        value[node] = float(np.mean(ys))
        if (
            depth >= max_depth
            or idx.shape[0] < 2 * config.min_leaf
            or np.all(ys == ys[0])
        ):
            continue
        cols = np.sort(gen.choice(p, size=mtry, replace=False))
        best = None
        for f in cols:
            cand = _best_split_on_feature(X[idx, f], ys, task, config.min_leaf)
            if cand is not None and (best is None or cand[0] > best[1][0]):
                best = (int(f), cand)
        if best is None and mtry < p:
            for f in range(p):
                if f in cols:
                    continue
                cand = _best_split_on_feature(X[idx, f], ys, task, config.min_leaf)
                if cand is not None and (best is None or cand[0] > best[1][0]):
                    best = (int(f), cand)
        if best is None:
            continue
        f, (dec, thr, order, cut) = best
        importance[f] += dec
        lidx = idx[order[: cut + 1]]
        ridx = idx[order[cut + 1 :]]
        lnode, rnode = new_node(), new_node()
        feature[node] = f
        threshold[node] = thr
        left[node] = lnode
        right[node] = rnode
        # right pushed first so the left child is processed next (fixed order)
        stack.append((rnode, ridx, depth + 1))
        stack.append((lnode, lidx, depth + 1))

    return _Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
    )


def fit_forest(
    X: np.ndarray,
    y: np.ndarray,
    task: str = "regression",
    config: ForestConfig = ForestConfig(),
    rng: RngHandle = RngHandle(0),
) -> ForestFit:
    """Train a forest; a constant target yields a constant predictor with
    all-zero importances rather than an error."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LearnerError(f"X {X.shape} and y {y.shape} do not align")
    if task not in ("regression", "classification"):
        raise LearnerError(f"unknown task {task!r}")
    if task == "classification" and not np.all((y == 0) | (y == 1)):
        raise LearnerError("classification task requires a 0/1 target")
    n, p = X.shape
    if n < 2 * config.min_leaf:
        raise LearnerError(f"need at least 2*min_leaf={2 * config.min_leaf} rows, got {n}")

    importance = np.zeros(p)
    constant = float(y[0]) if np.all(y == y[0]) else None
    trees = []
    for t in range(config.n_trees):
        gen = rng.derive(t).generator()
        if config.bootstrap:
            idx = gen.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        trees.append(_grow_tree(X[idx], y[idx], task, config, gen, importance))
    total = importance.sum()
    if total > 0:
        importance = importance / total
    return ForestFit(
        trees=tuple(trees),
        importance=importance,
        task=task,
        config=config,
        seed_path=(rng.master_seed, rng.stream_path),
        n_features=p,
        y_min=float(np.min(y)),
        y_max=float(np.max(y)),
        constant=constant,
    )


def forest_predict(fit: ForestFit, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.n_features:
        raise DimensionMismatch(
            f"fit has {fit.n_features} features, X has shape {X.shape}"
        )
    if fit.constant is not None:
        return np.full(X.shape[0], fit.constant)
    acc = np.zeros(X.shape[0])
    for tree in fit.trees:
        acc += tree.predict(X)
    return acc / len(fit.trees)
