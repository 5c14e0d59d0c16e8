"""Tree learners: CART decision trees, random forests, and second-order
gradient boosting with logistic loss.

Split thresholds are midpoints between consecutive distinct sorted feature
values. Ties in gain break toward the lowest feature index, then the lowest
threshold. Per-tree PRNGs make forests schedule-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embed import derive_seed


@dataclass
class Tree:
    """Flat node arrays; feature = -1 marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(int(feature))
        self.threshold.append(float(threshold))
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        self._eval(0, np.arange(X.shape[0]), X, out)
        return out

    def _eval(self, node: int, rows: np.ndarray, X: np.ndarray, out: np.ndarray) -> None:
        if rows.size == 0:
            return
        if self.feature[node] < 0:
            out[rows] = self.value[node]
            return
        go_left = X[rows, self.feature[node]] <= self.threshold[node]
        self._eval(self.left[node], rows[go_left], X, out)
        self._eval(self.right[node], rows[~go_left], X, out)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left,
            "right": self.right,
            "value": self.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=[int(v) for v in d["feature"]],
            threshold=[float(v) for v in d["threshold"]],
            left=[int(v) for v in d["left"]],
            right=[int(v) for v in d["right"]],
            value=[float(v) for v in d["value"]],
        )


def _sorted_columns(X: np.ndarray, cols: np.ndarray):
    order = np.argsort(X[:, cols], axis=0, kind="stable")
    Xs = np.take_along_axis(X[:, cols], order, axis=0)
    valid = Xs[:-1] < Xs[1:]  # split positions between distinct values
    thresholds = (Xs[:-1] + Xs[1:]) / 2.0
    return order, valid, thresholds


def _pick_best(
    gain: np.ndarray,
    valid: np.ndarray,
    thresholds: np.ndarray,
    cols: np.ndarray,
    require_positive: bool = True,
):
    """Best (feature, threshold) with first-occurrence tie-breaking.

    Gini gain is nonnegative for every valid split, so CART accepts
    zero-gain splits (XOR-style nodes); boosting demands positive gain.
    """
    gain = np.where(valid, gain, -np.inf)
    if gain.size == 0 or not np.isfinite(gain).any():
        return None
    per_col_pos = np.argmax(gain, axis=0)  # first max = lowest threshold
    per_col_gain = gain[per_col_pos, np.arange(gain.shape[1])]
    best_col = int(np.argmax(per_col_gain))  # first max = lowest feature index
    best_gain = float(per_col_gain[best_col])
    if not np.isfinite(best_gain) or (require_positive and best_gain <= 0.0):
        return None
    pos = int(per_col_pos[best_col])
    return int(cols[best_col]), float(thresholds[pos, best_col]), best_gain


def best_gini_split(X: np.ndarray, y: np.ndarray, cols: np.ndarray):
    """Gini gain over all candidate (feature, midpoint) splits; None if no gain."""
    n = X.shape[0]
    if n < 2:
        return None
    order, valid, thresholds = _sorted_columns(X, cols)
    ys = y[order]
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    pos_left = np.cumsum(ys, axis=0)[:-1]
    pos_right = y.sum() - pos_left
    gini_left = 1.0 - (pos_left / n_left) ** 2 - ((n_left - pos_left) / n_left) ** 2
    gini_right = 1.0 - (pos_right / n_right) ** 2 - ((n_right - pos_right) / n_right) ** 2
    p = y.mean()
    parent = 1.0 - p * p - (1.0 - p) ** 2
    gain = parent - (n_left / n) * gini_left - (n_right / n) * gini_right
    return _pick_best(gain, valid, thresholds, cols, require_positive=False)


def best_second_order_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, cols: np.ndarray, lam: float, presorted=None
):
    """Split maximizing the second-order objective gain; None if no positive gain.

    `presorted` lets callers reuse _sorted_columns output when X is the full
    training matrix (the root node of every boosting round).
    """
    n = X.shape[0]
    if n < 2:
        return None
    order, valid, thresholds = presorted if presorted is not None else _sorted_columns(X, cols)
    g_left = np.cumsum(g[order], axis=0)[:-1]
    h_left = np.cumsum(h[order], axis=0)[:-1]
    g_total, h_total = g.sum(), h.sum()
    g_right = g_total - g_left
    h_right = h_total - h_left
    gain = 0.5 * (
        g_left**2 / (h_left + lam)
        + g_right**2 / (h_right + lam)
        - g_total**2 / (h_total + lam)
    )
    return _pick_best(gain, valid, thresholds, cols)


def grow_cart(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int = 8,
    min_split: int = 2,
    rng: np.random.Generator | None = None,
    n_candidate_features: int | None = None,
) -> Tree:
    """CART with Gini impurity; leaf value = positive-class fraction.

    When `n_candidate_features` is set, each split considers a random subset
    of features drawn from `rng` (random-forest mode).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = X.shape[1]
    tree = Tree()

    def build(rows: np.ndarray, depth: int) -> int:
        yr = y[rows]
        if (
            depth >= max_depth
            or rows.size < min_split
            or yr.min() == yr.max()
        ):
            return tree.add_leaf(yr.mean())
        if n_candidate_features is not None and n_candidate_features < d:
            cols = np.sort(rng.choice(d, size=n_candidate_features, replace=False))
        else:
            cols = np.arange(d)
        split = best_gini_split(X[rows], yr, cols)
        if split is None:
            return tree.add_leaf(yr.mean())
        feature, threshold, _ = split
        node = tree.add_split(feature, threshold)
        go_left = X[rows, feature] <= threshold
        tree.left[node] = build(rows[go_left], depth + 1)
        tree.right[node] = build(rows[~go_left], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return tree


def grow_forest(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 100,
    max_depth: int = 8,
    min_split: int = 2,
    seed: int = 0,
    bootstrap: bool = True,
    feature_sampling: bool = True,
) -> list[Tree]:
    """Bootstrap forest; ceil(sqrt(d)) candidate features per split.

    Each tree owns a PRNG seeded from (seed, tree index) so results do not
    depend on build scheduling. Disabling bootstrap and feature sampling
    degenerates to repeated CART.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    k = int(np.ceil(np.sqrt(d))) if feature_sampling else None
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(derive_seed(seed, f"tree:{t}"))
        if bootstrap:
            rows = rng.integers(0, n, size=n)
            Xb, yb = X[rows], y[rows]
        else:
            Xb, yb = X, y
        trees.append(
            grow_cart(Xb, yb, max_depth=max_depth, min_split=min_split, rng=rng, n_candidate_features=k)
        )
    return trees


def logistic_grad_hess(scores: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradient and Hessian of the logistic loss wrt the raw score."""
    p = 1.0 / (1.0 + np.exp(-scores))
    return p - y, p * (1.0 - p)


def grow_boosted(
    X: np.ndarray,
    y: np.ndarray,
    rounds: int = 200,
    learning_rate: float = 0.1,
    max_depth: int = 3,
    lam: float = 1.0,
) -> tuple[float, list[Tree]]:
    """Second-order boosting with logistic loss.

    Leaf value is -G/(H + lam); the base score is the log-odds of the class
    prior; prediction = sigmoid(base + lr * sum of tree outputs).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.min() == y.max():
        raise ValueError("boosting requires both classes present")
    prior = y.mean()
    base_score = float(np.log(prior / (1.0 - prior)))
    n = X.shape[0]
    scores = np.full(n, base_score)
    cols = np.arange(X.shape[1])
    root_presort = _sorted_columns(X, cols)  # every round's root splits the full matrix
    trees: list[Tree] = []
    for _ in range(rounds):
        g, h = logistic_grad_hess(scores, y)
        tree = Tree()

        def build(rows: np.ndarray, depth: int) -> int:
            gr, hr = g[rows], h[rows]
            presorted = root_presort if rows.size == n else None
            split = (
                best_second_order_split(X[rows], gr, hr, cols, lam, presorted=presorted)
                if depth < max_depth and rows.size >= 2
                else None
            )
            if split is None:
                return tree.add_leaf(-gr.sum() / (hr.sum() + lam))
            feature, threshold, _ = split
            node = tree.add_split(feature, threshold)
            go_left = X[rows, feature] <= threshold
            tree.left[node] = build(rows[go_left], depth + 1)
            tree.right[node] = build(rows[~go_left], depth + 1)
            return node

        build(np.arange(X.shape[0]), 0)
        trees.append(tree)
        scores = scores + learning_rate * tree.predict(X)
    return base_score, trees
