"""Pair features and the five classifiers: logistic regression, linear SVM,
decision tree, random forest, and second-order gradient boosting.

All trainers are deterministic given (data, hyperparameters, seed) and all
predictions are probabilities in [0, 1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .trees import Tree, grow_boosted, grow_cart, grow_forest

FEATURE_MODES = ("concat", "absdiff", "absdiff_prod", "concat_absdiff_prod")
CLASSIFIERS = ("lr", "svm", "tree", "forest", "boost")


def build_features(x1: np.ndarray, x2: np.ndarray, mode: str) -> np.ndarray:
    """Combine a patient vector and a (lifted) target-note vector."""
    if mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if mode == "concat":
        return np.concatenate([x1, x2])
    if x1.shape != x2.shape:
        raise ValueError(f"feature mode {mode!r} needs equal dims, got {x1.shape[0]} and {x2.shape[0]}")
    if mode == "absdiff":
        return np.abs(x1 - x2)
    if mode == "absdiff_prod":
        return np.concatenate([np.abs(x1 - x2), x1 * x2])
    return np.concatenate([x1, x2, np.abs(x1 - x2), x1 * x2])


@dataclass
class Dataset:
    X: np.ndarray  # (n, d)
    y: np.ndarray  # (n,), values {0, 1}
    ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not np.isfinite(self.X).all():
            raise ValueError("feature matrix contains non-finite values")
        if not np.isin(self.y, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def _require_both_classes(y: np.ndarray) -> None:
    if y.min() == y.max():
        raise ValueError("training data contains a single class")


def lr_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float):
    """L2-regularized mean cross-entropy and its gradient (bias unregularized)."""
    p = _sigmoid(X @ w + b)
    eps = 1e-12
    loss = float(-np.mean(y * np.log(p + eps) + (1 - y) * np.log(1 - p + eps)) + 0.5 * lam * w @ w)
    grad_w = X.T @ (p - y) / len(y) + lam * w
    grad_b = float(np.mean(p - y))
    return loss, grad_w, grad_b


def train_lr(data: Dataset, lr: float = 0.1, epochs: int = 200, lam: float = 1e-4) -> dict:
    """Full-batch gradient descent from zero weights."""
    _require_both_classes(data.y)
    w = np.zeros(data.X.shape[1])
    b = 0.0
    for _ in range(epochs):
        _, grad_w, grad_b = lr_loss_grad(w, b, data.X, data.y, lam)
        w = w - lr * grad_w
        b = b - lr * grad_b
    return {"kind": "lr", "w": w.tolist(), "b": b, "lr": lr, "epochs": epochs, "lam": lam}


def svm_loss_grad(w: np.ndarray, b: float, X: np.ndarray, y_pm: np.ndarray, lam: float):
    """Mean hinge loss + L2 and a subgradient (zero on the hinge point)."""
    margins = y_pm * (X @ w + b)
    violating = margins < 1.0
    loss = float(np.mean(np.maximum(0.0, 1.0 - margins)) + 0.5 * lam * w @ w)
    grad_w = -(X[violating].T @ y_pm[violating]) / len(y_pm) + lam * w
    grad_b = float(-np.sum(y_pm[violating]) / len(y_pm))
    return loss, grad_w, grad_b


def train_svm(data: Dataset, lr: float = 0.1, epochs: int = 200, lam: float = 1e-4) -> dict:
    """Linear SVM via deterministic subgradient descent on the hinge loss."""
    _require_both_classes(data.y)
    y_pm = 2.0 * data.y - 1.0
    w = np.zeros(data.X.shape[1])
    b = 0.0
    for _ in range(epochs):
        _, grad_w, grad_b = svm_loss_grad(w, b, data.X, y_pm, lam)
        w = w - lr * grad_w
        b = b - lr * grad_b
    return {"kind": "svm", "w": w.tolist(), "b": b, "lr": lr, "epochs": epochs, "lam": lam}


def train_tree(data: Dataset, max_depth: int = 8, min_split: int = 2) -> dict:
    tree = grow_cart(data.X, data.y, max_depth=max_depth, min_split=min_split)
    return {"kind": "tree", "tree": tree.to_dict(), "max_depth": max_depth, "min_split": min_split}


def train_forest(
    data: Dataset,
    n_trees: int = 100,
    max_depth: int = 8,
    min_split: int = 2,
    seed: int = 0,
    bootstrap: bool = True,
    feature_sampling: bool = True,
) -> dict:
    trees = grow_forest(
        data.X,
        data.y,
        n_trees=n_trees,
        max_depth=max_depth,
        min_split=min_split,
        seed=seed,
        bootstrap=bootstrap,
        feature_sampling=feature_sampling,
    )
    return {
        "kind": "forest",
        "trees": [t.to_dict() for t in trees],
        "seed": seed,
        "max_depth": max_depth,
    }


def train_boost(
    data: Dataset,
    rounds: int = 200,
    learning_rate: float = 0.1,
    max_depth: int = 3,
    lam: float = 1.0,
) -> dict:
    _require_both_classes(data.y)
    base, trees = grow_boosted(
        data.X, data.y, rounds=rounds, learning_rate=learning_rate, max_depth=max_depth, lam=lam
    )
    return {
        "kind": "boost",
        "base_score": base,
        "learning_rate": learning_rate,
        "trees": [t.to_dict() for t in trees],
        "max_depth": max_depth,
        "lam": lam,
    }


def predict(params: dict, X: np.ndarray) -> np.ndarray:
    """Probability-like scores in [0, 1] for every model kind."""
    X = np.asarray(X, dtype=np.float64)
    kind = params["kind"]
    if kind in ("lr", "svm"):
        w = np.asarray(params["w"])
        scores = X @ w + params["b"]
        # for the SVM this is a Platt-style squashing of the margin
        return _sigmoid(scores)
    if kind == "tree":
        return np.clip(Tree.from_dict(params["tree"]).predict(X), 0.0, 1.0)
    if kind == "forest":
        preds = [Tree.from_dict(d).predict(X) for d in params["trees"]]
        return np.clip(np.mean(preds, axis=0), 0.0, 1.0)
    if kind == "boost":
        scores = np.full(X.shape[0], params["base_score"])
        for d in params["trees"]:
            scores = scores + params["learning_rate"] * Tree.from_dict(d).predict(X)
        return _sigmoid(scores)
    raise ValueError(f"unknown model kind {kind!r}")


TRAINERS = {
    "lr": train_lr,
    "svm": train_svm,
    "tree": train_tree,
    "forest": train_forest,
    "boost": train_boost,
}


def train(name: str, data: Dataset, **hyperparams) -> dict:
    if name not in TRAINERS:
        raise ValueError(f"unknown classifier {name!r}; choose one of {CLASSIFIERS}")
    return TRAINERS[name](data, **hyperparams)


def save_model(params: dict, path: str | Path) -> None:
    # json uses shortest round-trip float repr, so reload is exact
    Path(path).write_text(json.dumps(params, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
