"""Unpruned CART trees and Random Forests with out-of-bag diagnostics.

Regression trees split on variance reduction and store leaf means;
classification trees split on Gini decrease and store class counts. Each tree
in a forest owns a seed derived from the forest seed, so training the trees
on several threads yields exactly the forest a serial run would.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _tree_kernels as kernels
from .errors import ConfigError, DataError
from .seeding import derive_seed

REGRESSION = "regression"
CLASSIFICATION = "classification"
FOREST_FORMAT = "rfimpute.forest/1"


@dataclass(frozen=True, eq=False)
class DecisionTree:
    task: str
    n_features: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # leaf means (regression) or class counts (classification)
    node_size: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def apply(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        return kernels.apply(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        """Leaf mean, or index of the majority class (smallest index on ties)."""
        leaves = self.apply(X)
        if self.task == REGRESSION:
            return self.value[leaves]
        return np.argmax(self.value[leaves], axis=1)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in
             ("feature", "threshold", "left", "right", "value", "node_size")}
        d.update(task=self.task, n_features=self.n_features)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            task=d["task"], n_features=d["n_features"],
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.float64),
            node_size=np.asarray(d["node_size"], dtype=np.int64),
        )


def _as_matrix(X, n_features=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if n_features is not None and X.shape[1] != n_features:
        raise DataError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise DataError("forest inputs must be complete and finite")
    return X


def grow_tree(X, y, m: int, min_node: int, seed: int, task: str = REGRESSION,
              sample=None, n_classes: int | None = None) -> DecisionTree:
    """Grow one tree. Classification targets must be integer class indices.

    ``sample`` lists the training rows (a bootstrap may repeat rows); the
    default uses every row once.
    """
    X = _as_matrix(X)
    n, M = X.shape
    if n == 0:
        raise DataError("cannot grow a tree on an empty sample")
    if not 1 <= m <= M:
        raise ConfigError(f"m must lie in [1, {M}], got {m}")
    if min_node < 1:
        raise ConfigError("min_node must be at least 1")
    sample = np.arange(n, dtype=np.int64) if sample is None else np.asarray(sample, dtype=np.int64)
    if len(sample) == 0:
        raise DataError("cannot grow a tree on an empty sample")
    if task == REGRESSION:
        y_reg = np.ascontiguousarray(y, dtype=np.float64)
        y_cls = np.zeros(1, dtype=np.int64)
        k = 0
    elif task == CLASSIFICATION:
        y_cls = np.ascontiguousarray(y, dtype=np.int64)
        y_reg = np.zeros(1)
        k = int(n_classes if n_classes is not None else y_cls.max() + 1)
        if y_cls.min() < 0 or y_cls.max() >= k:
            raise DataError("class indices must lie in [0, n_classes)")
    else:
        raise ConfigError(f"unknown task {task!r}")
    feat, thr, lt, rt, val, cnt, size = kernels.grow(
        X, y_reg, y_cls, k, sample, int(m), int(min_node), int(seed))
    value = val if task == REGRESSION else cnt
    return DecisionTree(task, M, feat, thr, lt, rt, value, size)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 70
    min_node: int = 7
    m: int = 3
    bootstrap: bool = True  # False is a test hook: every tree sees every row once

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be at least 1")
        if self.min_node < 1:
            raise ConfigError("min_node must be at least 1")
        if self.m < 1:
            raise ConfigError("m must be at least 1")

    def check(self, n_features: int) -> None:
        if self.m > n_features:
            raise ConfigError(f"m={self.m} exceeds the {n_features} available features")
        if self.bootstrap and n_features > 1 and self.m >= n_features:
            raise ConfigError(f"m={self.m} must be smaller than M={n_features}")

    def for_features(self, n_features: int) -> "ForestParams":
        """Same parameters with m reduced, if needed, to fit n_features inputs."""
        m = min(self.m, max(1, n_features - 1))
        return ForestParams(self.n_trees, self.min_node, m, self.bootstrap)


def bootstrap_sample(tree_seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(tree_seed, "bootstrap")).integers(0, n, n)


@dataclass(frozen=True, eq=False)
class RandomForest:
    params: ForestParams
    task: str
    trees: tuple
    tree_seeds: tuple
    n_train: int
    n_features: int
    seed: int
    classes: np.ndarray | None = None

    @property
    def n_classes(self) -> int:
        return 0 if self.classes is None else len(self.classes)

    def in_bag(self) -> np.ndarray:
        """Boolean (K, n_train) matrix: row drawn into tree k's bootstrap."""
        out = np.zeros((len(self.trees), self.n_train), dtype=bool)
        for k, s in enumerate(self.tree_seeds):
            if self.params.bootstrap:
                out[k, bootstrap_sample(s, self.n_train)] = True
            else:
                out[k] = True
        return out

    def oob_membership(self) -> list[np.ndarray]:
        return [np.flatnonzero(~row) for row in self.in_bag()]

    def tree_outputs(self, X) -> np.ndarray:
        """(K, n) per-tree predictions: values (regression) or class indices."""
        X = _as_matrix(X, self.n_features)
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        """Mean of tree outputs, or majority vote (smallest label on ties)."""
        out = self.tree_outputs(X)
        if self.task == REGRESSION:
            return out.mean(axis=0)
        return self.classes[_vote(out, self.n_classes)]

    def predict_proba(self, X) -> np.ndarray:
        """Fraction of trees voting for each class, columns ordered as ``classes``."""
        if self.task != CLASSIFICATION:
            raise ConfigError("predict_proba needs a classification forest")
        out = self.tree_outputs(X)
        return _vote_counts(out, self.n_classes) / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "format": FOREST_FORMAT,
            "params": asdict(self.params),
            "task": self.task,
            "n_train": self.n_train,
            "n_features": self.n_features,
            "seed": self.seed,
            "tree_seeds": list(self.tree_seeds),
            "classes": None if self.classes is None else self.classes.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("format") != FOREST_FORMAT:
            raise DataError(f"unsupported forest format {d.get('format')!r}")
        classes = d.get("classes")
        return cls(
            params=ForestParams(**d["params"]), task=d["task"],
            trees=tuple(DecisionTree.from_dict(t) for t in d["trees"]),
            tree_seeds=tuple(d["tree_seeds"]), n_train=d["n_train"],
            n_features=d["n_features"], seed=d["seed"],
            classes=None if classes is None else np.asarray(classes, dtype=np.int64),
        )


def _vote_counts(out: np.ndarray, n_classes: int, weights=None) -> np.ndarray:
    n = out.shape[1]
    counts = np.zeros((n, n_classes))
    w = np.ones(out.shape) if weights is None else weights
    for c in range(n_classes):
        counts[:, c] = ((out == c) * w).sum(axis=0)
    return counts


def _vote(out: np.ndarray, n_classes: int, weights=None) -> np.ndarray:
    # argmax returns the first maximum, i.e. the smallest class on ties
    return np.argmax(_vote_counts(out, n_classes, weights), axis=1)


def fit_forest(X, y, params: ForestParams = ForestParams(), seed: int = 0,
               task: str = REGRESSION, threads: int = 1) -> RandomForest:
    X = _as_matrix(X)
    n, M = X.shape
    if n == 0:
        raise DataError("cannot fit a forest on empty data")
    params.check(M)
    y = np.asarray(y)
    if len(y) != n:
        raise DataError(f"{n} rows but {len(y)} targets")
    classes = None
    if task == CLASSIFICATION:
        classes, y_fit = np.unique(y.astype(np.int64), return_inverse=True)
        n_classes = len(classes)
    elif task == REGRESSION:
        y_fit = y.astype(np.float64)
        n_classes = None
    else:
        raise ConfigError(f"unknown task {task!r}")

    tree_seeds = tuple(derive_seed(seed, "tree", k) for k in range(params.n_trees))

    def grow_one(k):
        s = tree_seeds[k]
        sample = bootstrap_sample(s, n) if params.bootstrap else None
        return grow_tree(X, y_fit, params.m, params.min_node, derive_seed(s, "features"),
                         task=task, sample=sample, n_classes=n_classes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = tuple(pool.map(grow_one, range(params.n_trees)))
    else:
        trees = tuple(grow_one(k) for k in range(params.n_trees))
    return RandomForest(params, task, trees, tree_seeds, n, M, int(seed), classes)


@dataclass(frozen=True)
class OobEstimate:
    error: float        # misclassification rate or mean squared error
    n_scored: int
    n_skipped: int      # rows that were in-bag for every tree


def _targets_for(forest: RandomForest, y) -> np.ndarray:
    y = np.asarray(y)
    if forest.task == REGRESSION:
        return y.astype(np.float64)
    idx = np.searchsorted(forest.classes, y.astype(np.int64))
    idx = np.clip(idx, 0, forest.n_classes - 1)
    # labels unseen in training can never be predicted correctly
    return np.where(forest.classes[idx] == y, idx, -1)


def _error(task, pred, target) -> float:
    if task == REGRESSION:
        return float(np.mean((pred - target) ** 2))
    return float(np.mean(pred != target))


def oob_error(forest: RandomForest, X, y) -> OobEstimate:
    """Error of each row predicted only by the trees that never saw it."""
    X = _as_matrix(X, forest.n_features)
    if X.shape[0] != forest.n_train:
        raise DataError("oob_error needs the forest's own training data")
    target = _targets_for(forest, y)
    oob = ~forest.in_bag()
    out = forest.tree_outputs(X)
    has_oob = oob.any(axis=0)
    if not has_oob.any():
        raise DataError("no row is out-of-bag for any tree")
    if forest.task == REGRESSION:
        w = oob.astype(np.float64)
        pred = (out * w).sum(axis=0)[has_oob] / w.sum(axis=0)[has_oob]
    else:
        pred = _vote(out, forest.n_classes, oob)[has_oob]
    err = _error(forest.task, pred, target[has_oob])
    return OobEstimate(err, int(has_oob.sum()), int((~has_oob).sum()))


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    importance: np.ndarray          # raw mean oob-error increase per feature
    rank: np.ndarray                # 1 = most important
    feature_names: tuple[str, ...] = ()

    @property
    def clipped(self) -> np.ndarray:
        return np.maximum(self.importance, 0.0)

    def order(self) -> np.ndarray:
        """Feature indices from most to least important."""
        return np.argsort(self.rank, kind="stable")

    def top(self, k: int = 1) -> list:
        idx = self.order()[:k]
        return [self.feature_names[i] for i in idx] if self.feature_names else idx.tolist()

    def to_dict(self) -> dict:
        names = self.feature_names or tuple(str(i) for i in range(len(self.importance)))
        return {name: {"importance": float(v), "rank": int(r)}
                for name, v, r in zip(names, self.importance, self.rank)}


def variable_importance(forest: RandomForest, X, y, seed: int = 0,
                        feature_names=()) -> ImportanceReport:
    """Permutation importance on out-of-bag rows, averaged over trees."""
    X = _as_matrix(X, forest.n_features)
    target = _targets_for(forest, y)
    rng = np.random.default_rng(seed)
    oob_sets = forest.oob_membership()
    sums = np.zeros(forest.n_features)
    n_used = 0
    for tree, rows in zip(forest.trees, oob_sets):
        if len(rows) == 0:
            continue
        n_used += 1
        Xo = X[rows]
        base = _error(forest.task, tree.predict(Xo), target[rows])
        for j in range(forest.n_features):
            Xp = Xo.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            sums[j] += _error(forest.task, tree.predict(Xp), target[rows]) - base
    imp = sums / max(n_used, 1)
    order = np.argsort(-imp, kind="stable")
    rank = np.empty(len(imp), dtype=np.int64)
    rank[order] = np.arange(1, len(imp) + 1)
    return ImportanceReport(imp, rank, tuple(feature_names))


def proximity(forest: RandomForest, X, normalize: bool = False) -> np.ndarray:
    """Count of trees in which each pair of rows shares a terminal node."""
    X = _as_matrix(X, forest.n_features)
    n = X.shape[0]
    prox = np.zeros((n, n), dtype=np.int64)
    for tree in forest.trees:
        leaves = tree.apply(X)
        prox += leaves[:, None] == leaves[None, :]
    if normalize:
        return prox / len(forest.trees)
    return prox
