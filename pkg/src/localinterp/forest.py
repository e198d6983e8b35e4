"""Seeded random-forest classifier over relation vectors.

Built in-repo (no learning-library dependency) so the model file stays
self-contained and portable: every split is an explicit (feature, threshold)
pair and every leaf a positive fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, SingleClassTraining


@dataclass(frozen=True)
class ForestConfig:
    seed: int
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 3
    features_per_split: int | None = None  # None -> ceil(sqrt(d))

    def __post_init__(self):
        if self.n_trees <= 0 or self.max_depth <= 0 or self.min_leaf <= 0:
            raise InvalidArgument("forest config values must be positive")
        if self.features_per_split is not None and self.features_per_split <= 0:
            raise InvalidArgument("features_per_split must be positive")


@dataclass
class Tree:
    """Flat binary tree; feature -1 marks a leaf, value its positive fraction."""

    feature: np.ndarray  # int, -1 for leaves
    threshold: np.ndarray  # float
    left: np.ndarray  # int child index
    right: np.ndarray
    value: np.ndarray  # leaf positive fraction (internal nodes carry it too)
    n_samples: np.ndarray  # training samples reaching each node

    def predict_one(self, v: np.ndarray) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if v[self.feature[i]] <= self.threshold[i] else self.right[i]
        return float(self.value[i])

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        active = self.feature[idx] >= 0
        while active.any():
            cur = idx[active]
            f = self.feature[cur]
            go_left = X[active, f] <= self.threshold[cur]
            idx[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[idx] >= 0
        return self.value[idx]


@dataclass
class TrainedForest:
    trees: list[Tree]
    config: ForestConfig
    vector_length: int

    def to_dict(self) -> dict:
        return {
            "config": {
                "seed": self.config.seed,
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_leaf": self.config.min_leaf,
                "features_per_split": self.config.features_per_split,
            },
            "vector_length": self.vector_length,
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": [float(x) for x in t.threshold],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": [float(x) for x in t.value],
                    "n_samples": t.n_samples.tolist(),
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedForest":
        cfg = ForestConfig(**d["config"])
        trees = [
            Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                value=np.asarray(t["value"], dtype=np.float64),
                n_samples=np.asarray(t["n_samples"], dtype=np.int64),
            )
            for t in d["trees"]
        ]
        return cls(trees=trees, config=cfg, vector_length=int(d["vector_length"]))


def _gini(pos: float, n: float) -> float:
    if n <= 0:
        return 0.0
    p = pos / n
    return 2.0 * p * (1.0 - p)


class _TreeBuilder:
    def __init__(self, X, y, config: ForestConfig, rng: np.random.Generator):
        self.X, self.y = X, y
        self.config = config
        self.rng = rng
        self.k = config.features_per_split or int(np.ceil(np.sqrt(X.shape[1])))
        self.nodes: list[list] = []  # [feature, threshold, left, right, value, n]

    def build(self) -> Tree:
        n = len(self.y)
        idx = self.rng.integers(0, n, size=n)  # bootstrap resample
        self._grow(idx, 0)
        return Tree(
            feature=np.asarray([r[0] for r in self.nodes], dtype=np.int64),
            threshold=np.asarray([r[1] for r in self.nodes], dtype=np.float64),
            left=np.asarray([r[2] for r in self.nodes], dtype=np.int64),
            right=np.asarray([r[3] for r in self.nodes], dtype=np.int64),
            value=np.asarray([r[4] for r in self.nodes], dtype=np.float64),
            n_samples=np.asarray([r[5] for r in self.nodes], dtype=np.int64),
        )

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        node_id = len(self.nodes)
        y = self.y[idx]
        pos = float(y.sum())
        n = len(y)
        frac = pos / n
        self.nodes.append([-1, 0.0, -1, -1, frac, n])
        if depth >= self.config.max_depth or n < 2 * self.config.min_leaf or frac in (0.0, 1.0):
            return node_id
        split = self._best_split(idx)
        if split is None:
            return node_id
        f, thr, left_mask = split
        left_id = self._grow(idx[left_mask], depth + 1)
        right_id = self._grow(idx[~left_mask], depth + 1)
        self.nodes[node_id][0] = f
        self.nodes[node_id][1] = thr
        self.nodes[node_id][2] = left_id
        self.nodes[node_id][3] = right_id
        return node_id

    def _best_split(self, idx: np.ndarray):
        X, y = self.X[idx], self.y[idx]
        n = len(y)
        d = X.shape[1]
        feats = self.rng.choice(d, size=min(self.k, d), replace=False)
        parent = _gini(float(y.sum()), n)
        best = None  # (decrease, feature, threshold, left_mask)
        min_leaf = self.config.min_leaf
        for f in feats:
            col = X[:, f]
            order = np.argsort(col, kind="stable")
            cs, ys = col[order], y[order]
            pos_prefix = np.cumsum(ys)
            distinct = np.nonzero(np.diff(cs) > 0)[0]  # split after position i
            if len(distinct) == 0:
                continue
            nl = distinct + 1
            nr = n - nl
            ok = (nl >= min_leaf) & (nr >= min_leaf)
            if not ok.any():
                continue
            nl, nr, cut = nl[ok], nr[ok], distinct[ok]
            pl = pos_prefix[cut]
            pr = pos_prefix[-1] - pl
            gl = 2.0 * (pl / nl) * (1.0 - pl / nl)
            gr = 2.0 * (pr / nr) * (1.0 - pr / nr)
            dec = parent - (nl * gl + nr * gr) / n
            j = int(np.argmax(dec))
            if dec[j] > 1e-12 and (best is None or dec[j] > best[0]):
                # midpoint threshold: deterministic, no RNG in threshold choice
                thr = 0.5 * (cs[cut[j]] + cs[cut[j] + 1])
                best = (float(dec[j]), int(f), float(thr), col <= thr)
        if best is None:
            return None
        return best[1], best[2], best[3]


def train_forest(vectors, labels, config: ForestConfig) -> TrainedForest:
    """Train a seeded bagged forest of Gini trees; deterministic per seed."""
    try:
        X = np.asarray(vectors, dtype=np.float64)
    except ValueError as e:
        raise InvalidArgument("training vectors must share one length") from e
    if X.ndim != 2:
        raise InvalidArgument("training vectors must share one length")
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != len(X):
        raise InvalidArgument("labels must align with vectors")
    if y.sum() == 0 or y.sum() == len(y):
        raise SingleClassTraining("need at least one positive and one negative example")
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        trees.append(_TreeBuilder(X, y, config, rng).build())
    return TrainedForest(trees=trees, config=config, vector_length=X.shape[1])


def predict(forest: TrainedForest, v: np.ndarray) -> float:
    """Mean over trees of the reached leaf's positive fraction."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (forest.vector_length,):
        raise InvalidArgument(
            f"vector length {v.shape} does not match forest ({forest.vector_length})"
        )
    return float(np.mean([t.predict_one(v) for t in forest.trees]))


def predict_batch(forest: TrainedForest, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.vector_length:
        raise InvalidArgument("batch shape does not match forest vector length")
    acc = np.zeros(len(X))
    for t in forest.trees:
        acc += t.predict_batch(X)
    return acc / len(forest.trees)


def feature_importance(forest: TrainedForest) -> np.ndarray:
    """Normalized Gini importance; all-zero when no tree ever split."""
    imp = np.zeros(forest.vector_length)
    for t in forest.trees:
        root_n = t.n_samples[0]
        for i in range(len(t.feature)):
            f = t.feature[i]
            if f < 0:
                continue
            li, ri = t.left[i], t.right[i]
            n, nl, nr = t.n_samples[i], t.n_samples[li], t.n_samples[ri]
            g = _gini(t.value[i] * n, n)
            gl = _gini(t.value[li] * nl, nl)
            gr = _gini(t.value[ri] * nr, nr)
            dec = g - (nl * gl + nr * gr) / n
            imp[f] += dec * (n / root_n)
    total = imp.sum()
    if total > 0:
        imp /= total
    return imp
