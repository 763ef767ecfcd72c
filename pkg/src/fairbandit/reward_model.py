"""Gradient-boosted regression trees for the reward estimate r_hat(x, a).

Plain residual boosting with squared loss: each tree fits the current
residuals on a row subsample, splits are kept only when the regularized
gain clears ``min_split_gain``, and leaf values are shrunk by
``l2_leaf_reg``. Actions enter as a one-hot block appended to the
context so trees can split on the arm directly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataset import BanditDataset
from .errors import ConfigError, DataError
from .rngutil import make_rng


@dataclass(frozen=True)
class GbtConfig:
    max_depth: int = 5
    num_trees: int = 100
    subsample: float = 0.8
    min_split_gain: float = 5.0
    l2_leaf_reg: float = 0.1
    learning_rate: float = 0.3
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1")
        if self.num_trees < 1:
            raise ConfigError("num_trees must be at least 1")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigError("subsample must lie in (0, 1]")
        if self.min_split_gain < 0.0:
            raise ConfigError("min_split_gain must be nonnegative")
        if self.l2_leaf_reg < 0.0:
            raise ConfigError("l2_leaf_reg must be nonnegative")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be at least 1")


@dataclass
class Tree:
    """Flat node arrays; children are node indices, leaves carry values."""

    feature: np.ndarray  # (m,) int64, -1 at leaves
    threshold: np.ndarray  # (m,) float64
    left: np.ndarray  # (m,) int64
    right: np.ndarray  # (m,) int64
    value: np.ndarray  # (m,) float64, leaf values (unscaled)

    @property
    def depth(self) -> int:
        def walk(i, d):
            if self.feature[i] < 0:
                return d
            return max(walk(self.left[i], d + 1), walk(self.right[i], d + 1))

        return walk(0, 0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for each row of the encoded input matrix."""
        idx = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[idx] >= 0
        while active.any():
            rows = np.nonzero(active)[0]
            nodes = idx[rows]
            goes_left = X[rows, self.feature[nodes]] < self.threshold[nodes]
            idx[rows] = np.where(goes_left, self.left[nodes], self.right[nodes])
            active = self.feature[idx] >= 0
        return self.value[idx]

    def to_nodes(self) -> list:
        nodes = []
        for i in range(len(self.feature)):
            if self.feature[i] < 0:
                nodes.append({"value": float(self.value[i])})
            else:
                nodes.append(
                    {
                        "feature": int(self.feature[i]),
                        "threshold": float(self.threshold[i]),
                        "left": int(self.left[i]),
                        "right": int(self.right[i]),
                    }
                )
        return nodes

    @classmethod
    def from_nodes(cls, nodes: list) -> "Tree":
        m = len(nodes)
        tree = cls(
            feature=np.full(m, -1, dtype=np.int64),
            threshold=np.zeros(m),
            left=np.zeros(m, dtype=np.int64),
            right=np.zeros(m, dtype=np.int64),
            value=np.zeros(m),
        )
        for i, nd in enumerate(nodes):
            if "value" in nd:
                tree.value[i] = nd["value"]
            else:
                tree.feature[i] = nd["feature"]
                tree.threshold[i] = nd["threshold"]
                tree.left[i] = nd["left"]
                tree.right[i] = nd["right"]
        return tree


def _best_split(X, residuals, rows, l2, min_leaf):
    """Best (gain, feature, threshold) over all features for the node rows.

    Gain is the regularized squared-sum improvement
    0.5 * (SL^2/(nL+l2) + SR^2/(nR+l2) - S^2/(n+l2)). Ties resolve to the
    first (feature, threshold) scanned, so fits are deterministic.
    """
    res = residuals[rows]
    n = rows.size
    total = res.sum()
    parent_score = total * total / (n + l2)
    best = (0.0, -1, 0.0)
    for j in range(X.shape[1]):
        vals = X[rows, j]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sr = res[order]
        csum = np.cumsum(sr)
        # candidate split after position p (left = first p+1 rows)
        p = np.arange(n - 1)
        distinct = sv[:-1] != sv[1:]
        nl = p + 1
        nr = n - nl
        ok = distinct & (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        sl = csum[:-1]
        gains = 0.5 * (
            sl * sl / (nl + l2)
            + (total - sl) * (total - sl) / (nr + l2)
            - parent_score
        )
        gains = np.where(ok, gains, -np.inf)
        k = int(np.argmax(gains))
        if gains[k] > best[0]:
            best = (float(gains[k]), j, float(0.5 * (sv[k] + sv[k + 1])))
    return best


def _grow_tree(X, residuals, rows, config: GbtConfig):
    """Greedy depth-first construction; returns a Tree."""
    feature, threshold, left, right, value = [], [], [], [], []

    def leaf(node_rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(0)
        right.append(0)
        value.append(
            residuals[node_rows].sum() / (node_rows.size + config.l2_leaf_reg)
        )
        return len(feature) - 1

    def build(node_rows, depth):
        if depth >= config.max_depth or node_rows.size < 2 * config.min_samples_leaf:
            return leaf(node_rows)
        gain, j, thr = _best_split(
            X, residuals, node_rows, config.l2_leaf_reg, config.min_samples_leaf
        )
        if j < 0 or gain < config.min_split_gain:
            return leaf(node_rows)
        feature.append(j)
        threshold.append(thr)
        left.append(0)
        right.append(0)
        value.append(0.0)
        me = len(feature) - 1
        mask = X[node_rows, j] < thr
        left[me] = build(node_rows[mask], depth + 1)
        right[me] = build(node_rows[~mask], depth + 1)
        return me

    build(rows, 0)
    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
    )


@dataclass
class GbtRewardModel:
    """Fitted boosted-tree ensemble over (context ++ one-hot action) inputs."""

    base_prediction: float
    trees: list
    config: GbtConfig
    context_dim: int
    num_arms: int
    reward_upper_bound: float = 1.0

    def encode(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        if contexts.shape[1] != self.context_dim:
            raise DataError(
                f"context dim {contexts.shape[1]} != model dim {self.context_dim}"
            )
        onehot = np.zeros((contexts.shape[0], self.num_arms))
        onehot[np.arange(contexts.shape[0]), actions] = 1.0
        return np.hstack([contexts, onehot])

    def _raw(self, encoded: np.ndarray) -> np.ndarray:
        out = np.full(encoded.shape[0], self.base_prediction)
        for tree in self.trees:
            out += self.config.learning_rate * tree.apply(encoded)
        return out

    def predict(self, context: np.ndarray, action: int) -> float:
        if not 0 <= action < self.num_arms:
            raise DataError(f"action {action} out of range for {self.num_arms} arms")
        raw = self._raw(self.encode(context, np.array([action])))
        return float(np.clip(raw, 0.0, self.reward_upper_bound)[0])

    def predict_all_arms(self, context: np.ndarray) -> np.ndarray:
        return self.predict_matrix(np.atleast_2d(np.asarray(context, dtype=np.float64)))[0]

    def predict_matrix(self, contexts: np.ndarray) -> np.ndarray:
        """(n, K) matrix of clamped predictions for every arm."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
        n = contexts.shape[0]
        out = np.empty((n, self.num_arms))
        for a in range(self.num_arms):
            enc = self.encode(contexts, np.full(n, a, dtype=np.int64))
            out[:, a] = self._raw(enc)
        return np.clip(out, 0.0, self.reward_upper_bound)

    def predict_logged(self, dataset: BanditDataset) -> np.ndarray:
        """Clamped prediction at each logged (context, action) pair."""
        enc = self.encode(dataset.contexts, dataset.actions)
        return np.clip(self._raw(enc), 0.0, self.reward_upper_bound)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "base_prediction": self.base_prediction,
            "config": asdict(self.config),
            "context_dim": self.context_dim,
            "num_arms": self.num_arms,
            "reward_upper_bound": self.reward_upper_bound,
            "trees": [t.to_nodes() for t in self.trees],
        }
        return json.dumps(payload)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text: str) -> "GbtRewardModel":
        payload = json.loads(text)
        return cls(
            base_prediction=payload["base_prediction"],
            trees=[Tree.from_nodes(nds) for nds in payload["trees"]],
            config=GbtConfig(**payload["config"]),
            context_dim=payload["context_dim"],
            num_arms=payload["num_arms"],
            reward_upper_bound=payload["reward_upper_bound"],
        )

    @classmethod
    def load(cls, path) -> "GbtRewardModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit(train: BanditDataset, config: Optional[GbtConfig] = None) -> GbtRewardModel:
    """Fit the reward model on logged (context, action) -> reward pairs."""
    if config is None:
        config = GbtConfig()
    n = len(train)
    if n == 0:
        raise DataError("cannot fit a reward model on an empty dataset")
    model = GbtRewardModel(
        base_prediction=float(train.rewards.mean()),
        trees=[],
        config=config,
        context_dim=train.context_dim,
        num_arms=train.num_arms,
        reward_upper_bound=train.reward_upper_bound,
    )
    X = model.encode(train.contexts, train.actions)
    y = train.rewards.astype(np.float64)
    current = np.full(n, model.base_prediction)
    rng = make_rng(config.seed, 10)
    for _ in range(config.num_trees):
        residuals = y - current
        if config.subsample < 1.0:
            size = max(1, int(round(config.subsample * n)))
            rows = np.sort(rng.choice(n, size=size, replace=False))
        else:
            rows = np.arange(n)
        tree = _grow_tree(X, residuals, rows, config)
        model.trees.append(tree)
        current += config.learning_rate * tree.apply(X)
    return model
