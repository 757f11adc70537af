"""Gradient boosted decision trees for binary classification.

Second-order boosting on the logistic loss: per round, each sample
contributes gradient g = p - y and hessian h = p(1 - p); exact greedy
splits maximize

    gain = 1/2 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - G^2/(H+lambda))

and leaves output -G/(H+lambda), scaled by the learning rate. The
initial margin is the log-odds of the training prevalence. Feature
columns are presorted once; each node replays the sorted order through
a membership mask, so split search is O(n_features * n_node) per node.

Trees serialize to plain JSON so fitted models round-trip without
pickle.
"""

from __future__ import annotations

import json

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .validation import check_array, check_binary_labels, check_consistent_length


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class GradientBoostedTrees(BaseEstimator, ClassifierMixin):
    """Boosted trees with the XGBoost-style second-order objective.

    Parameters mirror the usual names: n_estimators boosting rounds,
    learning_rate shrinkage, max_depth per tree, reg_lambda L2 on leaf
    weights, min_child_weight minimum hessian mass per child.
    """

    def __init__(self, n_estimators: int = 100, learning_rate: float = 1.0,
                 max_depth: int = 6, reg_lambda: float = 1.0,
                 min_child_weight: float = 1.0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.reg_lambda = reg_lambda
        self.min_child_weight = min_child_weight

    def fit(self, X, y):
        X = check_array(X, "X", ndim=2)
        y = check_binary_labels(y)
        check_consistent_length(X, y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        n, p = X.shape
        self.n_features_in_ = p
        self.classes_ = np.array([0, 1])

        prevalence = y.mean()
        prevalence = min(max(prevalence, 1e-12), 1 - 1e-12)
        self.base_score_ = float(np.log(prevalence / (1 - prevalence)))

        sorted_idx = np.argsort(X, axis=0, kind="stable")
        margins = np.full(n, self.base_score_)
        self.trees_ = []
        for _ in range(self.n_estimators):
            prob = _sigmoid(margins)
            g = prob - y
            h = prob * (1.0 - prob)
            tree = self._grow(X, g, h, sorted_idx)
            self.trees_.append(tree)
            margins += self._eval_tree(tree, X)
        return self

    # tree nodes are dicts; leaves carry the already-shrunk output
    def _grow(self, X, g, h, sorted_idx):
        lam = self.reg_lambda

        def leaf(gs, hs):
            return {"leaf": float(-self.learning_rate * gs / (hs + lam))}

        def build(mask, depth):
            gs = float(g[mask].sum())
            hs = float(h[mask].sum())
            if depth >= self.max_depth:
                return leaf(gs, hs)
            best = None  # (gain, feature, threshold)
            parent_score = gs * gs / (hs + lam)
            for f in range(X.shape[1]):
                idx = sorted_idx[:, f]
                idx = idx[mask[idx]]
                if len(idx) < 2:
                    break
                vals = X[idx, f]
                g_cum = np.cumsum(g[idx])
                h_cum = np.cumsum(h[idx])
                gl = g_cum[:-1]
                hl = h_cum[:-1]
                gr = g_cum[-1] - gl
                hr = h_cum[-1] - hl
                valid = (vals[:-1] != vals[1:]) \
                    & (hl >= self.min_child_weight) \
                    & (hr >= self.min_child_weight)
                if not valid.any():
                    continue
                gains = np.where(
                    valid,
                    gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent_score,
                    -np.inf)
                pos = int(np.argmax(gains))
                gain = 0.5 * gains[pos]
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-15):
                    threshold = 0.5 * (vals[pos] + vals[pos + 1])
                    best = (float(gain), f, float(threshold))
            if best is None:
                return leaf(gs, hs)
            _, f, threshold = best
            go_left = X[:, f] <= threshold
            return {
                "feature": f,
                "threshold": threshold,
                "left": build(mask & go_left, depth + 1),
                "right": build(mask & ~go_left, depth + 1),
            }

        return build(np.ones(len(g), dtype=bool), 0)

    def _eval_tree(self, tree, X):
        out = np.zeros(len(X))

        def walk(node, idx):
            if "leaf" in node:
                out[idx] = node["leaf"]
                return
            left = X[idx, node["feature"]] <= node["threshold"]
            walk(node["left"], idx[left])
            walk(node["right"], idx[~left])

        walk(tree, np.arange(len(X)))
        return out

    def decision_function(self, X) -> np.ndarray:
        X = check_array(X, "X", ndim=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        margins = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            margins += self._eval_tree(tree, X)
        return margins

    def predict_proba(self, X) -> np.ndarray:
        p1 = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)

    def staged_margins(self, X) -> np.ndarray:
        """(n_rounds, n_samples) cumulative margins, one row per round."""
        X = check_array(X, "X", ndim=2)
        margins = np.full(len(X), self.base_score_)
        stages = np.empty((len(self.trees_), len(X)))
        for i, tree in enumerate(self.trees_):
            margins = margins + self._eval_tree(tree, X)
            stages[i] = margins
        return stages

    def to_json(self) -> str:
        if not hasattr(self, "trees_"):
            raise RuntimeError("model is not fitted")
        return json.dumps({
            "kind": "gradient_boosted_trees",
            "params": self.get_params(),
            "n_features": self.n_features_in_,
            "base_score": self.base_score_,
            "trees": self.trees_,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, payload: str) -> "GradientBoostedTrees":
        blob = json.loads(payload)
        if blob.get("kind") != "gradient_boosted_trees":
            raise ValueError("not a serialized boosted-trees model")
        model = cls(**blob["params"])
        model.n_features_in_ = int(blob["n_features"])
        model.base_score_ = float(blob["base_score"])
        model.trees_ = blob["trees"]
        model.classes_ = np.array([0, 1])
        return model

    def save(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())
            f.write("\n")

    @classmethod
    def load(cls, path) -> "GradientBoostedTrees":
        with open(path) as f:
            return cls.from_json(f.read())
