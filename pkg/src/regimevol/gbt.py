"""Multiclass second-order gradient boosting with exact greedy splits."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

# Hessian floor per child; kept at zero so tiny training sets (segment means) can still split.
MIN_CHILD_WEIGHT = 0.0

SEARCH_SPACE = {
    "n_estimators": [50, 100, 200, 300],
    "max_depth": [3, 5, 7, 10],
    "learning_rate": [float(v) for v in np.linspace(0.01, 0.3, 10)],
    "subsample": [float(v) for v in np.linspace(0.6, 1.0, 5)],
    "colsample_bytree": [float(v) for v in np.linspace(0.6, 1.0, 5)],
    "gamma": [0.0, 0.1, 0.2, 0.3],
    "reg_alpha": [0.0, 0.01, 0.1, 1.0],
    "reg_lambda": [1.0, 1.5, 2.0, 3.0],
}


@dataclass(frozen=True)
class GBTParams:
    n_estimators: int = 100
    max_depth: int = 5
    learning_rate: float = 0.3
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    gamma: float = 0.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 0 or self.max_depth < 0:
            raise ValueError("n_estimators and max_depth must be nonnegative")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample_bytree <= 1:
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.gamma < 0 or self.reg_alpha < 0 or self.reg_lambda < 0:
            raise ValueError("gamma, reg_alpha and reg_lambda must be nonnegative")


@njit(cache=True)
def _soft_threshold(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@njit(cache=True)
def _score(g, h, lam, alpha):
    t = _soft_threshold(g, alpha)
    return t * t / (h + lam)


@njit(cache=True)
def _build_tree(X, order, g, h, rows, feats, max_depth, lam, alpha, gamma, min_child, eta):
    """Grow one regression tree level by level.

    ``order[f]`` lists all rows sorted by feature ``f``; ``rows`` flags the
    subsampled rows and ``feats`` the sampled columns. Returns flat node
    arrays (feature, threshold, left, right, value) and the node count.
    Leaf values already include the learning rate.
    """
    n, F = X.shape
    cap = 2 ** (max_depth + 1)
    feat = np.full(cap, -1, dtype=np.int64)
    thr = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    G = np.zeros(cap)
    H = np.zeros(cap)

    node_of = np.full(n, -1, dtype=np.int64)
    for r in range(n):
        if rows[r]:
            node_of[r] = 0
            G[0] += g[r]
            H[0] += h[r]
    n_nodes = 1
    level_start = 0
    level_end = 1

    best_gain = np.empty(cap)
    best_feat = np.empty(cap, dtype=np.int64)
    best_thr = np.empty(cap)
    gl = np.empty(cap)
    hl = np.empty(cap)
    last = np.empty(cap)
    seen = np.empty(cap, dtype=np.bool_)

    for depth in range(max_depth + 1):
        if depth == max_depth:
            break
        for nd in range(level_start, level_end):
            best_gain[nd] = gamma
            best_feat[nd] = -1
        for f in range(F):
            if not feats[f]:
                continue
            for nd in range(level_start, level_end):
                gl[nd] = 0.0
                hl[nd] = 0.0
                seen[nd] = False
            for k in range(n):
                r = order[f, k]
                nd = node_of[r]
                if nd < level_start:
                    continue
                x = X[r, f]
                if seen[nd] and x > last[nd]:
                    gr = G[nd] - gl[nd]
                    hr = H[nd] - hl[nd]
                    if hl[nd] >= min_child and hr >= min_child:
                        gain = 0.5 * (_score(gl[nd], hl[nd], lam, alpha) + _score(gr, hr, lam, alpha)
                                      - _score(G[nd], H[nd], lam, alpha))
                        if gain > best_gain[nd]:
                            best_gain[nd] = gain
                            best_feat[nd] = f
                            best_thr[nd] = 0.5 * (last[nd] + x)
                gl[nd] += g[r]
                hl[nd] += h[r]
                last[nd] = x
                seen[nd] = True
        next_start = n_nodes
        for nd in range(level_start, level_end):
            if best_feat[nd] >= 0:
                feat[nd] = best_feat[nd]
                thr[nd] = best_thr[nd]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
        if n_nodes == next_start:
            break
        for r in range(n):
            nd = node_of[r]
            if nd < level_start:
                continue
            if feat[nd] < 0:
                node_of[r] = -1  # settled in a leaf
                continue
            child = left[nd] if X[r, feat[nd]] < thr[nd] else right[nd]
            node_of[r] = child
            G[child] += g[r]
            H[child] += h[r]
        level_start = next_start
        level_end = n_nodes

    for nd in range(n_nodes):
        if feat[nd] < 0:
            value[nd] = -eta * _soft_threshold(G[nd], alpha) / (H[nd] + lam)
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _predict_raw(X, feat, thr, left, right, value, roots, tree_class, base):
    n = X.shape[0]
    K = base.shape[0]
    out = np.empty((n, K))
    for i in range(n):
        for k in range(K):
            out[i, k] = base[k]
        for t in range(roots.shape[0]):
            nd = roots[t]
            while feat[nd] >= 0:
                if X[i, feat[nd]] < thr[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            out[i, tree_class[t]] += value[nd]
    return out


def _softmax(raw: np.ndarray) -> np.ndarray:
    z = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class GBTModel:
    classes: np.ndarray
    base: np.ndarray
    params: GBTParams
    n_features: int
    feature_names: tuple[str, ...] = ()
    feat: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    thr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0))
    roots: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tree_class: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    degenerate: bool = False
    loss_history: list = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    def tree_depth(self, t: int) -> int:
        def depth(nd):
            if self.feat[nd] < 0:
                return 0
            return 1 + max(depth(self.left[nd]), depth(self.right[nd]))
        return depth(int(self.roots[t]))

    def raw_scores(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _predict_raw(X, self.feat, self.thr, self.left, self.right, self.value,
                            self.roots, self.tree_class, self.base)

    def to_json(self) -> str:
        trees = []
        for t, root in enumerate(self.roots):
            end = self.roots[t + 1] if t + 1 < len(self.roots) else len(self.feat)
            nodes = [{"feature": int(self.feat[i]), "threshold": float(self.thr[i]),
                      "left": int(self.left[i] - root) if self.left[i] >= 0 else -1,
                      "right": int(self.right[i] - root) if self.right[i] >= 0 else -1,
                      "leaf_value": float(self.value[i])} for i in range(root, end)]
            trees.append({"class_index": int(self.tree_class[t]), "nodes": nodes})
        return json.dumps({"classes": self.classes.tolist(), "base": self.base.tolist(),
                           "params": asdict(self.params), "n_features": self.n_features,
                           "feature_names": list(self.feature_names),
                           "degenerate": self.degenerate, "trees": trees})

    @classmethod
    def from_json(cls, text: str) -> "GBTModel":
        d = json.loads(text)
        feat, thr, left, right, value, roots, tc = [], [], [], [], [], [], []
        for tree in d["trees"]:
            off = len(feat)
            roots.append(off)
            tc.append(tree["class_index"])
            for nd in tree["nodes"]:
                feat.append(nd["feature"])
                thr.append(nd["threshold"])
                left.append(nd["left"] + off if nd["left"] >= 0 else -1)
                right.append(nd["right"] + off if nd["right"] >= 0 else -1)
                value.append(nd["leaf_value"])
        i64 = lambda a: np.asarray(a, dtype=np.int64)
        return cls(np.asarray(d["classes"]), np.asarray(d["base"], dtype=float),
                   GBTParams(**d["params"]), d["n_features"], tuple(d["feature_names"]),
                   i64(feat), np.asarray(thr, dtype=float), i64(left), i64(right),
                   np.asarray(value, dtype=float), i64(roots), i64(tc), d["degenerate"])


def predict_proba(model: GBTModel, X) -> np.ndarray:
    return _softmax(model.raw_scores(X))


def predict(model: GBTModel, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. the lowest class index on ties
    return model.classes[np.argmax(predict_proba(model, X), axis=1)]


def _cross_entropy(P: np.ndarray, idx: np.ndarray) -> float:
    return float(-np.mean(np.log(np.maximum(P[np.arange(len(idx)), idx], 1e-300))))


def train(X, labels, params: GBTParams = GBTParams(), seed: int = 0,
          feature_names=(), min_rows: int = 2) -> GBTModel:
    """Fit a softmax-objective boosted ensemble, one tree per class per round.

    Raw scores start at the log class priors. Gradients are ``p - y`` and
    Hessians ``2 p (1 - p)``, the XGBoost multiclass convention.
    """
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    n, F = X.shape
    if len(labels) != n:
        raise ValueError("labels and rows differ in length")
    if n < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {n}")
    classes, idx = np.unique(labels, return_inverse=True)
    K = len(classes)
    if K == 1:
        log.debug("single class in training labels; model is degenerate")
        return GBTModel(classes, np.zeros(1), params, F, tuple(feature_names), degenerate=True)

    prior = np.bincount(idx, minlength=K) / n
    base = np.log(prior)
    Y = np.zeros((n, K))
    Y[np.arange(n), idx] = 1.0
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    rng = np.random.default_rng(seed)
    raw = np.tile(base, (n, 1))
    trees = []
    n_cols = max(1, int(round(params.colsample_bytree * F)))
    n_rows = max(1, int(round(params.subsample * n)))
    history = [_cross_entropy(_softmax(raw), idx)]
    for _ in range(params.n_estimators):
        P = _softmax(raw)
        grad = P - Y
        hess = np.maximum(2.0 * P * (1.0 - P), 1e-16)
        rows = np.zeros(n, dtype=np.bool_)
        if n_rows < n:
            rows[rng.choice(n, n_rows, replace=False)] = True
        else:
            rows[:] = True
        for k in range(K):
            feats = np.zeros(F, dtype=np.bool_)
            if n_cols < F:
                feats[rng.choice(F, n_cols, replace=False)] = True
            else:
                feats[:] = True
            tree = _build_tree(X, order, np.ascontiguousarray(grad[:, k]), np.ascontiguousarray(hess[:, k]),
                               rows, feats, params.max_depth, params.reg_lambda, params.reg_alpha,
                               params.gamma, MIN_CHILD_WEIGHT, params.learning_rate)
            trees.append((k, tree))
        for k, tree in trees[-K:]:
            raw[:, k] += _predict_raw(X, *tree[:5], np.zeros(1, dtype=np.int64),
                                      np.zeros(1, dtype=np.int64), np.zeros(1))[:, 0]
        history.append(_cross_entropy(_softmax(raw), idx))

    feat, thr, left, right, value, roots, tc = [], [], [], [], [], [], []
    off = 0
    for k, (f, t, l, r, v) in trees:
        roots.append(off)
        tc.append(k)
        feat.append(f)
        thr.append(t)
        left.append(np.where(l >= 0, l + off, -1))
        right.append(np.where(r >= 0, r + off, -1))
        value.append(v)
        off += len(f)
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dtype=dt)
    return GBTModel(classes, base, params, F, tuple(feature_names),
                    cat(feat, np.int64), cat(thr, float), cat(left, np.int64), cat(right, np.int64),
                    cat(value, float), np.asarray(roots, dtype=np.int64), np.asarray(tc, dtype=np.int64),
                    False, history)


def class_probabilities(model: GBTModel, X, n_classes: int) -> np.ndarray:
    """Probabilities over classes ``0..n_classes-1``; absent classes get zero."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros((len(X), n_classes))
    if model.degenerate:
        out[:, int(model.classes[0])] = 1.0
        return out
    out[:, model.classes.astype(int)] = predict_proba(model, X)
    return out


@dataclass(frozen=True)
class SearchResult:
    best: GBTParams
    candidates: tuple[GBTParams, ...]
    scores: tuple[float, ...]
    folds: tuple[tuple[int, int], ...]
    flags: tuple[str, ...] = ()

    @property
    def best_score(self) -> float:
        return max(self.scores)


def draw_params(rng: np.random.Generator, space=SEARCH_SPACE) -> GBTParams:
    pick = {k: v[int(rng.integers(len(v)))] for k, v in space.items()}
    pick["n_estimators"] = int(pick["n_estimators"])
    pick["max_depth"] = int(pick["max_depth"])
    return GBTParams(**pick)


def contiguous_folds(n: int, folds: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, folds + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges, edges[1:])]


def random_search(X, labels, space=SEARCH_SPACE, n_iter: int = 20, folds: int = 3,
                  seed: int = 0) -> SearchResult:
    """Random search scored by mean accuracy over contiguous, unshuffled folds."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    n = len(labels)
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    if folds < 2 or n < 2 * folds:
        raise ValueError(f"{n} rows are too few for {folds} folds")
    rng = np.random.default_rng(seed)
    spans = contiguous_folds(n, folds)
    candidates, scores, flags = [], [], []
    for it in range(n_iter):
        params = draw_params(rng, space)
        accs = []
        for fi, (a, b) in enumerate(spans):
            mask = np.ones(n, dtype=bool)
            mask[a:b] = False
            if len(np.unique(labels[a:b])) < 2:
                flags.append(f"candidate {it} fold {fi}: single-class validation fold")
            if len(np.unique(labels[mask])) < 2:
                flags.append(f"candidate {it} fold {fi}: single-class training fold")
            model = train(X[mask], labels[mask], params, seed=seed + it)
            if model.degenerate:
                pred = np.full(b - a, model.classes[0])
            else:
                pred = predict(model, X[a:b])
            accs.append(float(np.mean(pred == labels[a:b])))
        candidates.append(params)
        scores.append(float(np.mean(accs)))
    best = candidates[int(np.argmax(scores))]
    return SearchResult(best, tuple(candidates), tuple(scores), tuple(spans), tuple(flags))
