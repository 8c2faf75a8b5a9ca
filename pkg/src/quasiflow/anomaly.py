"""Isolation-forest node scoring and source/target interaction features."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError

EULER_GAMMA = 0.5772156649015329
MODEL_MAGIC = b"QFIF"
MODEL_VERSION = 1


def average_path_length(n) -> np.ndarray:
    """c(n): expected unsuccessful-search path length in a BST of n points."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + EULER_GAMMA) - 2.0 * (nb - 1.0) / nb
    return out


@dataclass
class _Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray       # training rows reaching the node
    nan_left: np.ndarray   # missing values follow the heavier child


def _grow(X: np.ndarray, rng: np.random.Generator, limit: int) -> _Tree:
    feature, threshold, left, right, size, nan_left = [], [], [], [], [], []

    def new_node(n):
        for lst, val in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1),
                         (size, n), (nan_left, False)):
            lst.append(val)
        return len(feature) - 1

    stack = [(new_node(len(X)), np.arange(len(X)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= limit or len(rows) <= 1:
            continue
        sub = X[rows]
        with np.errstate(invalid="ignore"):
            lo = np.nanmin(np.where(np.isnan(sub), np.inf, sub), axis=0)
            hi = np.nanmax(np.where(np.isnan(sub), -np.inf, sub), axis=0)
        splittable = np.flatnonzero(hi > lo)
        if len(splittable) == 0:
            continue
        q = int(splittable[rng.integers(len(splittable))])
        p = float(rng.uniform(lo[q], hi[q]))
        col = sub[:, q]
        missing = np.isnan(col)
        go_left = col < p
        n_left = int(go_left.sum())
        n_right = int((~go_left & ~missing).sum())
        nl = n_left >= n_right
        if nl:
            go_left |= missing
        l_rows, r_rows = rows[go_left], rows[~go_left]
        li, ri = new_node(len(l_rows)), new_node(len(r_rows))
        feature[node], threshold[node] = q, p
        left[node], right[node], nan_left[node] = li, ri, nl
        stack.append((ri, r_rows, depth + 1))
        stack.append((li, l_rows, depth + 1))
    return _Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
                 np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                 np.array(size, dtype=np.int64), np.array(nan_left, dtype=bool))


def _path_lengths(tree: _Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int64)
    depth = np.zeros(len(X), dtype=np.float64)
    active = np.flatnonzero(tree.feature[node] >= 0)
    while len(active):
        nd = node[active]
        f = tree.feature[nd]
        x = X[active, f]
        go_left = np.where(np.isnan(x), tree.nan_left[nd], x < tree.threshold[nd])
        node[active] = np.where(go_left, tree.left[nd], tree.right[nd])
        depth[active] += 1.0
        active = active[tree.feature[node[active]] >= 0]
    return depth + average_path_length(tree.size[node])


class IsolationForest:
    def __init__(self, trees: int = 100, sample_size: int = 256, seed: int = 0):
        if trees < 1:
            raise ValueError("trees must be >= 1")
        if sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        self.trees = trees
        self.sample_size = sample_size
        self.seed = seed
        self.n_features: int | None = None
        self.psi: int | None = None
        self._trees: list[_Tree] = []

    def fit(self, X) -> "IsolationForest":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) < 2:
            raise DataError("need a 2-D matrix with at least 2 rows")
        n = len(X)
        psi = min(self.sample_size, n)
        limit = int(math.ceil(math.log2(psi)))
        self.n_features = X.shape[1]
        self.psi = psi
        # one child seed per tree keeps trees independent of fitting order
        seeds = np.random.SeedSequence(self.seed).spawn(self.trees)
        self._trees = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            rows = np.sort(rng.choice(n, size=psi, replace=False))
            self._trees.append(_grow(X[rows], rng, limit))
        return self

    def path_length(self, X) -> np.ndarray:
        X = self._check(X)
        total = np.zeros(len(X))
        for t in self._trees:
            total += _path_lengths(t, X)
        return total / len(self._trees)

    def score(self, X) -> np.ndarray:
        h = self.path_length(X)
        c = float(average_path_length(self.psi))
        return np.clip(np.power(2.0, -h / c), 0.0, 1.0)

    def _check(self, X) -> np.ndarray:
        if not self._trees:
            raise DataError("model is not fitted")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} columns, got "
                            f"{X.shape[1] if X.ndim == 2 else X.shape}")
        return X

    def save(self, path) -> None:
        arrays = {}
        for i, t in enumerate(self._trees):
            for name in ("feature", "threshold", "left", "right", "size", "nan_left"):
                arrays[f"{i}_{name}"] = getattr(t, name)
        bio = io.BytesIO()
        np.savez(bio, **arrays)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIqqqq", MODEL_MAGIC, MODEL_VERSION, self.trees,
                                 self.sample_size, self.psi, self.n_features))
            fh.write(struct.pack("<q", self.seed))
            fh.write(bio.getvalue())

    @classmethod
    def load(cls, path) -> "IsolationForest":
        with open(path, "rb") as fh:
            head = fh.read(struct.calcsize("<4sIqqqq"))
            magic, version, trees, sample_size, psi, n_features = struct.unpack("<4sIqqqq", head)
            if magic != MODEL_MAGIC or version != MODEL_VERSION:
                raise DataError(f"{path}: not an isolation-forest model (v{MODEL_VERSION})")
            (seed,) = struct.unpack("<q", fh.read(8))
            data = np.load(io.BytesIO(fh.read()))
            model = cls(trees, sample_size, seed)
            model.psi, model.n_features = psi, n_features
            model._trees = [
                _Tree(*(data[f"{i}_{name}"] for name in
                        ("feature", "threshold", "left", "right", "size", "nan_left")))
                for i in range(trees)
            ]
        return model


def fit_isolation_forest(X, trees: int = 100, sample_size: int = 256, seed: int = 0) -> IsolationForest:
    return IsolationForest(trees, sample_size, seed).fit(X)


def score_nodes(model: IsolationForest, X) -> np.ndarray:
    return model.score(X)


INTERACTION_COLUMNS = ("src_score", "tgt_score", "score_product", "score_max", "score_min",
                       "score_absdiff", "src_score_imputed", "tgt_score_imputed")


def interaction_features(scores: np.ndarray, source: np.ndarray, target: np.ndarray) -> dict:
    """Per-transaction combinations of endpoint anomaly scores.

    ``scores`` is indexed by node id with NaN for unscored nodes; those are
    imputed with the median of the scored nodes and flagged.
    """
    scores = np.asarray(scores, dtype=np.float64)
    known = scores[~np.isnan(scores)]
    fill = float(np.median(known)) if len(known) else 0.5
    s = scores[np.asarray(source)]
    t = scores[np.asarray(target)]
    s_miss, t_miss = np.isnan(s), np.isnan(t)
    s = np.where(s_miss, fill, s)
    t = np.where(t_miss, fill, t)
    return {
        "src_score": s,
        "tgt_score": t,
        "score_product": s * t,
        "score_max": np.maximum(s, t),
        "score_min": np.minimum(s, t),
        "score_absdiff": np.abs(s - t),
        "src_score_imputed": s_miss.astype(np.float64),
        "tgt_score_imputed": t_miss.astype(np.float64),
    }
