"""Seeded random-forest classifier built on CART trees.

Written from scratch so that every source of randomness is an explicit
seeded stream and results are bit-reproducible: bootstrap draws, per-node
feature subsets, and tie-breaking (always toward the lower index /
lexicographically smaller class) are all pinned down. The tree grower and
the cross-validation driver are numba kernels; cross-validation units run
in parallel but each unit owns a derived seed, so parallel results equal
sequential ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .util import CohortSplitError, derive_seed

_SORT_INSERTION_CUTOFF = 32


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    features_per_split: int | None = None   # default floor(sqrt(D)), min 1
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise CohortSplitError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise CohortSplitError("min_samples_leaf must be >= 1")


def gini_impurity(class_counts) -> float:
    """Gini impurity of a node: 1 - sum of squared class fractions.

    0 for a pure node; (2, 2) gives 0.5. This is the criterion the tree
    grower minimizes (in its per-node weighted form).
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise CohortSplitError("class counts must be non-empty and non-negative")
    fractions = counts / total
    return float(1.0 - np.sum(fractions * fractions))


@numba.njit(cache=True, inline="always")
def _next_u64(state):
    s = state[0]
    s ^= s << np.uint64(13)
    s ^= s >> np.uint64(7)
    s ^= s << np.uint64(17)
    state[0] = s
    return s


@numba.njit(cache=True, inline="always")
def _rand_below(state, n):
    return int(_next_u64(state) >> np.uint64(33)) % n


@numba.njit(cache=True)
def _cosort(v, lab, n):
    """Sort v[:n] ascending, co-moving lab. Insertion sort for small n,
    heapsort above: no allocation, deterministic."""
    if n < 2:
        return
    if n <= _SORT_INSERTION_CUTOFF:
        for i in range(1, n):
            kv = v[i]
            kl = lab[i]
            j = i - 1
            while j >= 0 and v[j] > kv:
                v[j + 1] = v[j]
                lab[j + 1] = lab[j]
                j -= 1
            v[j + 1] = kv
            lab[j + 1] = kl
        return
    # heapify then pop
    i = n // 2 - 1
    while i >= 0:
        _sift_down(v, lab, i, n)
        i -= 1
    end = n - 1
    while end > 0:
        v[0], v[end] = v[end], v[0]
        lab[0], lab[end] = lab[end], lab[0]
        _sift_down(v, lab, 0, end)
        end -= 1


@numba.njit(cache=True, inline="always")
def _sift_down(v, lab, start, end):
    root = start
    while True:
        child = 2 * root + 1
        if child >= end:
            return
        if child + 1 < end and v[child] < v[child + 1]:
            child += 1
        if v[root] < v[child]:
            v[root], v[child] = v[child], v[root]
            lab[root], lab[child] = lab[child], lab[root]
            root = child
        else:
            return


@numba.njit(cache=True)
def _grow_tree(
    X,
    y,
    idx,
    m,
    n_classes,
    fps,
    min_leaf,
    max_depth,
    rng_state,
    feature,
    threshold,
    left,
    right,
    leaf_class,
    importance,
    featbuf,
    vbuf,
    lbuf,
    tmpbuf,
    cnt,
    lcnt,
    st_node,
    st_start,
    st_end,
    st_depth,
):
    """Grow one CART tree over the m sample row indices in idx[:m].

    Splits greedily minimize weighted Gini impurity over a random subset of
    fps features per node; thresholds are midpoints between sorted distinct
    values; leaves keep their majority class. Returns the node count.
    Weighted impurity decreases are accumulated into importance per feature.
    """
    d = X.shape[1]
    n_nodes = 1
    sp = 1
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0

    while sp > 0:
        sp -= 1
        nid = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        depth = st_depth[sp]
        m_node = e - s

        for c in range(n_classes):
            cnt[c] = 0
        for t in range(s, e):
            cnt[y[idx[t]]] += 1
        best_c = 0
        for c in range(1, n_classes):
            if cnt[c] > cnt[best_c]:
                best_c = c
        leaf_class[nid] = best_c

        sq = 0.0
        for c in range(n_classes):
            frac = cnt[c] / m_node
            sq += frac * frac
        gini_node = 1.0 - sq

        feature[nid] = -1
        if gini_node <= 0.0 or m_node < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue

        # feature subset without replacement: partial Fisher-Yates
        for i in range(d):
            featbuf[i] = i
        for i in range(fps):
            j = i + _rand_below(rng_state, d - i)
            featbuf[i], featbuf[j] = featbuf[j], featbuf[i]

        best_w = np.inf
        best_f = -1
        best_thr = 0.0
        best_nl = 0
        best_child_sum = 0.0
        for fi in range(fps):
            f = featbuf[fi]
            for t in range(m_node):
                vbuf[t] = X[idx[s + t], f]
                lbuf[t] = y[idx[s + t]]
            _cosort(vbuf, lbuf, m_node)

            for c in range(n_classes):
                lcnt[c] = 0
            for t in range(m_node - 1):
                lcnt[lbuf[t]] += 1
                nl = t + 1
                nr = m_node - nl
                if vbuf[t + 1] <= vbuf[t] or nl < min_leaf or nr < min_leaf:
                    continue
                sql = 0.0
                sqr = 0.0
                for c in range(n_classes):
                    fl = lcnt[c] / nl
                    fr = (cnt[c] - lcnt[c]) / nr
                    sql += fl * fl
                    sqr += fr * fr
                child_sum = nl * (1.0 - sql) + nr * (1.0 - sqr)
                w = child_sum / m_node
                if w < best_w:
                    thr = vbuf[t] + (vbuf[t + 1] - vbuf[t]) / 2.0
                    if thr >= vbuf[t + 1]:
                        thr = vbuf[t]   # midpoint rounded up to the next value
                    best_w = w
                    best_f = f
                    best_thr = thr
                    best_nl = nl
                    best_child_sum = child_sum

        if best_f < 0:
            continue

        importance[best_f] += m_node * gini_node - best_child_sum

        # stable partition of idx[s:e] by value <= threshold
        p = 0
        for t in range(s, e):
            if X[idx[t], best_f] <= best_thr:
                tmpbuf[p] = idx[t]
                p += 1
        for t in range(s, e):
            if X[idx[t], best_f] > best_thr:
                tmpbuf[p] = idx[t]
                p += 1
        for t in range(m_node):
            idx[s + t] = tmpbuf[t]

        feature[nid] = best_f
        threshold[nid] = best_thr
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[nid] = lid
        right[nid] = rid
        st_node[sp] = rid
        st_start[sp] = s + best_nl
        st_end[sp] = e
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_start[sp] = s
        st_end[sp] = s + best_nl
        st_depth[sp] = depth + 1
        sp += 1
    return n_nodes


@numba.njit(cache=True, inline="always")
def _tree_predict_row(X, row, feature, threshold, left, right, leaf_class):
    nid = 0
    while feature[nid] >= 0:
        if X[row, feature[nid]] <= threshold[nid]:
            nid = left[nid]
        else:
            nid = right[nid]
    return leaf_class[nid]


@numba.njit(cache=True)
def _fit_forest(
    X,
    y,
    train_rows,
    n_trees,
    n_classes,
    fps,
    min_leaf,
    max_depth,
    rng_state,
    feature,
    threshold,
    left,
    right,
    leaf_class,
    n_nodes,
    importance,
):
    """Fit n_trees trees on bootstrap draws of train_rows; tree t is stored
    in row t of the node arrays. One sequential rng stream drives bootstraps
    and feature subsets, so a fixed seed fixes the whole forest."""
    m = train_rows.shape[0]
    d = X.shape[1]
    idx = np.empty(m, np.int64)
    featbuf = np.empty(d, np.int64)
    vbuf = np.empty(m, np.float64)
    lbuf = np.empty(m, np.int64)
    tmpbuf = np.empty(m, np.int64)
    cnt = np.empty(n_classes, np.int64)
    lcnt = np.empty(n_classes, np.int64)
    max_nodes = feature.shape[1]
    st_node = np.empty(max_nodes, np.int64)
    st_start = np.empty(max_nodes, np.int64)
    st_end = np.empty(max_nodes, np.int64)
    st_depth = np.empty(max_nodes, np.int64)

    for t in range(n_trees):
        for i in range(m):
            idx[i] = train_rows[_rand_below(rng_state, m)]
        n_nodes[t] = _grow_tree(
            X, y, idx, m, n_classes, fps, min_leaf, max_depth, rng_state,
            feature[t], threshold[t], left[t], right[t], leaf_class[t],
            importance, featbuf, vbuf, lbuf, tmpbuf, cnt, lcnt,
            st_node, st_start, st_end, st_depth,
        )


@numba.njit(cache=True)
def _forest_predict(X, rows, feature, threshold, left, right, leaf_class, n_trees, n_classes, out):
    votes = np.empty(n_classes, np.int64)
    for i in range(rows.shape[0]):
        for c in range(n_classes):
            votes[c] = 0
        for t in range(n_trees):
            votes[_tree_predict_row(X, rows[i], feature[t], threshold[t], left[t], right[t], leaf_class[t])] += 1
        best = 0
        for c in range(1, n_classes):
            if votes[c] > votes[best]:
                best = c
        out[i] = best


@numba.njit(cache=True, parallel=True)
def _cv_accuracy_batch(
    X,
    labelings,
    fold_ids,
    n_folds,
    n_classes,
    n_trees,
    fps,
    min_leaf,
    max_depth,
    unit_seeds,
):
    """Mean accuracy over held-out folds for each labeling row.

    Each (labeling, fold) unit owns a derived rng seed; rows of the batch
    run in parallel but every unit is self-contained, so the output is
    identical to a sequential run.
    """
    n_label = labelings.shape[0]
    n = X.shape[0]
    d = X.shape[1]
    out = np.empty(n_label)
    for p in numba.prange(n_label):
        y = labelings[p]
        folds = fold_ids[p]
        acc_sum = 0.0
        for fold in range(n_folds):
            m_train = 0
            n_test = 0
            for i in range(n):
                if folds[i] == fold:
                    n_test += 1
                else:
                    m_train += 1
            train_rows = np.empty(m_train, np.int64)
            test_rows = np.empty(n_test, np.int64)
            a = 0
            b = 0
            for i in range(n):
                if folds[i] == fold:
                    test_rows[b] = i
                    b += 1
                else:
                    train_rows[a] = i
                    a += 1

            max_nodes = 2 * m_train
            idx = np.empty(m_train, np.int64)
            featbuf = np.empty(d, np.int64)
            vbuf = np.empty(m_train, np.float64)
            lbuf = np.empty(m_train, np.int64)
            tmpbuf = np.empty(m_train, np.int64)
            cnt = np.empty(n_classes, np.int64)
            lcnt = np.empty(n_classes, np.int64)
            st_node = np.empty(max_nodes, np.int64)
            st_start = np.empty(max_nodes, np.int64)
            st_end = np.empty(max_nodes, np.int64)
            st_depth = np.empty(max_nodes, np.int64)
            feature = np.empty(max_nodes, np.int64)
            threshold = np.empty(max_nodes, np.float64)
            left = np.empty(max_nodes, np.int64)
            right = np.empty(max_nodes, np.int64)
            leaf_class = np.empty(max_nodes, np.int64)
            importance = np.zeros(d, np.float64)
            votes = np.zeros((n_test, n_classes), np.int64)

            state = np.empty(1, np.uint64)
            state[0] = unit_seeds[p, fold]
            for t in range(n_trees):
                for i in range(m_train):
                    idx[i] = train_rows[_rand_below(state, m_train)]
                _grow_tree(
                    X, y, idx, m_train, n_classes, fps, min_leaf, max_depth, state,
                    feature, threshold, left, right, leaf_class,
                    importance, featbuf, vbuf, lbuf, tmpbuf, cnt, lcnt,
                    st_node, st_start, st_end, st_depth,
                )
                for i in range(n_test):
                    votes[i, _tree_predict_row(X, test_rows[i], feature, threshold, left, right, leaf_class)] += 1

            correct = 0
            for i in range(n_test):
                best = 0
                for c in range(1, n_classes):
                    if votes[i, c] > votes[i, best]:
                        best = c
                if best == y[test_rows[i]]:
                    correct += 1
            acc_sum += correct / n_test
        out[p] = acc_sum / n_folds
    return out


class RandomForest:
    """A fitted forest: tree structures, class order, Gini importances."""

    def __init__(self, params: ForestParams, classes: list[str], feature_names: list[str] | None):
        self.params = params
        self.classes = classes
        self.feature_names = feature_names
        self.n_features = 0
        self.importances = np.zeros(0)
        self._arrays = None

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        feature, threshold, left, right, leaf_class = self._arrays
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], np.int64)
        _forest_predict(
            X, np.arange(X.shape[0], dtype=np.int64),
            feature, threshold, left, right, leaf_class,
            self.params.n_trees, len(self.classes), out,
        )
        return out

    def predict(self, X: np.ndarray) -> list[str]:
        return [self.classes[c] for c in self.predict_codes(X)]


def effective_features_per_split(params: ForestParams, n_features: int) -> int:
    fps = params.features_per_split
    if fps is None:
        fps = max(1, math.floor(math.sqrt(n_features)))
    return min(max(1, fps), n_features)


def encode_labels(labels) -> tuple[np.ndarray, list[str]]:
    """Integer codes in lexicographic class order (ties in voting therefore
    resolve to the lexicographically smaller class)."""
    classes = sorted({str(v) for v in labels})
    index = {c: i for i, c in enumerate(classes)}
    return np.array([index[str(v)] for v in labels], dtype=np.int64), classes


def fit_forest(
    X: np.ndarray,
    labels,
    params: ForestParams,
    feature_names: list[str] | None = None,
) -> RandomForest:
    """Train a forest on the full matrix. Deterministic given params.seed."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 4:
        raise CohortSplitError(f"need at least 4 samples, got {n}")
    codes, classes = encode_labels(labels)
    if len(classes) < 2:
        raise CohortSplitError("need at least 2 classes")

    fps = effective_features_per_split(params, d)
    max_depth = -1 if params.max_depth is None else params.max_depth
    max_nodes = 2 * n
    shape = (params.n_trees, max_nodes)
    feature = np.empty(shape, np.int64)
    threshold = np.empty(shape, np.float64)
    left = np.empty(shape, np.int64)
    right = np.empty(shape, np.int64)
    leaf_class = np.empty(shape, np.int64)
    n_nodes = np.empty(params.n_trees, np.int64)
    importance = np.zeros(d, np.float64)

    state = np.array([derive_seed(params.seed, 0) | 1], dtype=np.uint64)
    _fit_forest(
        X, codes, np.arange(n, dtype=np.int64),
        params.n_trees, len(classes), fps, params.min_samples_leaf, max_depth,
        state, feature, threshold, left, right, leaf_class, n_nodes, importance,
    )

    model = RandomForest(params, classes, feature_names)
    model.n_features = d
    # per-split accumulation is m_node-weighted; normalize to per-tree mean
    # of fraction-of-root-samples weighted decreases
    model.importances = importance / (params.n_trees * n)
    model._arrays = (feature, threshold, left, right, leaf_class)
    return model


def stratified_fold_ids(codes: np.ndarray, n_folds: int, rng: np.random.Generator) -> np.ndarray:
    """Per-row fold index; each class is shuffled and dealt round-robin so
    folds have near-identical class composition."""
    fold = np.empty(codes.shape[0], np.int64)
    for c in np.unique(codes):
        rows = np.flatnonzero(codes == c)
        if rows.size < n_folds:
            raise CohortSplitError(
                f"class {c} has {rows.size} members; cannot stratify into {n_folds} folds"
            )
        perm = rng.permutation(rows)
        fold[perm] = np.arange(rows.size) % n_folds
    return fold


def cv_accuracy_batch(
    X: np.ndarray,
    labelings: np.ndarray,
    n_classes: int,
    params: ForestParams,
    n_folds: int,
    fold_seeds: list[int],
    unit_seeds: np.ndarray,
) -> np.ndarray:
    """Driver for the batch kernel: builds stratified folds per labeling row
    then scores them all (in parallel across rows)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    labelings = np.ascontiguousarray(labelings, dtype=np.int64)
    fold_ids = np.empty_like(labelings)
    for p in range(labelings.shape[0]):
        rng = np.random.default_rng(fold_seeds[p])
        fold_ids[p] = stratified_fold_ids(labelings[p], n_folds, rng)
    fps = effective_features_per_split(params, X.shape[1])
    max_depth = -1 if params.max_depth is None else params.max_depth
    seeds = np.ascontiguousarray(unit_seeds, dtype=np.uint64) | np.uint64(1)
    return _cv_accuracy_batch(
        X, labelings, fold_ids, n_folds, n_classes,
        params.n_trees, fps, params.min_samples_leaf, max_depth, seeds,
    )
