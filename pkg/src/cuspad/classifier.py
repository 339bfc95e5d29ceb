"""CART decision tree (Gini impurity) and repeated-trial evaluation.

Splits are `x[feature] <= threshold` goes left. Thresholds sit at midpoints
between consecutive distinct training values. Among equally good splits the
lowest feature index wins, then the lowest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LEAF = -1


def gini(counts) -> float:
    c = np.asarray(counts, dtype=float)
    n = c.sum()
    if n == 0:
        return 0.0
    return float(1.0 - np.sum(c * c) / (n * n))


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray  # int, LEAF for leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (nodes, 2) training class counts
    n_features: int
    max_depth: int
    min_leaf: int
    feature_names: tuple[str, ...] | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def value(self) -> np.ndarray:
        # ties go to label 0
        return (self.counts[:, 1] > self.counts[:, 0]).astype(int)

    @property
    def depth(self) -> int:
        return int(self.node_depths().max())

    def node_depths(self) -> np.ndarray:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):  # children always come after parents
            if self.feature[i] != LEAF:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return d

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.n_nodes):
            node = {"id": i, "counts": [int(c) for c in self.counts[i]], "label": int(self.value[i])}
            if self.feature[i] != LEAF:
                f = int(self.feature[i])
                node.update(
                    feature=f,
                    threshold=float(self.threshold[i]),
                    left=int(self.left[i]),
                    right=int(self.right[i]),
                )
                if self.feature_names is not None:
                    node["feature_name"] = self.feature_names[f]
            nodes.append(node)
        return {
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "feature_names": list(self.feature_names) if self.feature_names is not None else None,
            "nodes": nodes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "DecisionTree":
        nodes = sorted(doc["nodes"], key=lambda n: n["id"])
        k = len(nodes)
        feature = np.full(k, LEAF, dtype=int)
        threshold = np.zeros(k)
        left = np.full(k, LEAF, dtype=int)
        right = np.full(k, LEAF, dtype=int)
        counts = np.zeros((k, 2), dtype=int)
        for n in nodes:
            i = n["id"]
            counts[i] = n["counts"]
            if "feature" in n:
                feature[i], threshold[i], left[i], right[i] = n["feature"], n["threshold"], n["left"], n["right"]
        names = doc.get("feature_names")
        return cls(
            feature, threshold, left, right, counts, doc["n_features"], doc["max_depth"], doc["min_leaf"],
            tuple(names) if names is not None else None,
        )


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[int, float] | None:
    """Lowest weighted Gini split, or None when no admissible split exists."""
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    ones = np.cumsum(y[order], axis=0)[:-1]  # positives among the first k+1 rows
    nl = np.arange(1, n)[:, None].astype(float)
    nr = n - nl
    pos_total = y.sum()
    zl = nl - ones
    pr = pos_total - ones
    zr = nr - pr
    # n * weighted gini = n - sum_k (zeros_k^2 + ones_k^2) / n_k
    score = n - (zl * zl + ones * ones) / nl - (zr * zr + pr * pr) / nr
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        valid &= (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    best = score.min()
    # tie-break: lowest feature, then lowest threshold (lowest split row)
    rows, cols = np.nonzero(score <= best)
    f = int(cols.min())
    k = int(rows[cols == f].min())
    lo, hi = xs[k, f], xs[k + 1, f]
    thr = (lo + hi) / 2.0
    if not thr < hi:  # adjacent floats
        thr = lo
    return f, float(thr)


def train_cart(
    X,
    y,
    max_depth: int = 5,
    min_leaf: int = 1,
    seed: int | None = None,
    feature_names: Sequence[str] | None = None,
) -> DecisionTree:
    """Greedy CART. Splitting stops at max_depth, at pure nodes, or when no split
    keeps min_leaf samples on both sides. `seed` is accepted for interface
    stability; the algorithm itself uses no randomness."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (samples, features) matching y")
    if len(y) < 1:
        raise ValueError("empty training set")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    if max_depth < 0 or min_leaf < 1:
        raise ValueError("max_depth >= 0 and min_leaf >= 1 required")
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        pos = int(y[idx].sum())
        counts.append((len(idx) - pos, pos))
        return len(feature) - 1

    queue = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while queue:  # breadth first: parents get lower ids than children
        node, idx, depth = queue.pop(0)
        if depth >= max_depth or len(idx) < 2 * min_leaf or min(counts[node]) == 0:
            continue
        split = _best_split(X[idx], y[idx], min_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        queue.append((left[node], li, depth + 1))
        queue.append((right[node], ri, depth + 1))
    return DecisionTree(
        np.array(feature, dtype=int),
        np.array(threshold, dtype=float),
        np.array(left, dtype=int),
        np.array(right, dtype=int),
        np.array(counts, dtype=int).reshape(-1, 2),
        X.shape[1],
        max_depth,
        min_leaf,
        tuple(feature_names) if feature_names is not None else None,
    )


def predict(tree: DecisionTree, X) -> np.ndarray | int:
    """Labels for a FeatureVector, a single row, or a (samples, features) matrix."""
    values = getattr(X, "values", X)
    A = np.asarray(values, dtype=float)
    single = A.ndim == 1
    A = np.atleast_2d(A)
    if A.shape[1] != tree.n_features:
        raise ValueError(f"expected {tree.n_features} features, got {A.shape[1]}")
    node = np.zeros(len(A), dtype=int)
    active = tree.feature[node] != LEAF
    while active.any():
        rows = np.flatnonzero(active)
        cur = node[rows]
        go_left = A[rows, tree.feature[cur]] <= tree.threshold[cur]
        node[rows] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = tree.feature[node] != LEAF
    out = tree.value[node]
    return int(out[0]) if single else out


def accuracy(tree: DecisionTree, X, y) -> float:
    return float(np.mean(predict(tree, X) == np.asarray(y)) * 100.0)


def confusion(y_true, y_pred) -> dict[str, int]:
    t = np.asarray(y_true).astype(int)
    p = np.asarray(y_pred).astype(int)
    return {
        "tp": int(((t == 1) & (p == 1)).sum()),
        "tn": int(((t == 0) & (p == 0)).sum()),
        "fp": int(((t == 0) & (p == 1)).sum()),
        "fn": int(((t == 1) & (p == 0)).sum()),
    }


# -- repeated evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    mean_accuracy: float
    ci95_halfwidth: float
    per_trial: tuple[float, ...]
    depth: int
    confusion: dict = field(default_factory=dict)
    train_accuracy: float | None = None
    detection_failures: int = 0

    @property
    def trials(self) -> int:
        return len(self.per_trial)

    def to_dict(self) -> dict:
        return {
            "mean_accuracy": round(self.mean_accuracy, 10),
            "ci95_halfwidth": round(self.ci95_halfwidth, 10),
            "per_trial": [round(a, 10) for a in self.per_trial],
            "trials": self.trials,
            "depth": self.depth,
            "confusion": dict(sorted(self.confusion.items())),
            "train_accuracy": None if self.train_accuracy is None else round(self.train_accuracy, 10),
            "detection_failures": self.detection_failures,
        }

    @property
    def summary(self) -> str:
        return format_accuracy(self.mean_accuracy, self.ci95_halfwidth)


def ci95(values: Sequence[float]) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width 1.96 s / sqrt(n)."""
    a = np.asarray(values, dtype=float)
    if len(a) < 2:
        return float(a.mean()), 0.0
    return float(a.mean()), float(1.96 * a.std(ddof=1) / np.sqrt(len(a)))


def summarize(tree: DecisionTree, trial_results: Sequence[tuple[np.ndarray, np.ndarray, int]], train_acc=None) -> EvalReport:
    """trial_results: (y_true, y_pred, detection_failures) per trial."""
    accs = [float(np.mean(t == p) * 100.0) for t, p, _ in trial_results]
    totals = {"tp": 0, "tn": 0, "fp": 0, "fn": 0}
    fails = 0
    for t, p, f in trial_results:
        for k, v in confusion(t, p).items():
            totals[k] += v
        fails += int(f)
    mean, half = ci95(accs)
    return EvalReport(mean, half, tuple(accs), tree.depth, totals, train_acc, fails)


def evaluate_repeated(
    tree: DecisionTree,
    make_test: Callable[[int], tuple[np.ndarray, np.ndarray, int]],
    trials: int = 50,
    train_accuracy: float | None = None,
) -> EvalReport:
    """Run `trials` independent corrupted test sets through a trained tree.

    make_test(trial) returns (X_test, y_test, detection_failures); it owns
    error injection and feature extraction with its own derived seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    results = []
    for k in range(trials):
        X, y, fails = make_test(k)
        results.append((np.asarray(y), predict(tree, X), fails))
    return summarize(tree, results, train_accuracy)


def format_accuracy(mean: float, half: float | None) -> str:
    if half is None:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {half:.2f}"


def format_table(rows: Sequence[tuple[str, EvalReport, EvalReport]], title: str = "") -> str:
    """Rows of (error label, AD report, CUSPAD report) in an
    Error | AD Accuracy | Depth | CUSPAD Accuracy | Depth layout."""
    head = ("Error", "AD Accuracy (95%)", "Depth", "CUSPAD Accuracy (95%)", "Depth")
    body = [
        (lbl, ad.summary, str(ad.depth), cu.summary, str(cu.depth))
        for lbl, ad, cu in rows
    ]
    widths = [max(len(r[i]) for r in [head, *body]) for i in range(len(head))]
    fmt = lambda r: "| " + " | ".join(c.ljust(wd) for c, wd in zip(r, widths)) + " |"
    lines = [title] if title else []
    lines += [fmt(head), "|" + "|".join("-" * (wd + 2) for wd in widths) + "|"]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def compact(tree: DecisionTree) -> tuple[DecisionTree, np.ndarray]:
    """Same tree reading only the features it splits on.

    Returns (tree over the used columns, used column indices); predict the
    small tree on X[:, cols]."""
    used = np.unique(tree.feature[tree.feature != LEAF])
    remap = {int(f): i for i, f in enumerate(used)}
    feature = np.array([remap[int(f)] if f != LEAF else LEAF for f in tree.feature], dtype=int)
    names = tuple(tree.feature_names[f] for f in used) if tree.feature_names is not None else None
    small = DecisionTree(
        feature, tree.threshold, tree.left, tree.right, tree.counts, len(used), tree.max_depth, tree.min_leaf, names
    )
    return small, used
