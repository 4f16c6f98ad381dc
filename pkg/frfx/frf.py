"""Functional classification trees and functional random forests on FPC scores.

A split sends a curve left when its score on the split FPC is <= threshold.
Ties are broken toward the lower FPC index, then the lower threshold; votes
tie toward class 0.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel

from .config import CLASS_NAMES, ForestConfig
from .errors import EmptyNode, NoBootstrapInfo, SingleClassData
from .utils import n_workers, rng_stream

log = logging.getLogger("frf")

_TIE_EPS = 1e-12


def default_mtry(n_features: int) -> int:
    return max(1, int(math.floor(math.sqrt(n_features))))


def resolve_mtry(config: ForestConfig, n_features: int) -> int:
    m = default_mtry(n_features) if config.mtry is None else int(config.mtry)
    if not 1 <= m <= n_features:
        raise ValueError(f"mtry={m} must lie in [1, {n_features}]")
    return m


def impurity(class_counts: Sequence[int], criterion: str = "gini") -> float:
    counts = np.asarray(class_counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("class counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise EmptyNode("impurity of an empty node is undefined")
    p = counts / total
    if criterion == "gini":
        return float(1.0 - np.sum(p * p))
    if criterion == "entropy":
        nz = p[p > 0]
        return float(-np.sum(nz * np.log2(nz)) + 0.0)
    raise ValueError(f"unknown criterion {criterion!r}")


def _impurity_vec(n0: np.ndarray, n1: np.ndarray, criterion: str) -> np.ndarray:
    n = n0 + n1
    with np.errstate(divide="ignore", invalid="ignore"):
        p0 = np.where(n > 0, n0 / n, 0.0)
        p1 = np.where(n > 0, n1 / n, 0.0)
        if criterion == "gini":
            return 1.0 - p0 * p0 - p1 * p1
        h0 = np.where(p0 > 0, -p0 * np.log2(np.where(p0 > 0, p0, 1.0)), 0.0)
        h1 = np.where(p1 > 0, -p1 * np.log2(np.where(p1 > 0, p1, 1.0)), 0.0)
        return h0 + h1


@dataclass(frozen=True)
class SplitRule:
    fpc_index: int
    threshold: float
    decrease: float = 0.0  # impurity decrease at the node, unweighted


@dataclass(frozen=True, eq=False)
class TreeNode:
    class_counts: Tuple[int, int]
    impurity: float
    n_samples: int
    rule: Optional[SplitRule] = None
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None
    # decrease scaled by the node's share of the tree's training sample
    weighted_decrease: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.rule is None

    @property
    def predicted_class(self) -> int:
        return 1 if self.class_counts[1] > self.class_counts[0] else 0

    @property
    def class_fraction(self) -> float:
        return self.class_counts[1] / max(1, sum(self.class_counts))

    def as_leaf(self) -> "TreeNode":
        if self.is_leaf:
            return self
        return TreeNode(self.class_counts, self.impurity, self.n_samples)

    def walk(self) -> Iterator["TreeNode"]:
        """Preorder traversal."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)


def leaf_count(tree: TreeNode) -> int:
    return sum(1 for n in tree.walk() if n.is_leaf)


def tree_depth(tree: TreeNode) -> int:
    if tree.is_leaf:
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def best_split(
    scores: np.ndarray,
    labels: np.ndarray,
    candidate_fpcs: Sequence[int],
    criterion: str = "gini",
    min_leaf: int = 1,
) -> Optional[SplitRule]:
    X = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    n = y.size
    counts = np.bincount(y, minlength=2)
    if n < 2 or np.count_nonzero(counts) < 2:
        return None
    parent = impurity(counts, criterion)

    best: Optional[SplitRule] = None
    best_gain = 0.0
    n_left = np.arange(1, n)
    n_right = n - n_left
    for k in sorted(int(c) for c in candidate_fpcs):
        order = np.argsort(X[:, k], kind="stable")
        xs = X[order, k]
        left1 = np.cumsum(y[order])[:-1]
        left0 = n_left - left1
        right1 = counts[1] - left1
        right0 = n_right - right1
        valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        gain = (
            parent
            - (n_left / n) * _impurity_vec(left0, left1, criterion)
            - (n_right / n) * _impurity_vec(right0, right1, criterion)
        )
        gain = np.where(valid, gain, -np.inf)
        top = gain.max()
        i = int(np.flatnonzero(gain >= top - _TIE_EPS)[0])
        if gain[i] > best_gain + _TIE_EPS:
            lo, hi = xs[i], xs[i + 1]
            theta = (lo + hi) / 2.0
            if not lo <= theta < hi:
                theta = lo
            best = SplitRule(fpc_index=k, threshold=float(theta), decrease=float(gain[i]))
            best_gain = float(gain[i])
    return best


def grow_tree(
    scores: np.ndarray,
    labels: np.ndarray,
    config: ForestConfig,
    rng: np.random.Generator,
    candidate_log: Optional[List[Tuple[int, ...]]] = None,
) -> TreeNode:
    """Grow one unpruned tree; a fresh set of mtry candidate FPCs is drawn at every split."""
    X = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if y.size < 1:
        raise EmptyNode("cannot grow a tree on zero observations")
    n_features = X.shape[1]
    m = resolve_mtry(config, n_features)
    n_root = y.size

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        counts = np.bincount(y[idx], minlength=2)
        cc = (int(counts[0]), int(counts[1]))
        imp = impurity(counts, config.criterion)
        leaf = TreeNode(cc, imp, int(idx.size))
        if imp == 0.0 or idx.size < 2 * config.min_node_size:
            return leaf
        if config.max_depth is not None and depth >= config.max_depth:
            return leaf
        candidates = np.sort(rng.choice(n_features, size=m, replace=False))
        if candidate_log is not None:
            candidate_log.append(tuple(int(c) for c in candidates))
        rule = best_split(X[idx], y[idx], candidates, config.criterion, config.min_node_size)
        if rule is None:
            return leaf
        go_left = X[idx, rule.fpc_index] <= rule.threshold
        return TreeNode(
            cc,
            imp,
            int(idx.size),
            rule=rule,
            left=build(idx[go_left], depth + 1),
            right=build(idx[~go_left], depth + 1),
            weighted_decrease=rule.decrease * idx.size / n_root,
        )

    return build(np.arange(n_root), 0)


def _subtree_cost(node: TreeNode, n_root: int) -> Tuple[float, int]:
    if node.is_leaf:
        return node.impurity * node.n_samples / n_root, 1
    cl, ll = _subtree_cost(node.left, n_root)
    cr, lr = _subtree_cost(node.right, n_root)
    return cl + cr, ll + lr


def _weakest_link(root: TreeNode) -> Tuple[float, Optional[TreeNode]]:
    n_root = root.n_samples
    best_g, best_node = math.inf, None
    for node in root.walk():
        if node.is_leaf:
            continue
        sub, leaves = _subtree_cost(node, n_root)
        g = (node.impurity * node.n_samples / n_root - sub) / (leaves - 1)
        if g < best_g:
            best_g, best_node = g, node
    return best_g, best_node


def _collapse(node: TreeNode, target: TreeNode) -> TreeNode:
    if node is target:
        return node.as_leaf()
    if node.is_leaf:
        return node
    left = _collapse(node.left, target)
    right = _collapse(node.right, target)
    if left is node.left and right is node.right:
        return node
    return replace(node, left=left, right=right)


def prune_tree(tree: TreeNode, complexity_alpha: float) -> TreeNode:
    """Weakest-link cost-complexity pruning.

    Repeatedly collapses the internal node with the smallest per-leaf cost
    decrease g(t) = (R(t) - R(T_t)) / (|T_t| - 1) while g(t) <= alpha, where
    R is node impurity weighted by the node's sample share.
    """
    if complexity_alpha < 0:
        raise ValueError("complexity_alpha must be nonnegative")
    root = tree
    while not root.is_leaf:
        g, node = _weakest_link(root)
        if node is None or g > complexity_alpha:
            break
        root = _collapse(root, node)
    return root


@dataclass(frozen=True, eq=False)
class _FlatTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_class: np.ndarray
    leaf_fraction: np.ndarray


def _flatten(root: TreeNode) -> _FlatTree:
    nodes: List[TreeNode] = list(root.walk())
    pos = {id(n): i for i, n in enumerate(nodes)}
    size = len(nodes)
    feature = np.full(size, -1, dtype=np.intp)
    threshold = np.zeros(size)
    left = np.full(size, -1, dtype=np.intp)
    right = np.full(size, -1, dtype=np.intp)
    leaf_class = np.zeros(size, dtype=np.int8)
    leaf_fraction = np.zeros(size)
    for i, n in enumerate(nodes):
        leaf_class[i] = n.predicted_class
        leaf_fraction[i] = n.class_fraction
        if not n.is_leaf:
            feature[i] = n.rule.fpc_index
            threshold[i] = n.rule.threshold
            left[i] = pos[id(n.left)]
            right[i] = pos[id(n.right)]
    return _FlatTree(feature, threshold, left, right, leaf_class, leaf_fraction)


def _apply(flat: _FlatTree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.intp)
    active = np.flatnonzero(flat.feature[node] >= 0)
    while active.size:
        cur = node[active]
        go_left = X[active, flat.feature[cur]] <= flat.threshold[cur]
        node[active] = np.where(go_left, flat.left[cur], flat.right[cur])
        active = active[flat.feature[node[active]] >= 0]
    return node


def tree_predict(tree: TreeNode, scores: np.ndarray) -> np.ndarray:
    flat = _flatten(tree)
    X = np.atleast_2d(np.asarray(scores, dtype=float))
    return flat.leaf_class[_apply(flat, X)].astype(int)


@dataclass(frozen=True, eq=False)
class FunctionalRandomForest:
    trees: List[TreeNode]
    config: ForestConfig
    n_features: int
    bootstrap_indices: Optional[List[np.ndarray]] = None
    n_train: int = 0
    classes: Tuple[int, int] = (0, 1)
    _flat: List[_FlatTree] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.trees) != self.config.n_trees:
            raise ValueError(f"forest holds {len(self.trees)} trees, config says {self.config.n_trees}")
        for root in self.trees:
            for node in root.walk():
                if not node.is_leaf and not 0 <= node.rule.fpc_index < self.n_features:
                    raise ValueError(f"split on FPC index {node.rule.fpc_index} but K={self.n_features}")
        object.__setattr__(self, "_flat", [_flatten(t) for t in self.trees])

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"score rows must have {self.n_features} entries, got {X.shape[1]}")
        return X

    def tree_votes(self, X: np.ndarray) -> np.ndarray:
        """M x N matrix of per-tree class predictions."""
        X = self._check(X)
        return np.stack([f.leaf_class[_apply(f, X)] for f in self._flat])


def _fit_one(X: np.ndarray, y: np.ndarray, config: ForestConfig, index: int):
    rng = rng_stream(config.seed, index)
    n = y.size
    if config.bootstrap:
        bag = rng.integers(0, n, size=n)
        root = grow_tree(X[bag], y[bag], config, rng)
        return root, bag
    return grow_tree(X, y, config, rng), None


def fit_forest(
    scores: np.ndarray,
    labels: np.ndarray,
    config: Optional[ForestConfig] = None,
    n_jobs: Optional[int] = None,
) -> FunctionalRandomForest:
    config = config or ForestConfig()
    X = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("scores must be N x K with one label per row")
    if y.size < 2 or np.unique(y).size < 2:
        raise SingleClassData("forest training needs at least two observations of both classes")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    m = resolve_mtry(config, X.shape[1])
    config = config.model_copy(update={"mtry": m})

    workers = n_workers(n_jobs)
    log.info("fitting %d trees (mtry=%d of K=%d, %s) on %d workers", config.n_trees, m, X.shape[1], config.criterion, workers)
    grown = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_fit_one)(X, y, config, t) for t in range(config.n_trees)
    )
    trees = [root for root, _ in grown]
    bags = [bag for _, bag in grown] if config.bootstrap else None
    return FunctionalRandomForest(
        trees=trees, config=config, n_features=X.shape[1], bootstrap_indices=bags, n_train=int(y.size)
    )


def fit_tree(
    scores: np.ndarray,
    labels: np.ndarray,
    prune_alpha: float = 0.0,
    config: Optional[ForestConfig] = None,
) -> TreeNode:
    """Single FCT on the full sample with every FPC as a candidate, then pruned."""
    X = np.asarray(scores, dtype=float)
    base = config or ForestConfig()
    config = base.model_copy(update={"n_trees": 1, "mtry": X.shape[1], "bootstrap": False})
    root = grow_tree(X, labels, config, rng_stream(config.seed, 0))
    return prune_tree(root, prune_alpha) if prune_alpha > 0 else root


def predict_probas(forest: FunctionalRandomForest, scores: np.ndarray) -> np.ndarray:
    """Probability of class 1 per row: vote fraction, or mean leaf fraction when configured."""
    X = forest._check(scores)
    if forest.config.probability == "leaf":
        acc = np.zeros(X.shape[0])
        for f in forest._flat:
            acc += f.leaf_fraction[_apply(f, X)]
        return acc / forest.n_trees
    return forest.tree_votes(X).sum(axis=0, dtype=np.int64) / forest.n_trees


def predict_labels(forest: FunctionalRandomForest, scores: np.ndarray) -> np.ndarray:
    """Mode of the tree votes; an even split goes to class 0."""
    votes = forest.tree_votes(scores).sum(axis=0, dtype=np.int64)
    return (2 * votes > forest.n_trees).astype(int)


def predict_proba(forest: FunctionalRandomForest, score_row: Sequence[float]) -> float:
    row = np.asarray(score_row, dtype=float)
    if row.ndim != 1:
        raise ValueError("predict_proba takes a single score row")
    return float(predict_probas(forest, row[None, :])[0])


def predict_label(forest: FunctionalRandomForest, score_row: Sequence[float]) -> int:
    row = np.asarray(score_row, dtype=float)
    if row.ndim != 1:
        raise ValueError("predict_label takes a single score row")
    return int(predict_labels(forest, row[None, :])[0])


def accuracy(model: Union[FunctionalRandomForest, TreeNode], scores: np.ndarray, labels: np.ndarray) -> float:
    if isinstance(model, TreeNode):
        pred = tree_predict(model, scores)
    else:
        pred = predict_labels(model, scores)
    return float(np.mean(pred == np.asarray(labels, dtype=int)))


class OobReport(BaseModel):
    kind: Literal["oob"] = "oob"
    oob_error_rate: Optional[float]
    vote_fractions: List[Optional[float]]
    coverage: float
    n_covered: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"row": range(len(self.vote_fractions)), "oob_vote_fraction": self.vote_fractions})


def oob_votes(forest: FunctionalRandomForest, scores: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Class-1 votes and vote counts per row, using only trees for which the row is out of bag."""
    if forest.bootstrap_indices is None:
        raise NoBootstrapInfo("forest was trained without bootstrap; no out-of-bag sample exists")
    X = forest._check(scores)
    n = X.shape[0]
    if n != forest.n_train:
        raise ValueError(f"OOB evaluation needs the {forest.n_train} training rows, got {n}")
    ones = np.zeros(n, dtype=np.int64)
    seen = np.zeros(n, dtype=np.int64)
    for flat, bag in zip(forest._flat, forest.bootstrap_indices):
        oob = np.ones(n, dtype=bool)
        oob[bag] = False
        if not oob.any():
            continue
        ones[oob] += flat.leaf_class[_apply(flat, X[oob])]
        seen[oob] += 1
    return ones, seen


def oob_error(forest: FunctionalRandomForest, scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    ones, seen = oob_votes(forest, scores)
    covered = seen > 0
    if not covered.any():
        return None
    pred = (2 * ones > seen).astype(int)
    y = np.asarray(labels, dtype=int)
    return float(np.mean(pred[covered] != y[covered]))


def oob_evaluate(forest: FunctionalRandomForest, scores: np.ndarray, labels: np.ndarray) -> OobReport:
    ones, seen = oob_votes(forest, scores)
    covered = seen > 0
    fractions = [float(o / s) if s else None for o, s in zip(ones, seen)]
    err = oob_error(forest, scores, labels)
    if err is None:
        log.warning("no observation is out of bag for any tree; OOB error undefined")
    report = OobReport(
        oob_error_rate=err,
        vote_fractions=fractions,
        coverage=float(covered.mean()),
        n_covered=int(covered.sum()),
    )
    log.info("OOB error %s over %d/%d covered rows", err, report.n_covered, len(fractions))
    return report


def describe_tree(tree: TreeNode, class_names: Tuple[str, str] = CLASS_NAMES, precision: int = 3) -> str:
    """Indented text rendering of the split rules, FPCs numbered from 1."""
    lines: List[str] = []

    def emit(node: TreeNode, depth: int, prefix: str):
        pad = "  " * depth
        if node.is_leaf:
            name = class_names[node.predicted_class]
            lines.append(f"{pad}{prefix}-> {name} (p={node.class_fraction:.{precision}f}, n={node.n_samples})")
            return
        r = node.rule
        lines.append(f"{pad}{prefix}FPC{r.fpc_index + 1} <= {r.threshold:.{precision}g}  (n={node.n_samples})")
        emit(node.left, depth + 1, "yes: ")
        emit(node.right, depth + 1, "no:  ")

    emit(tree, 0, "")
    return "\n".join(lines)
