"""CART trees and the ensembles built on them: bagging, random forests
with variable importance, and gradient boosting."""
from dataclasses import dataclass

import numpy as np

from .dataframe import _frozen

_CLASS_KINDS = ("gini", "entropy")
_KINDS = _CLASS_KINDS + ("variance",)


def impurity(values, kind):
    """Node impurity on the n-weighted scale.

    gini = n*p*(1-p), entropy = -n*p*log(p), variance = sum((y-ybar)^2).
    Classification kinds expect 0/1 labels.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown impurity kind '{kind}'")
    v = np.asarray(values, dtype=float)
    n = len(v)
    if n == 0:
        raise ValueError("impurity needs at least one value")
    if kind == "variance":
        return float(np.sum((v - v.mean()) ** 2))
    p = float(v.mean())
    if kind == "gini":
        return n * p * (1.0 - p)
    return 0.0 if p <= 0.0 or p >= 1.0 else -n * p * np.log(p)


def _split_impurities(ys, kind):
    """Left/right impurity at every cut position 1..n-1 of the sorted node."""
    n = len(ys)
    nl = np.arange(1, n, dtype=float)
    nr = n - nl
    if kind == "variance":
        s1 = np.cumsum(ys)[:-1]
        s2 = np.cumsum(ys ** 2)[:-1]
        t1, t2 = float(np.sum(ys)), float(np.sum(ys ** 2))
        left = s2 - s1 ** 2 / nl
        right = (t2 - s2) - (t1 - s1) ** 2 / nr
        return left, right
    pos = np.cumsum(ys)[:-1]
    rpos = float(np.sum(ys)) - pos
    if kind == "gini":
        return pos * (nl - pos) / nl, rpos * (nr - rpos) / nr
    with np.errstate(divide="ignore", invalid="ignore"):
        left = np.where((pos > 0) & (pos < nl), -pos * np.log(pos / nl), 0.0)
        right = np.where((rpos > 0) & (rpos < nr), -rpos * np.log(rpos / nr), 0.0)
    return left, right


def best_split(x, y, columns=None, kind="variance", min_leaf=1):
    """Exhaustive midpoint scan; ties take the lowest column, then the lowest
    threshold. Returns (column, threshold, gain) or None when no split has
    positive gain."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if columns is None:
        columns = range(x.shape[1])
    parent = impurity(y, kind)
    best = None
    best_gain = 1e-12  # a split must strictly beat a zero-gain floor
    for c in sorted(columns):
        order = np.argsort(x[:, c], kind="stable")
        xs, ys = x[order, c], y[order]
        cut = xs[1:] > xs[:-1]
        nl = np.arange(1, n)
        ok = cut & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not np.any(ok):
            continue
        left, right = _split_impurities(ys, kind)
        gains = np.where(ok, parent - left - right, -np.inf)
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = float(gains[i])
            best = (c, float((xs[i] + xs[i + 1]) / 2.0), best_gain)
    return best


@dataclass(frozen=True)
class TreeConfig:
    kind: str = "variance"
    min_leaf: int = 1
    max_depth: int | None = None
    mtry: int | None = None

    def validate(self, p):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown impurity kind '{self.kind}'")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.mtry is not None and not 1 <= self.mtry <= p:
            raise ValueError(f"mtry must be in 1..{p}")


@dataclass(frozen=True)
class TreeNode:
    n: int
    impurity: float
    depth: int
    value: float  # leaf prediction: in-leaf frequency or mean
    column: int | None = None
    threshold: float | None = None
    gain: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self):
        return self.column is None


def _grow(x, y, config, rng, depth):
    n = len(y)
    node_imp = impurity(y, config.kind)
    value = float(y.mean())
    stop = (
        n < 2 * config.min_leaf
        or node_imp <= 0.0
        or (config.max_depth is not None and depth >= config.max_depth)
    )
    split = None
    if not stop:
        cols = None
        if config.mtry is not None and config.mtry < x.shape[1]:
            cols = rng.choice(x.shape[1], size=config.mtry, replace=False)
        split = best_split(x, y, cols, config.kind, config.min_leaf)
    if split is None:
        return TreeNode(n, node_imp, depth, value)
    c, thr, gain = split
    mask = x[:, c] <= thr
    left = _grow(x[mask], y[mask], config, rng, depth + 1)
    right = _grow(x[~mask], y[~mask], config, rng, depth + 1)
    return TreeNode(n, node_imp, depth, value, c, thr, gain, left, right)


def grow_tree(dm, config, seed=0):
    """Recursive CART fit on the design matrix columns."""
    config.validate(dm.x.shape[1])
    y = dm.y
    if config.kind in _CLASS_KINDS and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("classification trees need a 0/1 response")
    return _grow(dm.x, y, config, np.random.default_rng(seed), 0)


def _predict_into(node, x, rows, out):
    if node.is_leaf:
        out[rows] = node.value
        return
    mask = x[rows, node.column] <= node.threshold
    _predict_into(node.left, x, rows[mask], out)
    _predict_into(node.right, x, rows[~mask], out)


def tree_predict(node, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(len(x))
    _predict_into(node, x, np.arange(len(x)), out)
    return out


def tree_rules(node, column_names, indent=0):
    """Indented-text dump of the split rules and leaf values."""
    pad = "  " * indent
    if node.is_leaf:
        return f"{pad}leaf n={node.n} value={node.value:.4f}\n"
    name = column_names[node.column]
    out = f"{pad}{name} <= {node.threshold:g} (n={node.n} gain={node.gain:.4f})\n"
    out += tree_rules(node.left, column_names, indent + 1)
    out += f"{pad}{name} > {node.threshold:g}\n"
    out += tree_rules(node.right, column_names, indent + 1)
    return out


def tree_as_dict(node):
    if node.is_leaf:
        return {"n": node.n, "value": node.value}
    return {
        "n": node.n,
        "column": node.column,
        "threshold": node.threshold,
        "gain": node.gain,
        "left": tree_as_dict(node.left),
        "right": tree_as_dict(node.right),
    }


@dataclass(frozen=True)
class Forest:
    trees: tuple
    tree_seeds: tuple
    kind: str
    mtry: int | None
    oob_error: float | None
    impurity_importance: np.ndarray | None
    permutation_importance: np.ndarray | None
    column_names: tuple

    @property
    def is_classifier(self):
        return self.kind in _CLASS_KINDS


def forest_predict(forest, x):
    """Arithmetic mean of the member-tree predictions."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    total = np.zeros(len(x))
    for tree in forest.trees:
        total += tree_predict(tree, x)
    return total / len(forest.trees)


def _node_gain_sums(node, acc):
    if node.is_leaf:
        return
    acc[node.column] += node.gain
    _node_gain_sums(node.left, acc)
    _node_gain_sums(node.right, acc)


def _oob_risk(pred, y, classify):
    if classify:
        return float(np.mean((pred > 0.5) != (y > 0.5)))
    return float(np.mean((y - pred) ** 2))


def _fit_forest(dm, n_trees, config, seed, bootstrap, with_importance):
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    config.validate(dm.x.shape[1])
    x, y = dm.x, dm.y
    n, p = x.shape
    classify = config.kind in _CLASS_KINDS
    if classify and not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("classification forests need a 0/1 response")

    trees = []
    inbag = np.zeros((n_trees, n), dtype=bool)
    preds = np.zeros((n_trees, n))
    for t in range(n_trees):
        rng = np.random.default_rng((seed, t))
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        inbag[t, np.unique(rows)] = True
        tree = _grow(x[rows], y[rows], config, rng, 0)
        trees.append(tree)
        preds[t] = tree_predict(tree, x)

    oob_mask = ~inbag
    covered = oob_mask.any(axis=0)
    oob_error = None
    if covered.any():
        with np.errstate(invalid="ignore"):
            oob_pred = np.where(oob_mask, preds, 0.0).sum(axis=0) / oob_mask.sum(axis=0)
        oob_error = _oob_risk(oob_pred[covered], y[covered], classify)

    imp_gain = perm_imp = None
    if with_importance:
        acc = np.zeros(p)
        for tree in trees:
            _node_gain_sums(tree, acc)
        imp_gain = acc / (n_trees * n)

        rel = np.zeros((n_trees, p))
        usable = np.zeros(n_trees, dtype=bool)
        for t, tree in enumerate(trees):
            rows = np.nonzero(oob_mask[t])[0]
            if len(rows) == 0:
                continue
            b = _oob_risk(preds[t, rows], y[rows], classify)
            usable[t] = b > 0
            if not usable[t]:
                continue
            rng = np.random.default_rng((seed, n_trees + t))
            xo = x[rows]
            for k in range(p):
                xp = xo.copy()
                xp[:, k] = xp[rng.permutation(len(rows)), k]
                rel[t, k] = (_oob_risk(tree_predict(tree, xp), y[rows], classify) - b) / b
        perm_imp = (rel[usable].mean(axis=0) if usable.any() else np.zeros(p))

    return Forest(tuple(trees), tuple((seed, t) for t in range(n_trees)),
                  config.kind, config.mtry, oob_error,
                  None if imp_gain is None else _frozen(imp_gain),
                  None if perm_imp is None else _frozen(perm_imp),
                  dm.column_names)


def fit_bagging(dm, n_trees, config=None, seed=0, bootstrap=True,
                with_importance=False):
    """Bootstrap-aggregated trees grown on every column."""
    config = config or TreeConfig()
    if config.mtry is not None:
        config = TreeConfig(config.kind, config.min_leaf, config.max_depth, None)
    return _fit_forest(dm, n_trees, config, seed, bootstrap, with_importance)


def fit_random_forest(dm, n_trees, mtry=None, config=None, seed=0):
    """Bagging plus a fresh uniform draw of mtry candidate columns per split."""
    config = config or TreeConfig(kind="variance")
    p = dm.x.shape[1]
    if mtry is None:
        classify = config.kind in _CLASS_KINDS
        mtry = int(np.ceil(np.sqrt(p))) if classify else int(np.ceil(p / 3))
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must be in 1..{p}")
    config = TreeConfig(config.kind, config.min_leaf, config.max_depth, mtry)
    return _fit_forest(dm, n_trees, config, seed, True, True)


def importance(forest):
    """Rows of (variable, impurity importance, permutation importance)."""
    if forest.impurity_importance is None:
        raise ValueError("forest was fit without importance tables")
    return [
        (forest.column_names[k], float(forest.impurity_importance[k]),
         float(forest.permutation_importance[k]))
        for k in range(len(forest.column_names))
    ]


@dataclass(frozen=True)
class BoostedModel:
    init: float
    trees: tuple
    multipliers: np.ndarray
    shrinkage: float
    loss: str
    n_trees: int
    risk_trace: np.ndarray
    staged: np.ndarray | None
    column_names: tuple


def _sigmoid(z):
    # tanh form stays finite for any score
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logistic_risk(y_pm, score):
    return float(np.mean(np.logaddexp(0.0, -y_pm * score)))


def _leaf_newton(node, x, rows, resid, prob):
    """Rebuild the tree with per-leaf Newton steps for the logistic loss."""
    if node.is_leaf:
        r = float(np.sum(resid[rows]))
        w = float(np.sum(prob[rows] * (1.0 - prob[rows])))
        gamma = r / w if w > 1e-12 else 0.0
        return TreeNode(node.n, node.impurity, node.depth, gamma)
    mask = x[rows, node.column] <= node.threshold
    return TreeNode(node.n, node.impurity, node.depth, node.value,
                    node.column, node.threshold, node.gain,
                    _leaf_newton(node.left, x, rows[mask], resid, prob),
                    _leaf_newton(node.right, x, rows[~mask], resid, prob))


def fit_boosting(dm, loss="squared", n_trees=100, shrinkage=0.1, depth=2,
                 seed=0, min_leaf=10, subsample=1.0, keep_staged=False):
    """Gradient boosting with depth-limited variance trees on pseudo-residuals.

    Squared loss uses a per-tree line-search multiplier; logistic loss bakes
    per-leaf Newton steps into the tree and keeps the multiplier at one.
    """
    if loss not in ("squared", "logistic"):
        raise ValueError(f"unknown boosting loss '{loss}'")
    if not 0.0 < shrinkage <= 1.0:
        raise ValueError("shrinkage must be in (0, 1]")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if not 0.0 < subsample <= 1.0:
        raise ValueError("subsample must be in (0, 1]")
    x, y = dm.x, dm.y
    n = len(y)
    if loss == "logistic":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("logistic boosting needs a 0/1 response")
        ybar = min(max(float(y.mean()), 1e-12), 1 - 1e-12)
        m0 = float(np.log(ybar / (1.0 - ybar)))
        y_pm = 2.0 * y - 1.0
    else:
        m0 = float(y.mean())

    config = TreeConfig(kind="variance", min_leaf=min_leaf, max_depth=depth)
    rng = np.random.default_rng(seed)
    score = np.full(n, m0)
    trees, gammas, risks = [], [], []
    staged = [] if keep_staged else None

    def current_risk():
        if loss == "squared":
            return float(np.mean((y - score) ** 2) / 2.0)
        return _logistic_risk(y_pm, score)

    if depth == 0:
        risks.append(current_risk())
    else:
        for _ in range(n_trees):
            if loss == "squared":
                resid = y - score
                prob = None
            else:
                prob = _sigmoid(score)
                resid = y - prob
            rows = np.arange(n)
            if subsample < 1.0:
                rows = rng.choice(n, size=max(int(subsample * n), 1), replace=False)
            tree = _grow(x[rows], resid[rows], config, rng, 0)
            if loss == "logistic":
                tree = _leaf_newton(tree, x, rows, resid, prob)
                gamma = 1.0
            else:
                h = tree_predict(tree, x)
                hh = float(h @ h)
                gamma = float(h @ resid / hh) if hh > 1e-12 else 0.0
            contrib = tree_predict(tree, x)
            score = score + shrinkage * gamma * contrib
            trees.append(tree)
            gammas.append(gamma)
            risks.append(current_risk())
            if staged is not None:
                staged.append(score.copy())

    return BoostedModel(m0, tuple(trees), _frozen(np.asarray(gammas)),
                        shrinkage, loss, len(trees), _frozen(np.asarray(risks)),
                        None if staged is None else _frozen(np.asarray(staged)),
                        dm.column_names)


def boosting_predict(model, x, response=False):
    """Additive score m0 + nu * sum of gamma_k h_k(x); response=True maps a
    logistic score through the sigmoid."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    score = np.full(len(x), model.init)
    for tree, gamma in zip(model.trees, model.multipliers):
        score = score + model.shrinkage * gamma * tree_predict(tree, x)
    if response and model.loss == "logistic":
        return _sigmoid(score)
    return score
