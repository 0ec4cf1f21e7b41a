"""Soft-margin support vector machines trained in the dual by pairwise
coordinate ascent on the maximally violating pair."""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .dataframe import _frozen


def rbf_gamma(x):
    """Default kernel width 1/(p * var(x)); var over all matrix entries."""
    v = float(np.var(x))
    return 1.0 / (x.shape[1] * v) if v > 0 else 1.0


def kernel_value(kind, gamma, a, b):
    if kind == "linear":
        return a @ b.T if a.ndim > 1 or b.ndim > 1 else float(a @ b)
    aa = np.atleast_2d(a)
    bb = np.atleast_2d(b)
    d2 = np.sum(aa ** 2, axis=1)[:, None] + np.sum(bb ** 2, axis=1)[None, :] \
        - 2.0 * aa @ bb.T
    k = np.exp(-gamma * np.maximum(d2, 0.0))
    return k if (a.ndim > 1 or b.ndim > 1) else float(k[0, 0])


class _KernelCache:
    """Row-wise kernel values with an LRU budget on cached rows."""

    def __init__(self, x, kind, gamma, budget_entries=3_000_000):
        self.x = x
        self.kind = kind
        self.gamma = gamma
        self.rows = OrderedDict()
        self.max_rows = max(2, budget_entries // max(len(x), 1))

    def row(self, i):
        got = self.rows.get(i)
        if got is not None:
            self.rows.move_to_end(i)
            return got
        r = kernel_value(self.kind, self.gamma, self.x[i][None, :], self.x)[0]
        self.rows[i] = r
        if len(self.rows) > self.max_rows:
            self.rows.popitem(last=False)
        return r


@dataclass(frozen=True)
class SvmModel:
    alpha: np.ndarray
    bias: float
    c: float
    kernel: str
    gamma: float | None
    support: np.ndarray  # training row indices with alpha > 0
    support_x: np.ndarray
    support_coef: np.ndarray  # alpha_i * y_i on the support rows
    n_iter: int
    converged: bool
    column_names: tuple

    def as_dict(self):
        return {
            "kernel": self.kernel,
            "gamma": self.gamma,
            "c": self.c,
            "bias": self.bias,
            "support_rows": [int(i) for i in self.support],
            "alpha": [float(a) for a in self.alpha[self.support]],
            "support_x": [[float(v) for v in row] for row in self.support_x],
            "support_coef": [float(v) for v in self.support_coef],
        }


def _pm_labels(dm):
    y = np.asarray(dm.y, dtype=float)
    vals = set(np.unique(y))
    if vals <= {0.0, 1.0}:
        y = dm.y_pm
        vals = set(np.unique(y))
    if not vals <= {-1.0, 1.0}:
        raise ValueError("svm needs a two-class 0/1 or -1/+1 response")
    if len(vals) < 2:
        raise ValueError("svm needs both classes present")
    return y


def fit_svm(dm, c, kernel="linear", gamma=None, tol=1e-3, max_iter=None, seed=0):
    """Dual coordinate ascent over maximally violating pairs.

    The pair search is deterministic; ``seed`` is accepted for interface
    symmetry with the other trainers. Stops when the worst KKT violation
    drops below tol.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    if kernel not in ("linear", "rbf"):
        raise ValueError(f"unknown kernel '{kernel}'")
    y = _pm_labels(dm)
    x = dm.x
    n = len(y)
    if gamma is None and kernel == "rbf":
        gamma = rbf_gamma(x)
    cache = _KernelCache(x, kernel, gamma)
    diag = np.array([kernel_value(kernel, gamma, x[i], x[i]) for i in range(n)])
    if max_iter is None:
        max_iter = max(20_000, 200 * n)

    alpha = np.zeros(n)
    f = np.zeros(n)  # sum_j alpha_j y_j K(x_j, x_i), bias excluded
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        v = y - f
        up = ((y > 0) & (alpha < c - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y > 0) & (alpha > 1e-12)) | ((y < 0) & (alpha < c - 1e-12))
        if not up.any() or not low.any():
            converged = True
            break
        vi_masked = np.where(up, v, -np.inf)
        vj_masked = np.where(low, v, np.inf)
        i = int(np.argmax(vi_masked))
        j = int(np.argmin(vj_masked))
        gap = float(v[i] - v[j])
        if gap < tol:
            converged = True
            break
        ki = cache.row(i)
        kj = cache.row(j)
        quad = float(diag[i] + diag[j] - 2.0 * ki[j])
        t = gap / max(quad, 1e-12)
        # box limits along the direction d_alpha_i = t*y_i, d_alpha_j = -t*y_j
        hi = (c - alpha[i] if y[i] > 0 else alpha[i])
        hj = (alpha[j] if y[j] > 0 else c - alpha[j])
        t = min(t, hi, hj)
        alpha[i] += t * y[i]
        alpha[j] -= t * y[j]
        f = f + t * (ki - kj)

    v = y - f
    free = (alpha > 1e-8) & (alpha < c - 1e-8)
    if free.any():
        bias = float(v[free].mean())
    else:
        up = ((y > 0) & (alpha < c - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y > 0) & (alpha > 1e-12)) | ((y < 0) & (alpha < c - 1e-12))
        hi = float(np.max(v[up])) if up.any() else 0.0
        lo = float(np.min(v[low])) if low.any() else 0.0
        bias = (hi + lo) / 2.0
    support = np.nonzero(alpha > 1e-8)[0]
    return SvmModel(_frozen(alpha), bias, float(c), kernel, gamma,
                    _frozen(support), _frozen(x[support]),
                    _frozen(alpha[support] * y[support]), it, converged,
                    dm.column_names)


def decision_value(model, queries):
    """f(x) = sum_i alpha_i y_i K(x_i, x) + b over the support rows."""
    q = np.asarray(queries, dtype=float)
    single = q.ndim == 1
    qq = np.atleast_2d(q)
    if len(model.support) == 0:
        out = np.full(len(qq), model.bias)
    else:
        k = kernel_value(model.kernel, model.gamma, qq, model.support_x)
        out = k @ model.support_coef + model.bias
    return float(out[0]) if single else out


def svm_predict(model, queries):
    d = decision_value(model, queries)
    return float(np.sign(d)) if np.isscalar(d) else np.sign(d)


def hinge_risk(model, dm):
    y = _pm_labels(dm)
    margins = y * decision_value(model, dm.x)
    return float(np.mean(np.maximum(0.0, 1.0 - margins)))


def dual_objective(model, dm):
    """W(alpha) = sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij."""
    y = _pm_labels(dm)
    coef = model.alpha * y
    k = kernel_value(model.kernel, model.gamma, dm.x, dm.x)
    return float(model.alpha.sum() - 0.5 * coef @ k @ coef)
