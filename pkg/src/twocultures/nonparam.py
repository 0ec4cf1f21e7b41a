"""Kernel and neighborhood smoothers, smoother diagnostics, additive models."""
from dataclasses import dataclass, field

import numpy as np

from .dataframe import _frozen
from .linmod import LinearFit, _qr_solve


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


@dataclass(frozen=True)
class KernelSmoother:
    """Nadaraya-Watson smoother with a product kernel.

    bandwidth is a positive scalar or one value per predictor column.
    """

    kernel: str
    bandwidth: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.kernel not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel '{self.kernel}'")
        x = _frozen(_as_2d(self.x))
        h = np.asarray(self.bandwidth, dtype=float)
        if h.ndim == 0:
            h = np.full(x.shape[1], float(h))
        if h.shape != (x.shape[1],):
            raise ValueError("bandwidth must be scalar or one value per column")
        if np.any(h <= 0):
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "bandwidth", _frozen(h))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=float)))
        if len(self.y) != len(x):
            raise ValueError("x and y lengths disagree")


def _kernel_matrix(sm, queries):
    """Raw (unnormalized) kernel values, queries by training rows."""
    q = _as_2d(queries)
    u = (q[:, None, :] - sm.x[None, :, :]) / sm.bandwidth
    if sm.kernel == "gaussian":
        return np.exp(-0.5 * np.sum(u * u, axis=2))
    k = np.prod(np.maximum(1.0 - u * u, 0.0), axis=2)
    return 0.75 ** sm.x.shape[1] * k


def nw_weights(sm, queries):
    """Simplex weights at each query row; rows sum to one."""
    k = _kernel_matrix(sm, queries)
    tot = k.sum(axis=1)
    if np.any(tot <= 0.0):
        raise ValueError("empty neighborhood: all kernel weights are zero at a query")
    return k / tot[:, None]


def _query_block(queries, d):
    """Normalize queries to (m, d); report whether the input was a single point."""
    q = np.asarray(queries, dtype=float)
    if q.ndim == 0:
        return q[None, None], True
    if q.ndim == 1:
        return (q[None, :], True) if d > 1 else (q[:, None], False)
    return q, False


def nw_predict(sm, queries):
    q, single = _query_block(queries, sm.x.shape[1])
    out = nw_weights(sm, q) @ sm.y
    return float(out[0]) if single else out


def knn_predict(x, y, k, queries):
    """Mean response of the k nearest rows, Euclidean on standardized columns.

    Distance ties are broken by the lowest training row index.
    """
    x = _as_2d(x)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in 1..{n}")
    sd = x.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xs = x / sd
    q, single = _query_block(queries, x.shape[1])
    d2 = np.sum((q[:, None, :] / sd - xs[None, :, :]) ** 2, axis=2)
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    out = y[nearest].mean(axis=1)
    return float(out[0]) if single else out


def smoother_trace(model, xs=None):
    """Effective degrees of freedom: the trace of the linear map y -> fitted."""
    if isinstance(model, KernelSmoother):
        pts = model.x if xs is None else _as_2d(xs)
        w = nw_weights(model, pts)
        return float(np.trace(w))
    if isinstance(model, LinearFit):
        return float(model.df)
    raise TypeError(f"{type(model).__name__} is not a linear smoother")


def loocv_risk(x, y, kernel, h):
    """Leave-one-out squared risk via the linear-smoother shortcut."""
    sm = KernelSmoother(kernel, h, x, y)
    k = _kernel_matrix(sm, sm.x)
    tot = k.sum(axis=1)
    if np.any(tot <= 0.0):
        return np.inf
    w = k / tot[:, None]
    fitted = w @ sm.y
    denom = 1.0 - np.diag(w)
    if np.any(denom <= 1e-12):
        return np.inf
    return float(np.mean(((sm.y - fitted) / denom) ** 2))


def select_bandwidth(x, y, kernel, grid):
    """Bandwidth minimizing the LOOCV risk over the grid; ties take the smaller h."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ValueError("degenerate bandwidth grid")
    risks = np.array([loocv_risk(x, y, kernel, h) for h in grid])
    if not np.any(np.isfinite(risks)):
        raise ValueError("degenerate bandwidth grid: no finite LOOCV risk")
    best = np.min(risks)
    return float(np.min(grid[risks <= best + 1e-15]))


def _default_grid(col):
    span = float(col.max() - col.min())
    if span <= 0:
        span = 1.0
    return np.geomspace(span / 50.0, span, 12)


@dataclass(frozen=True)
class AdditiveComponent:
    name: str
    column: int
    x: np.ndarray
    targets: np.ndarray  # partial residuals the smoother interpolates
    bandwidth: float
    kernel: str
    center: float
    values: np.ndarray  # m_j at the training points, mean zero

    def __call__(self, xq):
        sm = KernelSmoother(self.kernel, self.bandwidth, self.x, self.targets)
        return nw_predict(sm, _as_2d(xq)) - self.center


@dataclass(frozen=True)
class AdditiveFit:
    components: tuple
    linear_beta: np.ndarray
    linear_columns: tuple  # design indices of the linear block
    column_names: tuple
    offset: float  # constant absorbed from component centering; 0 when an
    fitted: np.ndarray  # intercept column soaks it up instead
    residuals: np.ndarray
    sweeps: int
    converged: bool

    @property
    def intercept(self):
        for j, c in enumerate(self.linear_columns):
            if self.column_names[c] == "intercept":
                return float(self.offset + self.linear_beta[j])
        return float(self.offset)

    def predict(self, x_block):
        x_block = np.asarray(x_block, dtype=float)
        out = self.offset + x_block[:, list(self.linear_columns)] @ self.linear_beta
        for comp in self.components:
            out = out + comp(x_block[:, comp.column])
        return out

    def component_curve(self, name, grid=None):
        """(grid, value) samples of one component function, for export."""
        for comp in self.components:
            if comp.name == name:
                if grid is None:
                    grid = np.linspace(comp.x.min(), comp.x.max(), 100)
                grid = np.asarray(grid, dtype=float)
                return grid, comp(grid)
        raise KeyError(f"no smooth component named '{name}'")


def fit_additive(dm, smooth_terms, linear_terms=None, kernel="gaussian",
                 max_sweeps=50, tol=1e-6, refresh_every=5):
    """Backfitted additive model on design columns.

    Smooth terms are fit by Nadaraya-Watson with per-term LOOCV bandwidths
    (refreshed every ``refresh_every`` sweeps); the linear block (always
    including the intercept when present) is refit by least squares on its
    partial residual at the top of each sweep. Components are recentered to
    mean zero after every update.
    """
    if linear_terms is None:
        linear_terms = []
    linear_terms = list(linear_terms)
    if dm.has_intercept and "intercept" not in linear_terms:
        linear_terms = ["intercept"] + linear_terms
    overlap = set(smooth_terms) & set(linear_terms)
    if overlap:
        raise ValueError(f"terms cannot be both smooth and linear: {sorted(overlap)}")

    y = dm.y
    n = dm.n
    s_idx = [dm.column_index(nm) for nm in smooth_terms]
    l_idx = [dm.column_index(nm) for nm in linear_terms]
    if not s_idx and not l_idx:
        raise ValueError("additive model needs at least one term")
    xl = dm.x[:, l_idx] if l_idx else np.zeros((n, 0))

    cols = [dm.x[:, j] for j in s_idx]
    grids = [_default_grid(c) for c in cols]
    h = [None] * len(cols)
    m = [np.zeros(n) for _ in cols]
    targets = [None] * len(cols)
    centers = [0.0] * len(cols)
    beta = np.zeros(len(l_idx))
    has_i0 = "intercept" in linear_terms
    offset = 0.0  # explicit constant; stays 0 when an intercept column exists
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        delta = 0.0 if sweep > 1 else np.inf
        smooth_sum = np.sum(m, axis=0) if m else 0.0
        if not has_i0:
            lin_prev = xl @ beta if l_idx else 0.0
            offset_new = float(np.mean(y - smooth_sum - lin_prev))
            if sweep > 1:
                delta = max(delta, abs(offset_new - offset))
            offset = offset_new
        if l_idx:
            beta_new, _ = _qr_solve(xl, y - offset - smooth_sum, tuple(linear_terms))
            if sweep > 1:
                delta = max(delta, float(np.max(np.abs(xl @ (beta_new - beta)))))
            beta = beta_new
        lin = xl @ beta if l_idx else 0.0
        for j, col in enumerate(cols):
            partial = y - offset - lin - (np.sum(m, axis=0) - m[j])
            if h[j] is None or (sweep - 1) % refresh_every == 0:
                h[j] = select_bandwidth(col, partial, kernel, grids[j])
            sm = KernelSmoother(kernel, h[j], col, partial)
            raw = nw_weights(sm, sm.x) @ partial
            center = float(raw.mean())
            new_m = raw - center
            delta = max(delta, float(np.max(np.abs(new_m - m[j]))))
            m[j] = new_m
            targets[j] = partial
            centers[j] = center
        if sweep > 1 and delta < tol:
            converged = True
            break

    lin = xl @ beta if l_idx else np.zeros(n)
    fitted = offset + lin + (np.sum(m, axis=0) if m else 0.0)
    comps = tuple(
        AdditiveComponent(smooth_terms[j], s_idx[j], cols[j], targets[j],
                          float(h[j]), kernel, centers[j], m[j])
        for j in range(len(cols))
    )
    return AdditiveFit(comps, beta, tuple(l_idx), dm.column_names, float(offset),
                       fitted, y - fitted, sweep, converged)
