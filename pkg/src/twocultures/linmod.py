"""Parametric estimators: OLS and ridge through QR, lasso paths by coordinate
descent, exhaustive best subset, GLMs via IRLS, SGD with pluggable losses, and
stepwise selection on information criteria."""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, log_ndtr, ndtr

from .evaluation import loss as loss_values


@dataclass(frozen=True)
class LinearFit:
    beta: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    df: float
    column_names: tuple
    sigma2_hat: float = None
    vcov: np.ndarray = None
    log_lik: float = None
    deviance: float = None  # residual sum of squares for least-squares fits
    r2: float = None
    adj_r2: float = None
    aic: float = None
    aicc: float = None
    bic: float = None
    cp: float = None
    risk_trace: np.ndarray = None

    @property
    def n(self):
        return len(self.fitted)

    def predict(self, x):
        return np.asarray(x, dtype=float) @ self.beta

    def as_dict(self):
        d = {"coefficients": dict(zip(self.column_names, map(float, self.beta))),
             "df": float(self.df)}
        for k in ("sigma2_hat", "log_lik", "deviance", "r2", "adj_r2", "aic", "aicc", "bic", "cp"):
            v = getattr(self, k)
            d[k] = None if v is None else float(v)
        return d


def _qr_solve(x, y, column_names):
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need n > p, got n={n}, p={p}")
    q, r = np.linalg.qr(x)
    d = np.abs(np.diag(r))
    bad = np.nonzero(d <= 1e-10 * (d.max() if d.size else 1.0))[0]
    if bad.size:
        raise ValueError(f"design is rank deficient: column '{column_names[bad[0]]}' "
                         "is linearly dependent on the others")
    beta = solve_triangular(r, q.T @ y)
    return beta, r


def fit_ols(dm):
    """Ordinary least squares through the QR factorization.

    The normal equations are solved by back-substitution on the R factor, and
    the coefficient covariance comes from the same factor; the cross-product
    inverse is never formed explicitly.
    """
    x, y = dm.x, dm.y
    n, p = x.shape
    beta, r = _qr_solve(x, y, dm.column_names)
    fitted = x @ beta
    resid = y - fitted
    rss = float(resid @ resid)
    sigma2 = rss / (n - p)
    rinv = solve_triangular(r, np.eye(p))
    vcov = sigma2 * (rinv @ rinv.T)
    if dm.has_intercept:
        tss = float(np.sum((y - y.mean()) ** 2))
    else:
        tss = float(y @ y)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / (n - p) if n > p else None
    # gaussian likelihood at the MLE variance rss/n
    log_lik = -0.5 * n * (np.log(2.0 * np.pi * rss / n) + 1.0) if rss > 0 else np.inf
    fit = LinearFit(beta, fitted, resid, float(p), dm.column_names,
                    sigma2_hat=sigma2, vcov=vcov, log_lik=float(log_lik),
                    deviance=rss, r2=r2, adj_r2=adj)
    return _with_ic(fit, _ic_or_none(fit))


def _with_ic(fit, ic):
    object.__setattr__(fit, "aic", ic["aic"])
    object.__setattr__(fit, "aicc", ic["aicc"])
    object.__setattr__(fit, "bic", ic["bic"])
    object.__setattr__(fit, "cp", ic["cp"])
    return fit


def _ic_or_none(fit):
    """Criteria for a freshly built fit; AICc degrades to None on tiny samples
    where its correction term is undefined."""
    try:
        return information_criteria(fit)
    except ValueError:
        dev, p, n = fit.deviance, fit.df, fit.n
        rss = float(fit.residuals @ fit.residuals)
        cp = rss / n + 2.0 * fit.sigma2_hat * p / n if fit.sigma2_hat is not None else None
        return {"aic": dev + 2.0 * p, "aicc": None, "bic": dev + np.log(n) * p, "cp": cp}


def information_criteria(fit):
    """AIC / AICc / BIC from the fit's deviance and effective dimension, plus
    Mallows Cp for linear smoothers.

    AIC = deviance + 2p, AICc = deviance + 2pn/(n-p-1), BIC = deviance +
    log(n)p, with p = df. Least-squares fits carry deviance = RSS, so their
    criteria are on the residual-sum scale (comparisons within one family are
    what the selection routines use); GLM fits carry -2 log-likelihood.
    Cp = empirical risk + 2 sigma2 df / n when a residual variance estimate is
    available, else None.
    """
    dev = fit.deviance
    p = fit.df
    n = fit.n
    out = {"aic": dev + 2.0 * p, "bic": dev + np.log(n) * p}
    if n <= p + 1:
        raise ValueError(f"AICc undefined: need n > p+1, got n={n}, p={p}")
    out["aicc"] = dev + 2.0 * p * n / (n - p - 1.0)
    sigma2 = getattr(fit, "sigma2_hat", None)
    if sigma2 is not None:
        rss = float(fit.residuals @ fit.residuals)
        out["cp"] = rss / n + 2.0 * sigma2 * p / n
    else:
        out["cp"] = None
    return out


# ---------------------------------------------------------------------------
# ridge and lasso on the standardized design


def _penalized_block(dm, standardize):
    """Split the design into the penalized block and the centered response.

    Non-intercept columns are centered whenever an intercept is present, and
    scaled to ||z_j||^2 = n when ``standardize`` is on, so the coordinate
    algebra matches the orthonormal-design closed forms.
    """
    if dm.has_intercept:
        i0 = dm.column_index("intercept")
        keep = [j for j in range(dm.p) if j != i0]
        ybar = float(dm.y.mean())
    else:
        i0, keep, ybar = None, list(range(dm.p)), 0.0
    yc = dm.y - ybar
    z = np.array(dm.x[:, keep])
    means = np.zeros(len(keep))
    scales = np.ones(len(keep))
    if i0 is not None:
        means = z.mean(axis=0)
        z = z - means
    if standardize:
        sd = np.sqrt((z * z).mean(axis=0))
        scales = np.where(sd > 1e-12, sd, 1.0)
        z = z / scales
    return i0, keep, z, yc, ybar, means, scales


def _restore_beta(dm, i0, keep, b, ybar, means, scales):
    """Map penalized-block coefficients back to the original design scale and
    rebuild the intercept."""
    beta = np.zeros(dm.p)
    slopes = b / scales
    beta[keep] = slopes
    if i0 is not None:
        beta[i0] = ybar - float(means @ slopes)
    return beta


def fit_ridge(dm, lam, standardize=True):
    """Ridge on the standardized non-intercept columns; the intercept is never
    penalized. df is the trace of the ridge smoother."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    i0, keep, z, yc, ybar, means, scales = _penalized_block(dm, standardize)
    n = dm.n
    gram = z.T @ z / n
    b = np.linalg.solve(gram + lam * np.eye(len(keep)), z.T @ yc / n)
    beta = _restore_beta(dm, i0, keep, b, ybar, means, scales)
    fitted = dm.x @ beta
    resid = dm.y - fitted
    rss = float(resid @ resid)
    sv = np.linalg.svd(z, compute_uv=False)
    df = float(np.sum(sv ** 2 / (sv ** 2 + n * lam))) if lam > 0 else float(len(keep))
    if i0 is not None:
        df += 1.0
    if dm.has_intercept:
        tss = float(np.sum((dm.y - dm.y.mean()) ** 2))
    else:
        tss = float(dm.y @ dm.y)
    sigma2 = rss / max(n - df, 1.0)
    fit = LinearFit(beta, fitted, resid, df, dm.column_names,
                    sigma2_hat=sigma2, deviance=rss,
                    r2=1.0 - rss / tss if tss > 0 else 1.0)
    return _with_ic(fit, _ic_or_none(fit))


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    betas: np.ndarray  # p x len(lambdas), original scale
    betas_std: np.ndarray  # penalized-block coefficients on the solver scale
    active_sets: tuple  # per-lambda tuple of design column indices
    n_iter: np.ndarray
    converged: np.ndarray
    column_names: tuple
    penalized_columns: tuple  # design indices of the penalized block

    def beta_at(self, i):
        return self.betas[:, i]

    def entry_order(self):
        """Design column names ordered by first activation along the path."""
        first = {}
        for i, active in enumerate(self.active_sets):
            for j in active:
                first.setdefault(j, i)
        ranked = sorted(first.items(), key=lambda kv: (kv[1], kv[0]))
        return [self.column_names[j] for j, _ in ranked]


def lambda_max(dm, standardize=True):
    _, _, z, yc, _, _, _ = _penalized_block(dm, standardize)
    return float(np.max(np.abs(z.T @ yc)) / dm.n)


def fit_lasso(dm, lambdas=None, standardize=True, tol=1e-7, max_sweeps=100000):
    """Lasso path by cyclic coordinate descent with warm starts.

    The objective is (1/2n)·||y - a - Z b||^2 + lambda·||b||_1 on the
    standardized penalized block, so on designs with ||z_j||^2 = n the
    coordinate update is the textbook soft-threshold of the OLS coordinate.
    Coefficients are reported back on the original scale. The default grid is
    100 log-spaced points from lambda_max down to 0.001·lambda_max.
    """
    i0, keep, z, yc, ybar, means, scales = _penalized_block(dm, standardize)
    n = dm.n
    pb = len(keep)
    if lambdas is None:
        lmax = float(np.max(np.abs(z.T @ yc)) / n)
        if lmax <= 0:
            lmax = 1.0
        lambdas = np.geomspace(lmax, 0.001 * lmax, 100)
    else:
        lambdas = np.asarray(lambdas, dtype=float)
        if np.any(np.diff(lambdas) > 0):
            raise ValueError("lambda grid must be non-increasing")
    norms = (z * z).sum(axis=0) / n  # 1.0 on standardized designs
    live = norms > 1e-12
    b = np.zeros(pb)
    r = yc.copy()  # residual, kept in sync with b
    betas_std = np.empty((pb, len(lambdas)))
    betas = np.empty((dm.p, len(lambdas)))
    active_sets = []
    iters = np.empty(len(lambdas), dtype=np.int64)
    converged = np.empty(len(lambdas), dtype=bool)
    for li, lam in enumerate(lambdas):
        done = False
        sweeps = 0
        while sweeps < max_sweeps:
            sweeps += 1
            delta = 0.0
            for j in range(pb):
                if not live[j]:
                    continue
                old = b[j]
                rho = old * norms[j] + z[:, j] @ r / n
                new = _soft(rho, lam) / norms[j]
                if new != old:
                    r += z[:, j] * (old - new)
                    b[j] = new
                    delta = max(delta, abs(new - old))
            if delta < tol:
                done = True
                break
        iters[li] = sweeps
        converged[li] = done
        betas_std[:, li] = b
        betas[:, li] = _restore_beta(dm, i0, keep, b, ybar, means, scales)
        active_sets.append(tuple(keep[j] for j in range(pb) if b[j] != 0.0))
    return LassoPath(np.asarray(lambdas), betas, betas_std, tuple(active_sets),
                     iters, converged, dm.column_names, tuple(keep))


def best_subset(dm, max_p=15):
    """Exhaustive minimum-RSS subset per support size; the enumeration oracle
    for lasso and stepwise. Intercept, when present, is always included."""
    if dm.has_intercept:
        i0 = dm.column_index("intercept")
        cand = [j for j in range(dm.p) if j != i0]
        base = [i0]
    else:
        cand = list(range(dm.p))
        base = []
    if len(cand) > max_p:
        raise ValueError(f"{len(cand)} candidate columns exceed max_p={max_p}; "
                         "use stepwise or the lasso instead")
    out = {}
    y = dm.y
    for size in range(len(cand) + 1):
        best = None
        for combo in itertools.combinations(cand, size):
            cols = base + list(combo)
            if cols:
                x = dm.x[:, cols]
                beta, *_ = np.linalg.lstsq(x, y, rcond=None)
                rss = float(np.sum((y - x @ beta) ** 2))
            else:
                rss = float(y @ y)
            if best is None or rss < best[1]:
                best = (combo, rss)
        out[size] = (tuple(dm.column_names[j] for j in best[0]), best[1])
    return out


# ---------------------------------------------------------------------------
# GLM / IRLS


class _Family:
    name = None

    def init_mu(self, y):
        raise NotImplementedError

    def link(self, mu):
        raise NotImplementedError

    def inverse(self, eta):
        raise NotImplementedError

    def working(self, eta, mu, y):
        """Weights and working response of one scoring step."""
        raise NotImplementedError

    def deviance(self, y, mu):
        raise NotImplementedError


class _Gaussian(_Family):
    name = "gaussian-identity"

    def init_mu(self, y):
        return y.astype(float)

    def link(self, mu):
        return mu

    def inverse(self, eta):
        return eta

    def working(self, eta, mu, y):
        return np.ones_like(eta), y

    def deviance(self, y, mu):
        return float(np.sum((y - mu) ** 2))


class _Logit(_Family):
    name = "binomial-logit"

    def init_mu(self, y):
        return (y + 0.5) / 2.0

    def link(self, mu):
        return np.log(mu / (1.0 - mu))

    def inverse(self, eta):
        return 1.0 / (1.0 + np.exp(-eta))

    def working(self, eta, mu, y):
        w = mu * (1.0 - mu)
        w = np.maximum(w, 1e-10)
        return w, eta + (y - mu) / w

    def deviance(self, y, mu):
        # -2 log-likelihood; the saturated model contributes 0 for 0/1 data
        return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log1p(-mu)))


class _Probit(_Family):
    name = "binomial-probit"

    def init_mu(self, y):
        return (y + 0.5) / 2.0

    def link(self, mu):
        from scipy.special import ndtri

        return ndtri(mu)

    def inverse(self, eta):
        return ndtr(eta)

    def working(self, eta, mu, y):
        log_phi = -0.5 * eta ** 2 - 0.5 * np.log(2.0 * np.pi)
        la, lb = log_ndtr(eta), log_ndtr(-eta)
        w = np.exp(2.0 * log_phi - la - lb)  # phi^2 / (Phi (1-Phi)), stable far out
        w = np.maximum(w, 1e-10)
        # (y - mu)/phi via log-space Mills ratios, exact for 0/1 responses
        adj = np.where(y > 0.5, np.exp(lb - log_phi), -np.exp(la - log_phi))
        return w, eta + adj

    def deviance(self, y, mu):
        mu = np.clip(np.asarray(mu), 1e-300, 1 - 1e-16)
        return float(-2.0 * np.sum(np.where(y > 0.5, np.log(mu), np.log1p(-mu))))


class _Poisson(_Family):
    name = "poisson-log"

    def init_mu(self, y):
        return y + 0.1

    def link(self, mu):
        return np.log(mu)

    def inverse(self, eta):
        return np.exp(eta)

    def working(self, eta, mu, y):
        w = np.maximum(mu, 1e-10)
        return w, eta + (y - mu) / w

    def deviance(self, y, mu):
        # -2 log-likelihood including the log y! term
        return float(-2.0 * np.sum(y * np.log(mu) - mu - gammaln(y + 1.0)))


FAMILIES = {f.name: f for f in (_Gaussian(), _Logit(), _Probit(), _Poisson())}


@dataclass(frozen=True)
class GlmFit:
    family: str
    beta: np.ndarray
    linear_predictor: np.ndarray
    mu: np.ndarray
    deviance: float
    null_deviance: float
    aic: float
    df: float
    iterations: int
    converged: bool
    column_names: tuple

    @property
    def n(self):
        return len(self.mu)

    def predict(self, x, kind="mean"):
        eta = np.asarray(x, dtype=float) @ self.beta
        if kind == "link":
            return eta
        return FAMILIES[self.family].inverse(eta)

    def as_dict(self):
        return {"family": self.family,
                "coefficients": dict(zip(self.column_names, map(float, self.beta))),
                "deviance": float(self.deviance),
                "null_deviance": float(self.null_deviance),
                "aic": float(self.aic),
                "iterations": self.iterations,
                "converged": self.converged}


def fit_glm(dm, family, max_iter=50, tol=1e-9):
    """GLM by iteratively reweighted least squares.

    Each step solves the weighted normal equations for the working response
    z = g(mu) + (y - mu) g'(mu) via QR; iteration stops when the relative
    deviance change drops below ``tol``. Diverging coefficients (perfect
    separation) are flagged through ``converged=False``.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}'; choose from {sorted(FAMILIES)}")
    fam = FAMILIES[family]
    x, y = dm.x, dm.y
    if family.startswith("binomial") and not set(np.unique(y)) <= {0.0, 1.0}:
        raise ValueError("binomial families need a 0/1 response")
    if family == "poisson-log" and np.any(y < 0):
        raise ValueError("poisson family needs a non-negative response")
    mu = np.clip(fam.init_mu(y), 1e-8, None)
    if family.startswith("binomial"):
        mu = np.clip(mu, 1e-8, 1 - 1e-8)
    eta = fam.link(mu)
    dev = fam.deviance(y, mu)
    beta = np.zeros(dm.p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w, z = fam.working(eta, mu, y)
        sw = np.sqrt(w)
        beta, _ = _qr_solve(sw[:, None] * x, sw * z, dm.column_names)
        eta = x @ beta
        mu = fam.inverse(eta)
        if family.startswith("binomial"):
            mu = np.clip(mu, 1e-12, 1 - 1e-12)
        new_dev = fam.deviance(y, mu)
        if np.max(np.abs(beta)) > 1e4:
            converged = False
            dev = new_dev
            break
        if abs(new_dev - dev) < tol * (abs(new_dev) + 0.1):
            dev = new_dev
            # a deviance plateau with saturated probabilities is separation
            # drifting to infinity, not convergence
            saturated = family.startswith("binomial") and bool(
                np.any(mu <= 1e-12) or np.any(mu >= 1 - 1e-12))
            converged = not saturated
            break
        dev = new_dev
    null_dev = _null_deviance(fam, y)
    aic = dev + 2.0 * dm.p
    return GlmFit(family, beta, eta, mu, dev, null_dev, aic, float(dm.p), it,
                  converged, dm.column_names)


def _null_deviance(fam, y):
    ybar = float(np.mean(y))
    if fam.name == "gaussian-identity":
        return float(np.sum((y - ybar) ** 2))
    mu0 = np.full_like(np.asarray(y, dtype=float), max(min(ybar, 1 - 1e-12), 1e-12)
                       if fam.name.startswith("binomial") else max(ybar, 1e-12))
    return fam.deviance(y, mu0)


# ---------------------------------------------------------------------------
# stochastic gradient descent with pluggable losses


def _loss_grad(kind, tau):
    """d loss / d prediction, as a function of (y, u)."""
    if kind == "squared":
        return lambda y, u: 2.0 * (u - y)
    if kind == "absolute":
        return lambda y, u: np.sign(u - y)
    if kind == "quantile":
        return lambda y, u: (1.0 - tau) if u > y else -tau
    if kind == "expectile":
        return lambda y, u: 2.0 * (u - y) * ((1.0 - tau) if u > y else tau)
    if kind == "logistic":
        return lambda y, u: -y / (1.0 + np.exp(y * u))
    if kind == "hinge":
        return lambda y, u: -y if y * u < 1.0 else 0.0
    raise ValueError(f"unknown sgd loss '{kind}'")


def fit_sgd(dm, loss="squared", epochs=100, gamma0=0.01, lambda0=1.0,
            seed=0, tau=None, decay_per="epoch"):
    """Linear model by stochastic gradient descent.

    One subgradient step per observation with a per-epoch reshuffle; the step
    size decays as gamma_t = gamma0 / (1 + lambda0 t) where t counts epochs or
    individual steps per ``decay_per``. Margin losses (hinge, logistic) run on
    the ±1 response view.
    """
    if loss in ("quantile", "expectile") and (tau is None or not 0 < tau < 1):
        raise ValueError("tau must lie in (0,1)")
    grad = _loss_grad(loss, tau)
    x = dm.x
    y = dm.y_pm if loss in ("hinge", "logistic") else dm.y
    n = dm.n
    rng = np.random.default_rng(seed)
    beta = np.zeros(dm.p)
    trace = np.empty(epochs)
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        for i in order:
            t = epoch if decay_per == "epoch" else step
            gamma = gamma0 / (1.0 + lambda0 * t)
            u = float(x[i] @ beta)
            beta -= gamma * grad(y[i], u) * x[i]
            step += 1
        if not np.all(np.isfinite(beta)):
            raise ValueError("sgd diverged to non-finite parameters; lower the learning rate")
        trace[epoch] = float(np.mean(loss_values(loss, y, x @ beta, tau=tau)))
    fitted = x @ beta
    return LinearFit(beta, fitted, y - fitted, float(dm.p), dm.column_names,
                     risk_trace=trace)


# ---------------------------------------------------------------------------
# stepwise selection


@dataclass(frozen=True)
class StepwiseTrace:
    direction: str
    criterion: str
    start_value: float
    steps: tuple  # (variable, criterion value after the move)
    final_model: tuple  # selected non-intercept column names
    final_fit: GlmFit

    def selected(self):
        return self.final_model


def _criterion_value(dm, cols, family, criterion):
    sub = dm.select_columns(cols)
    fit = fit_glm(sub, family)
    p = len(cols)
    if criterion == "aic":
        return fit.deviance + 2.0 * p, fit
    if criterion == "bic":
        return fit.deviance + np.log(dm.n) * p, fit
    raise ValueError(f"unknown criterion '{criterion}'")


def stepwise(dm, family, direction="forward", criterion="aic", max_steps=None):
    """Greedy forward/backward selection of single columns.

    Each move adds (or removes) the column that most improves the criterion;
    the walk stops at a local optimum. Exact ties go to the lowest column
    index.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    base = ["intercept"] if dm.has_intercept else []
    cand = [nm for nm in dm.column_names if nm != "intercept"]
    current = [] if direction == "forward" else list(cand)
    value, fit = _criterion_value(dm, base + current, family, criterion)
    start = value
    steps = []
    while True:
        if max_steps is not None and len(steps) >= max_steps:
            break
        best = None
        if direction == "forward":
            moves = [c for c in cand if c not in current]
            for c in moves:
                v, f = _criterion_value(dm, base + current + [c], family, criterion)
                if v < value - 1e-10 and (best is None or v < best[0] - 1e-12):
                    best = (v, c, f)
        else:
            for c in current:
                trial = [t for t in current if t != c]
                v, f = _criterion_value(dm, base + trial, family, criterion)
                if v < value - 1e-10 and (best is None or v < best[0] - 1e-12):
                    best = (v, c, f)
        if best is None:
            break
        value, chosen, fit = best
        if direction == "forward":
            current.append(chosen)
        else:
            current.remove(chosen)
        steps.append((chosen, value))
    return StepwiseTrace(direction, criterion, float(start), tuple(steps),
                         tuple(current), fit)
