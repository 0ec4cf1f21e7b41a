"""Losses, classification metrics (confusion matrix, ROC/AUC, kappa, optimal
cutoff) and the cross-validation / bootstrap validation engine shared by all
models."""

from dataclasses import dataclass

import numpy as np

from .dataframe import bootstrap


# ---------------------------------------------------------------------------
# pointwise losses


def loss(kind, y, yhat, tau=None):
    """Pointwise loss values ℓ(y, yhat).

    Kinds: squared, absolute, quantile(tau), expectile(tau), hinge, logistic,
    misclass. Margin losses (hinge, logistic) expect ±1 labels and a real
    score; quantile/expectile weight residuals by tau on the side where the
    observation exceeds the prediction.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if kind in ("quantile", "expectile"):
        if tau is None or not 0 < tau < 1:
            raise ValueError("tau must lie in (0,1)")
        w = np.abs(tau - (y <= yhat))
        if kind == "quantile":
            return np.abs(y - yhat) * w
        return (y - yhat) ** 2 * w
    if kind == "squared":
        return (y - yhat) ** 2
    if kind == "absolute":
        return np.abs(y - yhat)
    if kind == "hinge":
        return np.maximum(0.0, 1.0 - y * yhat)
    if kind == "logistic":
        return np.logaddexp(0.0, -y * yhat)
    if kind == "misclass":
        return (y != yhat).astype(float)
    raise ValueError(f"unknown loss kind '{kind}'")


def mean_risk(kind, y, yhat, tau=None):
    return float(np.mean(loss(kind, y, yhat, tau=tau)))


# ---------------------------------------------------------------------------
# confusion matrix, kappa


@dataclass(frozen=True)
class ConfusionMatrix:
    threshold: float
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def n(self):
        return self.tp + self.tn + self.fp + self.fn

    @property
    def sensitivity(self):
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    @property
    def specificity(self):
        d = self.tn + self.fp
        return self.tn / d if d else float("nan")

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.n

    @property
    def kappa(self):
        return kappa(self)


def confusion_at(scores, labels, s):
    """Confusion counts of the rule 1[score > s] (strict inequality)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pred = scores > s
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    return ConfusionMatrix(float(s), tp, tn, fp, fn)


def kappa(cm):
    """Accuracy beyond chance: (observed - random) / (1 - random), with random
    accuracy from the margin products."""
    n = cm.n
    obs = (cm.tp + cm.tn) / n
    rand = ((cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)) / n ** 2
    if rand >= 1.0:
        raise ValueError("degenerate table: random accuracy is 1")
    return (obs - rand) / (1.0 - rand)


# ---------------------------------------------------------------------------
# ROC


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # +inf at (0,0) down to -inf at (1,1)
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self):
        return np.column_stack([self.fpr, self.tpr])


def roc(scores, labels):
    """ROC sweep over the distinct scores; AUC by the trapezoid rule.

    Classification at threshold s is 1[score > s], so the curve starts at
    (0,0) for s=+inf and ends at (1,1) for s=-inf.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_pos = pos[order].astype(float)
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # keep the last index of each run of tied scores
    ss = scores[order]
    last = np.nonzero(np.append(ss[1:] != ss[:-1], True))[0]
    # the point at threshold t counts scores strictly above t, so each distinct
    # score pairs with the cumulative counts of the previous run
    thresholds = np.concatenate([[np.inf], ss[last], [-np.inf]])
    tpr = np.concatenate([[0.0, 0.0], tp[last[:-1]] / n_pos, [1.0]])
    fpr = np.concatenate([[0.0, 0.0], fp[last[:-1]] / n_neg, [1.0]])
    trapezoid = getattr(np, "trapezoid", np.trapz)
    auc = float(trapezoid(tpr, fpr))
    for a in (thresholds, fpr, tpr):
        a.setflags(write=False)
    return RocCurve(thresholds, fpr, tpr, auc)


def optimal_cutoff(rc):
    """Threshold whose (specificity, sensitivity) is closest to (1,1); ties go
    to the smaller threshold."""
    finite = np.isfinite(rc.thresholds)
    d2 = rc.fpr[finite] ** 2 + (1.0 - rc.tpr[finite]) ** 2
    ts = rc.thresholds[finite]
    best = np.min(d2)
    candidates = ts[d2 <= best + 1e-15]
    return float(np.min(candidates))


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CvReport:
    label: str
    risk_kind: str
    fold_risks: np.ndarray
    aggregate: float
    in_sample: float
    pooled_scores: np.ndarray  # one out-of-fold score per row, or None
    seed: object

    def as_dict(self):
        return {
            "label": self.label,
            "risk_kind": self.risk_kind,
            "fold_risks": [float(r) for r in self.fold_risks],
            "aggregate": float(self.aggregate),
            "in_sample": float(self.in_sample),
            "seed": self.seed,
        }


def cross_validate(factory, dm, plan, risk_kind="squared", tau=None,
                   classification=None, pool_scores=False, label="model"):
    """k-fold cross-validation under a shared FoldPlan.

    ``factory(train_dm)`` must return a callable mapping a design block
    (same columns as ``dm.x``) to predictions. Per-fold risk follows the
    k-block formula R_j = (k/n)·sum of losses over fold j, and the aggregate
    is the mean of the fold risks. With ``pool_scores`` the out-of-fold
    predictions are kept, one per row, for ROC construction.
    """
    n = dm.n
    k = plan.k
    if classification is None:
        classification = set(np.unique(dm.y)) <= {0.0, 1.0}
    if classification:
        for j in range(1, k + 1):
            held = dm.y[plan.rows(j)]
            if len(np.unique(held)) < 2 or len(np.unique(dm.y[plan.train_rows(j)])) < 2:
                raise ValueError(
                    f"fold {j} is missing a class; use stratified folds for classification")
    fold_risks = np.empty(k)
    in_risks = np.empty(k)
    pooled = np.full(n, np.nan) if pool_scores else None
    for j in range(1, k + 1):
        tr = plan.train_rows(j)
        te = plan.rows(j)
        model = factory(dm.subset(tr))
        pred_te = np.asarray(model(dm.x[te]), dtype=float)
        pred_tr = np.asarray(model(dm.x[tr]), dtype=float)
        fold_risks[j - 1] = (k / n) * float(np.sum(loss(risk_kind, dm.y[te], pred_te, tau=tau)))
        in_risks[j - 1] = mean_risk(risk_kind, dm.y[tr], pred_tr, tau=tau)
        if pool_scores:
            pooled[te] = pred_te
    if pool_scores:
        assert not np.any(np.isnan(pooled)), "pooled scores must cover each row exactly once"
        pooled.setflags(write=False)
    fold_risks.setflags(write=False)
    return CvReport(label, risk_kind, fold_risks, float(np.mean(fold_risks)),
                    float(np.mean(in_risks)), pooled, plan.seed)


def bootstrap_validate(factory, dm, B, seed, risk_kind="squared", tau=None):
    """Out-of-bag risk over B bootstrap replicates, each replicate's mean OOB
    loss weighted by its OOB size."""
    n = dm.n
    total_w = 0.0
    total = 0.0
    for b in range(B):
        bs = bootstrap(n, (seed, b))
        if len(bs.out_of_bag) == 0:
            continue
        model = factory(dm.subset(bs.in_bag))
        pred = np.asarray(model(dm.x[bs.out_of_bag]), dtype=float)
        w = len(bs.out_of_bag) / n
        total += w * mean_risk(risk_kind, dm.y[bs.out_of_bag], pred, tau=tau)
        total_w += w
    if total_w == 0.0:
        raise ValueError("no test rows: every bootstrap replicate had an empty out-of-bag set")
    return total / total_w
