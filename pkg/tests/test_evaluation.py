import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twocultures.dataframe import DesignMatrix, make_folds
from twocultures.evaluation import (
    RocCurve,
    bootstrap_validate,
    confusion_at,
    cross_validate,
    kappa,
    loss,
    mean_risk,
    optimal_cutoff,
    roc,
)
from twocultures.linmod import fit_ols

import oracles


def test_quantile_half_absolute():
    y = np.array([1.0, -2.0, 3.0])
    yhat = np.array([0.5, 0.5, 0.5])
    assert np.allclose(loss("quantile", y, yhat, tau=0.5),
                       0.5 * loss("absolute", y, yhat))


def test_expectile_half_squared():
    y = np.array([1.0, -2.0, 3.0])
    yhat = np.array([0.0, 1.0, 2.0])
    assert np.allclose(loss("expectile", y, yhat, tau=0.5),
                       0.5 * loss("squared", y, yhat))


def test_quantile_argmin_is_sample_quantile():
    y = np.array([3.1, 0.2, 1.4, 7.7, 2.8, 5.0, 4.4, 6.1, 0.9])
    grid = np.linspace(0.0, 8.0, 4001)
    risks = [np.mean(loss("quantile", y, np.full(9, c), tau=0.25)) for c in grid]
    best = grid[int(np.argmin(risks))]
    # 9 points at tau=0.25: the 1/4 sample quantile sits between the 2nd and
    # 3rd order statistics; any minimizer lives in that interval
    assert 0.9 - 1e-9 <= best <= 1.4 + 1e-9


def test_hinge_logistic_misclass_values():
    y = np.array([1.0, -1.0])
    yhat = np.array([0.5, 0.5])
    assert np.allclose(loss("hinge", y, yhat), [0.5, 1.5])
    assert np.allclose(loss("logistic", y, yhat),
                       np.log1p(np.exp(-y * yhat)))
    assert np.array_equal(loss("misclass", np.array([1.0, 0.0]), np.array([1.0, 1.0])),
                          [0.0, 1.0])


def test_loss_tau_validation():
    y = np.zeros(2)
    with pytest.raises(ValueError):
        loss("quantile", y, y, tau=1.0)
    with pytest.raises(ValueError):
        loss("expectile", y, y, tau=0.0)
    with pytest.raises(ValueError):
        loss("nope", y, y)


def scores_for_counts(tp, tn, fp, fn, s=0.5):
    scores = np.concatenate([
        np.full(tp, s + 0.2), np.full(fn, s - 0.2),
        np.full(fp, s + 0.2), np.full(tn, s - 0.2),
    ])
    labels = np.concatenate([np.ones(tp + fn), np.zeros(fp + tn)])
    return scores, labels


def test_confusion_all_positive():
    cm = confusion_at(np.array([0.9, 0.8]), np.array([1.0, 1.0]), 0.5)
    assert cm.sensitivity == 1.0
    assert cm.fp == 0 and cm.fn == 0


def test_confusion_threshold_is_strict():
    cm = confusion_at(np.array([0.5, 0.6]), np.array([1.0, 1.0]), 0.5)
    assert cm.tp == 1 and cm.fn == 1  # score == s is classified negative


def test_confusion_worked_example():
    scores, labels = scores_for_counts(tp=40, tn=45, fp=5, fn=10)
    cm = confusion_at(scores, labels, 0.5)
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (40, 45, 5, 10)
    assert np.isclose(cm.accuracy, 0.85)
    assert np.isclose(kappa(cm), 0.70)


def test_kappa_perfect_and_independent():
    scores, labels = scores_for_counts(tp=30, tn=70, fp=0, fn=0)
    assert np.isclose(kappa(confusion_at(scores, labels, 0.5)), 1.0)
    # prediction independent of the label: half of each class flagged positive
    scores, labels = scores_for_counts(tp=30, tn=20, fp=20, fn=30)
    assert abs(kappa(confusion_at(scores, labels, 0.5))) < 1e-12


def test_kappa_degenerate_table():
    scores, labels = scores_for_counts(tp=10, tn=0, fp=0, fn=0)
    with pytest.raises(ValueError):
        kappa(confusion_at(scores, labels, 0.5))


def test_roc_perfect_separation():
    rc = roc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0.0, 0.0, 1.0, 1.0]))
    assert np.isclose(rc.auc, 1.0)


def test_roc_worked_example():
    rc = roc(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0.0, 0.0, 1.0, 1.0]))
    assert np.isclose(rc.auc, 0.75)


def test_roc_single_class_error():
    with pytest.raises(ValueError):
        roc(np.array([0.1, 0.2]), np.array([1.0, 1.0]))


def test_roc_endpoints_and_monotone():
    rng = np.random.default_rng(5)
    scores = rng.normal(size=40)
    labels = (rng.random(40) < 0.4).astype(float)
    labels[:2] = [0.0, 1.0]
    rc = roc(scores, labels)
    assert rc.fpr[0] == 0.0 and rc.tpr[0] == 0.0
    assert rc.fpr[-1] == 1.0 and rc.tpr[-1] == 1.0
    assert np.all(np.diff(rc.fpr) >= 0)
    assert np.all(np.diff(rc.tpr) >= 0)
    assert rc.thresholds[0] == np.inf and rc.thresholds[-1] == -np.inf


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=25),
       st.data())
def test_auc_equals_pair_count(raw, data):
    n = len(raw)
    labels = np.array(data.draw(
        st.lists(st.sampled_from([0.0, 1.0]), min_size=n, max_size=n)))
    if labels.min() == labels.max():
        labels[0] = 1.0 - labels[0]
    scores = np.round(np.array(raw), 1)  # encourage ties
    rc = roc(scores, labels)
    assert np.isclose(rc.auc, oracles.auc_pairs(scores, labels), atol=1e-12)


def test_auc_label_swap_duality(rng):
    scores = np.round(rng.normal(size=60), 1)
    labels = (rng.random(60) < 0.5).astype(float)
    labels[:2] = [0.0, 1.0]
    a = roc(scores, labels).auc
    b = roc(1.0 - scores, 1.0 - labels).auc
    assert np.isclose(a, b, atol=1e-12)


def test_optimal_cutoff_perfect_split():
    scores = np.array([0.1, 0.2, 0.8, 0.9])
    labels = np.array([0.0, 0.0, 1.0, 1.0])
    rc = roc(scores, labels)
    s = optimal_cutoff(rc)
    cm = confusion_at(scores, labels, s)
    assert cm.sensitivity == 1.0 and cm.specificity == 1.0


def test_optimal_cutoff_tie_takes_smaller():
    rc = RocCurve(
        thresholds=np.array([np.inf, 3.0, 2.0, -np.inf]),
        fpr=np.array([0.0, 0.25, 0.75, 1.0]),
        tpr=np.array([0.0, 0.25, 0.75, 1.0]),
        auc=0.5,
    )
    # distances at 3.0 and 2.0 are equal by symmetry
    assert optimal_cutoff(rc) == 2.0


def ols_factory(train_dm):
    fit = fit_ols(train_dm)
    return lambda xb: xb @ fit.beta


def test_cv_constant_model_closed_form(rng):
    y = rng.normal(size=40)
    dm = DesignMatrix(np.ones((40, 1)), y, ("intercept",), True)
    plan = make_folds(40, 5, seed=2)
    rep = cross_validate(lambda d: (lambda xb: np.zeros(len(xb))), dm, plan,
                         risk_kind="squared", classification=False)
    assert np.isclose(rep.aggregate, np.mean(y ** 2), atol=1e-12)
    assert np.isclose(rep.aggregate, np.mean(rep.fold_risks), atol=1e-14)


def test_cv_loocv_matches_shortcut(rng):
    n = 24
    x = np.column_stack([np.ones(n), rng.normal(size=n), rng.normal(size=n)])
    y = x @ np.array([1.0, 2.0, -1.0]) + rng.normal(size=n)
    dm = DesignMatrix(x, y, ("intercept", "a", "b"), True)
    plan = make_folds(n, n, seed=0)
    rep = cross_validate(ols_factory, dm, plan, risk_kind="squared",
                         classification=False)
    assert np.isclose(rep.aggregate, oracles.loocv_shortcut_ols(x, y), atol=1e-10)


def test_cv_pooled_scores_cover_rows(rng):
    n = 30
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = x @ np.array([0.5, 1.5]) + rng.normal(size=n)
    dm = DesignMatrix(x, y, ("intercept", "a"), True)
    plan = make_folds(n, 6, seed=1)
    rep = cross_validate(ols_factory, dm, plan, risk_kind="squared",
                         classification=False, pool_scores=True)
    assert rep.pooled_scores.shape == (n,)
    assert np.all(np.isfinite(rep.pooled_scores))
    # fold risks recompute from the pooled vector
    j = 3
    rows = plan.rows(j)
    manual = (plan.k / n) * np.sum((y[rows] - rep.pooled_scores[rows]) ** 2)
    assert np.isclose(rep.fold_risks[j - 1], manual, atol=1e-12)


def test_cv_missing_class_error():
    y = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    dm = DesignMatrix(np.ones((6, 1)), y, ("intercept",), True)
    plan = make_folds(6, 3, seed=0)
    with pytest.raises(ValueError, match="stratif"):
        cross_validate(lambda d: (lambda xb: np.zeros(len(xb))), dm, plan,
                       risk_kind="misclass")


def test_cv_overfitting_curve():
    rng = np.random.default_rng(7)
    n = 80
    t = rng.uniform(-1, 1, n)
    y = np.sin(3.0 * t) + rng.normal(0.0, 0.4, n)
    plan = make_folds(n, 10, seed=3)
    out, inner = {}, {}
    for degree in (1, 3, 12):
        x = np.vander(t, degree + 1, increasing=True)
        names = tuple(f"t{d}" for d in range(degree + 1))
        dm = DesignMatrix(x, y, names, True)
        rep = cross_validate(ols_factory, dm, plan, risk_kind="squared",
                             classification=False)
        out[degree] = rep.aggregate
        inner[degree] = rep.in_sample
    assert out[12] > out[3]  # U-shaped out-of-sample risk
    assert inner[1] >= inner[3] >= inner[12]  # in-sample only improves


def test_bootstrap_validate_near_cv(rng):
    n = 60
    y = rng.normal(2.0, 1.0, n)
    dm = DesignMatrix(np.ones((n, 1)), y, ("intercept",), True)

    def mean_factory(train_dm):
        m = float(np.mean(train_dm.y))
        return lambda xb: np.full(len(xb), m)

    plan = make_folds(n, 10, seed=5)
    cv = cross_validate(mean_factory, dm, plan, risk_kind="squared",
                        classification=False)
    boot = bootstrap_validate(mean_factory, dm, B=400, seed=5,
                              risk_kind="squared")
    assert abs(boot - cv.aggregate) < 0.15 * cv.aggregate + 0.05


def test_bootstrap_validate_degenerate_and_deterministic(rng):
    dm1 = DesignMatrix(np.ones((1, 1)), np.array([1.0]), ("intercept",), True)
    factory = lambda d: (lambda xb: np.zeros(len(xb)))
    with pytest.raises(ValueError, match="test rows"):
        bootstrap_validate(factory, dm1, B=1, seed=0)
    y = rng.normal(size=25)
    dm = DesignMatrix(np.ones((25, 1)), y, ("intercept",), True)
    a = bootstrap_validate(factory, dm, B=20, seed=3)
    b = bootstrap_validate(factory, dm, B=20, seed=3)
    assert a == b


def test_cv_report_serializes(rng):
    n = 20
    x = np.column_stack([np.ones(n), rng.normal(size=n)])
    dm = DesignMatrix(x, rng.normal(size=n), ("intercept", "a"), True)
    rep = cross_validate(ols_factory, dm, make_folds(n, 4, seed=0),
                         risk_kind="squared", classification=False)
    import json
    doc = json.dumps(rep.as_dict())
    assert "fold_risks" in doc
