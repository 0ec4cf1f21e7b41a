"""Kernel smoothers, bandwidth selection, and backfitted additive models."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twocultures.dataframe import DesignMatrix, make_folds
from twocultures.linmod import fit_ols, fit_ridge
from twocultures.nonparam import (
    AdditiveFit,
    KernelSmoother,
    fit_additive,
    knn_predict,
    loocv_risk,
    nw_predict,
    nw_weights,
    select_bandwidth,
    smoother_trace,
)


def orthonormal_design(rng, n, p):
    # centered columns with x.T @ x == n * I exactly
    x = rng.normal(size=(n, p))
    x = x - x.mean(axis=0)
    q, _ = np.linalg.qr(x)
    return q * np.sqrt(n)


def make_dm(x, y, names, intercept=True):
    return DesignMatrix(np.asarray(x, float), np.asarray(y, float),
                        tuple(names), intercept)


class TestNadarayaWatson:
    def test_constant_y(self):
        sm = KernelSmoother("gaussian", 0.7, np.arange(6.0), np.full(6, 3.25))
        assert np.allclose(nw_predict(sm, np.linspace(-1, 7, 9)), 3.25)

    def test_hand_formula_three_points(self):
        x = np.array([0.0, 1.0, 2.0])
        y = np.array([0.0, 1.0, 4.0])
        sm = KernelSmoother("gaussian", 0.5, x, y)
        w = np.exp(-0.5 * ((1.0 - x) / 0.5) ** 2)
        assert np.isclose(nw_predict(sm, 1.0), w @ y / w.sum(), atol=1e-12)

    def test_huge_bandwidth_gives_global_mean(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 1, 40)
        y = rng.normal(size=40)
        sm = KernelSmoother("gaussian", 1e9, x, y)
        assert np.allclose(nw_predict(sm, np.array([0.1, 0.9])), y.mean())

    def test_product_kernel_two_dims(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, (15, 2))
        y = rng.normal(size=15)
        h = np.array([0.5, 1.5])
        q = np.array([0.2, -0.3])
        u = (q - x) / h
        for kernel, kw in [
            ("gaussian", np.exp(-0.5 * (u ** 2).sum(axis=1))),
            ("epanechnikov", 0.75 ** 2 * np.prod(np.maximum(1 - u ** 2, 0), axis=1)),
        ]:
            sm = KernelSmoother(kernel, h, x, y)
            assert np.isclose(nw_predict(sm, q), kw @ y / kw.sum(), atol=1e-12)

    def test_epanechnikov_empty_neighborhood_raises(self):
        sm = KernelSmoother("epanechnikov", 0.1, np.array([0.0, 10.0]),
                            np.array([0.0, 1.0]))
        with pytest.raises(ValueError, match="empty neighborhood"):
            nw_predict(sm, 5.0)

    def test_query_shapes(self):
        rng = np.random.default_rng(2)
        x2 = rng.uniform(size=(10, 2))
        y = rng.normal(size=10)
        sm2 = KernelSmoother("gaussian", 1.0, x2, y)
        assert isinstance(nw_predict(sm2, np.array([0.5, 0.5])), float)
        assert nw_predict(sm2, rng.uniform(size=(4, 2))).shape == (4,)
        sm1 = KernelSmoother("gaussian", 1.0, x2[:, 0], y)
        assert isinstance(nw_predict(sm1, 0.5), float)
        assert nw_predict(sm1, np.array([0.1, 0.2, 0.3])).shape == (3,)

    def test_validation(self):
        x = np.arange(5.0)
        y = np.ones(5)
        with pytest.raises(ValueError, match="kernel"):
            KernelSmoother("box", 1.0, x, y)
        with pytest.raises(ValueError, match="positive"):
            KernelSmoother("gaussian", -1.0, x, y)
        with pytest.raises(ValueError, match="per column"):
            KernelSmoother("gaussian", np.array([1.0, 2.0]), x, y)
        with pytest.raises(ValueError, match="lengths"):
            KernelSmoother("gaussian", 1.0, x, np.ones(4))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 20), st.integers(1, 3),
           st.floats(0.5, 5.0))
    def test_weights_simplex_property(self, seed, n, d, h):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, (n, d))
        y = rng.normal(size=n)
        sm = KernelSmoother("gaussian", h, x, y)
        q = rng.uniform(-2, 2, (5, d))
        w = nw_weights(sm, q)
        assert np.all(w >= 0)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        pred = nw_predict(sm, q)
        assert np.all(pred >= y.min() - 1e-12)
        assert np.all(pred <= y.max() + 1e-12)


class TestKnn:
    def test_full_neighborhood_is_global_mean(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(12, 2))
        y = rng.normal(size=12)
        assert np.isclose(knn_predict(x, y, 12, x[4]), y.mean(), atol=1e-12)

    def test_single_neighbor_at_training_point(self):
        x = np.array([0.0, 1.0, 2.0, 3.0])
        y = np.array([5.0, 6.0, 7.0, 8.0])
        assert knn_predict(x, y, 1, 2.0) == 7.0

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(30, 3)) * np.array([1.0, 10.0, 0.1])
        y = rng.normal(size=30)
        sd = x.std(axis=0)
        xs = x / sd
        queries = rng.normal(size=(5, 3)) * np.array([1.0, 10.0, 0.1])
        for k in (1, 3, 7):
            got = knn_predict(x, y, k, queries)
            for qi, q in enumerate(queries):
                d2 = np.sum((q / sd - xs) ** 2, axis=1)
                order = sorted(range(30), key=lambda i: (d2[i], i))
                assert np.isclose(got[qi], y[order[:k]].mean(), atol=1e-12)

    def test_five_point_line(self):
        x = np.array([0.0, 1.0, 2.2, 3.1, 10.0])
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        assert knn_predict(x, y, 2, 1.5) == pytest.approx(2.5)
        assert knn_predict(x, y, 2, 20.0) == pytest.approx(4.5)

    def test_distance_tie_takes_lowest_index(self):
        x = np.array([0.0, 1.0, 1.0, 2.0])
        y = np.array([10.0, 20.0, 30.0, 40.0])
        # rows 1 and 2 both sit at the query
        assert knn_predict(x, y, 1, 1.0) == 20.0
        # rows 0 and 3 tie at distance 1; the stable sort keeps row 0
        assert knn_predict(x, y, 3, 1.0) == pytest.approx((20 + 30 + 10) / 3)

    def test_k_validation(self):
        x = np.arange(4.0)
        y = np.ones(4)
        for k in (0, 5):
            with pytest.raises(ValueError, match="k must be"):
                knn_predict(x, y, k, 1.0)


class TestSmootherTrace:
    def test_ols_trace_is_column_count(self):
        rng = np.random.default_rng(5)
        x = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
        y = rng.normal(size=40)
        fit = fit_ols(make_dm(x, y, ["intercept", "a", "b", "c"]))
        assert smoother_trace(fit) == pytest.approx(4.0, abs=1e-8)

    def test_nw_interpolation_limit(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, 50)
        y = rng.normal(size=50)
        sm = KernelSmoother("gaussian", 1e-8, x, y)
        assert smoother_trace(sm) == pytest.approx(50.0, abs=1e-8)

    def test_ridge_orthonormal_closed_form(self):
        rng = np.random.default_rng(7)
        p = 4
        x = orthonormal_design(rng, 60, p)
        y = rng.normal(size=60)
        dm = make_dm(x, y, [f"x{j}" for j in range(p)], intercept=False)
        for lam in (0.0, 0.5, 2.0):
            fit = fit_ridge(dm, lam)
            assert smoother_trace(fit) == pytest.approx(p / (1 + lam), abs=1e-8)

    def test_rejects_non_smoother(self):
        with pytest.raises(TypeError, match="linear smoother"):
            smoother_trace(object())


class TestBandwidthSelection:
    def test_shortcut_equals_literal_loocv(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 1, 50)
        y = np.sin(4 * x) + rng.normal(0, 0.3, 50)
        h = 0.15
        literal = 0.0
        for i in range(50):
            keep = np.arange(50) != i
            sm = KernelSmoother("gaussian", h, x[keep], y[keep])
            literal += (y[i] - nw_predict(sm, x[i])) ** 2
        literal /= 50
        assert loocv_risk(x, y, "gaussian", h) == pytest.approx(literal, abs=1e-10)

    def test_cv_curve_is_u_shaped(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, 200)
        y = np.sin(4 * x) + rng.normal(0, 0.3, 200)
        h = select_bandwidth(x, y, "gaussian", np.geomspace(0.005, 1.0, 25))
        risk = lambda hh: loocv_risk(x, y, "gaussian", hh)
        assert risk(h) < risk(10 * h)
        assert risk(h) < risk(h / 10)

    def test_duplicated_data_prefers_smaller_bandwidth(self):
        grid = np.geomspace(0.01, 0.8, 30)
        wins = 0
        for s in range(10):
            rng = np.random.default_rng(100 + s)
            x = rng.uniform(0, 1, 120)
            y = np.sin(4 * x) + rng.normal(0, 0.3, 120)
            h1 = select_bandwidth(x, y, "gaussian", grid)
            h2 = select_bandwidth(np.r_[x, x], np.r_[y, y], "gaussian", grid)
            wins += h2 < h1
        assert wins >= 9

    def test_tie_takes_smaller_bandwidth(self):
        # constant response: every bandwidth has zero LOOCV risk
        x = np.arange(20.0)
        y = np.full(20, 2.0)
        assert select_bandwidth(x, y, "gaussian", [4.0, 1.0, 2.0]) == 1.0

    def test_degenerate_grid_raises(self):
        x = np.arange(10.0)
        y = np.sin(x)
        for grid in ([], [0.5, -1.0], [np.nan], [np.inf]):
            with pytest.raises(ValueError, match="grid"):
                select_bandwidth(x, y, "gaussian", grid)
        # every bandwidth leaves some point with an empty neighborhood
        with pytest.raises(ValueError, match="grid"):
            select_bandwidth(np.array([0.0, 10.0]), np.array([0.0, 1.0]),
                             "epanechnikov", [0.01, 0.02])


def linear_additive_data(seed=9, n=400):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, n)
    b = rng.uniform(-1, 1, n)
    y = 1.0 + a - b + rng.normal(0, 0.5, n)
    x = np.column_stack([np.ones(n), a, b])
    return make_dm(x, y, ["intercept", "a", "b"])


class TestAdditive:
    def test_truly_linear_components_and_cv(self):
        dm = linear_additive_data()
        fit = fit_additive(dm, ["a", "b"])
        assert fit.converged
        for comp in fit.components:
            basis = np.column_stack([np.ones(dm.n), comp.x])
            resid = comp.values - basis @ np.linalg.lstsq(
                basis, comp.values, rcond=None)[0]
            assert np.abs(resid).max() < 0.3  # noise sd is 0.5

        plan = make_folds(dm.n, 10, seed=0)
        tot_add = tot_ols = 0.0
        for j in range(1, plan.k + 1):
            tr, te = plan.train_rows(j), plan.rows(j)
            dtr = make_dm(dm.x[tr], dm.y[tr], dm.column_names)
            mod = fit_additive(dtr, ["a", "b"])
            ols = fit_ols(dtr)
            tot_add += float(np.sum((dm.y[te] - mod.predict(dm.x[te])) ** 2))
            tot_ols += float(np.sum((dm.y[te] - dm.x[te] @ ols.beta) ** 2))
        assert tot_add <= 1.05 * tot_ols

    def test_backfitting_fixed_point(self):
        dm = linear_additive_data(seed=7, n=150)
        fit = fit_additive(dm, ["a", "b"], tol=1e-9, max_sweeps=300)
        assert fit.converged
        lin = dm.x[:, list(fit.linear_columns)] @ fit.linear_beta
        values = [c.values for c in fit.components]
        total = np.sum(values, axis=0)
        for j, comp in enumerate(fit.components):
            partial = dm.y - lin - (total - values[j])
            sm = KernelSmoother(comp.kernel, comp.bandwidth, comp.x, partial)
            raw = nw_predict(sm, comp.x)
            assert np.max(np.abs(raw - raw.mean() - values[j])) < 1e-6

    def test_all_linear_matches_ols(self):
        dm = linear_additive_data(seed=11, n=120)
        fit = fit_additive(dm, [], ["a", "b"])
        ols = fit_ols(dm)
        assert fit.converged
        assert np.allclose(fit.linear_beta, ols.beta, atol=1e-6)
        assert fit.components == ()

    def test_identifiability(self):
        dm = linear_additive_data(seed=12, n=200)
        fit = fit_additive(dm, ["a", "b"])
        for comp in fit.components:
            assert abs(comp.values.mean()) < 1e-10
        assert abs(fit.residuals.mean()) < 1e-10
        assert fit.intercept == pytest.approx(float(fit.linear_beta[0]))

    def test_nonconvergence_flagged(self):
        dm = linear_additive_data(seed=13, n=100)
        fit = fit_additive(dm, ["a", "b"], max_sweeps=2)
        assert not fit.converged
        assert fit.sweeps == 2

    def test_predict_reproduces_fitted(self):
        dm = linear_additive_data(seed=14, n=100)
        fit = fit_additive(dm, ["a", "b"])
        assert np.allclose(fit.predict(dm.x), fit.fitted, atol=1e-12)
        for comp in fit.components:
            assert np.allclose(comp(comp.x), comp.values, atol=1e-12)

    def test_component_curve(self):
        dm = linear_additive_data(seed=15, n=100)
        fit = fit_additive(dm, ["a", "b"])
        grid, vals = fit.component_curve("a")
        assert grid.shape == (100,) and vals.shape == (100,)
        assert np.all(np.isfinite(vals))
        g2, v2 = fit.component_curve("b", grid=np.linspace(-0.5, 0.5, 7))
        assert g2.shape == (7,) and v2.shape == (7,)
        with pytest.raises(KeyError, match="component"):
            fit.component_curve("zzz")

    def test_term_errors(self):
        dm = linear_additive_data(seed=16, n=60)
        with pytest.raises(ValueError, match="both smooth and linear"):
            fit_additive(dm, ["a"], ["a"])
        with pytest.raises(KeyError, match="column"):
            fit_additive(dm, ["nope"])
        no_int = make_dm(dm.x[:, 1:], dm.y, ["a", "b"], intercept=False)
        with pytest.raises(ValueError, match="at least one term"):
            fit_additive(no_int, [], [])
