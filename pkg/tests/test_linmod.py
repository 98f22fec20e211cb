import numpy as np
import pytest

from didni.exceptions import RankDeficientError, ValidationError
from didni.linmod import DesignMatrix, OlsSolver, ols_fit, partial_r2


def random_design(rng, n=50, p=3, intercept=True):
    cols = [np.ones(n)] if intercept else []
    names = ["intercept"] if intercept else []
    for j in range(p):
        cols.append(rng.normal(size=n))
        names.append(f"x{j}")
    return DesignMatrix(np.column_stack(cols), tuple(names))


class TestDesignMatrix:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            DesignMatrix(np.ones((4, 2)), ("a", "a"))

    def test_nonfinite_rejected(self):
        values = np.ones((4, 2))
        values[1, 1] = np.nan
        with pytest.raises(ValidationError, match="non-finite"):
            DesignMatrix(values, ("a", "b"))

    def test_name_count_must_match(self):
        with pytest.raises(ValidationError, match="column names"):
            DesignMatrix(np.ones((4, 2)), ("a",))

    def test_column_lookup(self):
        X = DesignMatrix(np.column_stack([np.ones(3), np.arange(3.0)]), ("c", "t"))
        assert X.column_index("t") == 1
        assert np.array_equal(X.column("t"), np.arange(3.0))
        with pytest.raises(ValidationError, match="no column"):
            X.column("missing")


class TestOlsFit:
    def test_exact_line(self):
        X = DesignMatrix(
            np.column_stack([np.ones(3), [1.0, 2.0, 3.0]]), ("intercept", "x")
        )
        fit = ols_fit(X, np.array([1.0, 2.0, 3.0]))
        assert fit.coef("x") == pytest.approx(1.0, abs=1e-12)
        assert fit.coef("intercept") == pytest.approx(0.0, abs=1e-12)
        assert fit.sigma2 == pytest.approx(0.0, abs=1e-20)

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(1)
        X = random_design(rng, n=40, p=4)
        beta = rng.normal(size=5)
        fit = ols_fit(X, X.values @ beta)
        assert np.allclose(fit.coefficients, beta, atol=1e-10)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_iid_vcov_matches_explicit_inverse_oracle(self):
        rng = np.random.default_rng(7)
        X = random_design(rng, n=50, p=3, intercept=False)
        y = X.values @ np.array([1.0, -2.0, 0.5]) + rng.normal(size=50)
        fit = ols_fit(X, y)
        # independent oracle: explicit normal-equation inversion
        resid = y - X.values @ np.linalg.inv(X.values.T @ X.values) @ (X.values.T @ y)
        sigma2 = resid @ resid / (50 - 3)
        oracle = sigma2 * np.linalg.inv(X.values.T @ X.values)
        assert np.allclose(np.diag(fit.vcov), np.diag(oracle), rtol=1e-10)
        assert np.allclose(fit.vcov, oracle, rtol=1e-8)

    def test_residuals_orthogonal_to_design(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            X = random_design(rng, n=60, p=5)
            y = rng.normal(size=60) * 3.0 + 1.0
            fit = ols_fit(X, y)
            resid = y - X.values @ fit.coefficients
            scale = np.abs(X.values).max() * np.abs(y).max()
            assert np.abs(X.values.T @ resid).max() < 1e-8 * scale

    def test_cr1_with_singleton_clusters_equals_hc1(self):
        rng = np.random.default_rng(11)
        X = random_design(rng, n=40, p=2)
        y = rng.normal(size=40)
        hc1 = ols_fit(X, y, vcov_kind="hc1")
        cr1 = ols_fit(X, y, vcov_kind="cluster_cr1", cluster_ids=np.arange(40))
        # singleton clusters: (G/(G-1)) * ((n-1)/(n-p)) == n/(n-p) exactly
        assert np.allclose(cr1.vcov, hc1.vcov, rtol=1e-12)

    def test_cluster_vcov_differs_with_real_clusters(self):
        rng = np.random.default_rng(12)
        X = random_design(rng, n=40, p=2)
        clusters = np.repeat(np.arange(8), 5)
        effects = rng.normal(size=8)[clusters]
        y = X.values @ np.array([0.0, 1.0, 0.5]) + effects + rng.normal(size=40)
        iid = ols_fit(X, y)
        cr1 = ols_fit(X, y, vcov_kind="cluster_cr1", cluster_ids=clusters)
        assert not np.allclose(cr1.vcov, iid.vcov)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(5)
        X = random_design(rng, n=30, p=3)
        y = rng.normal(size=30)
        order = rng.permutation(30)
        fit = ols_fit(X, y)
        fit_perm = ols_fit(DesignMatrix(X.values[order], X.column_names), y[order])
        assert np.allclose(fit.coefficients, fit_perm.coefficients, atol=1e-12)

    def test_rank_deficiency_names_columns(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(30, 2))
        values = np.column_stack([np.ones(30), base, base[:, 0] + base[:, 1]])
        X = DesignMatrix(values, ("intercept", "a", "b", "a_plus_b"))
        with pytest.raises(RankDeficientError) as err:
            ols_fit(X, rng.normal(size=30))
        assert len(err.value.columns) == 1
        assert err.value.columns[0] in ("a", "b", "a_plus_b")

    def test_dimension_mismatch(self):
        X = DesignMatrix(np.ones((5, 1)), ("intercept",))
        with pytest.raises(ValidationError, match="length"):
            ols_fit(X, np.ones(4))

    def test_more_columns_than_rows(self):
        with pytest.raises(ValidationError, match="more rows than columns"):
            OlsSolver(DesignMatrix(np.eye(3), ("a", "b", "c")))

    def test_cluster_requirements(self):
        rng = np.random.default_rng(2)
        X = random_design(rng, n=20, p=2)
        y = rng.normal(size=20)
        with pytest.raises(ValidationError, match="cluster_ids"):
            ols_fit(X, y, vcov_kind="cluster_cr1")
        with pytest.raises(ValidationError, match="2 distinct"):
            ols_fit(X, y, vcov_kind="cluster_cr1", cluster_ids=np.zeros(20))
        with pytest.raises(ValidationError, match="vcov_kind"):
            ols_fit(X, y, vcov_kind="robust")

    def test_linear_combination_matches_manual_delta_method(self):
        rng = np.random.default_rng(21)
        X = random_design(rng, n=50, p=3)
        y = rng.normal(size=50)
        fit = ols_fit(X, y)
        est, se = fit.linear_combination(["x0", "x1"])
        idx = [1, 2]
        w = np.array([0.5, 0.5])
        assert est == pytest.approx(w @ fit.coefficients[idx], abs=1e-14)
        assert se == pytest.approx(
            np.sqrt(w @ fit.vcov[np.ix_(idx, idx)] @ w), abs=1e-14
        )

    def test_batch_linear_combination_matches_individual_fits(self):
        rng = np.random.default_rng(31)
        X = random_design(rng, n=40, p=3)
        solver = OlsSolver(X)
        Y = rng.normal(size=(40, 6))
        w = np.array([0.0, 1.0, 1.0, 0.0]) / 2.0
        ests, rss = solver.batch_linear_combination(Y, w)
        for j in range(6):
            fit = solver.fit(Y[:, j])
            est, _ = fit.linear_combination(["x0", "x1"])
            assert ests[j] == pytest.approx(est, abs=1e-12)
            assert rss[j] == pytest.approx(fit.sigma2 * fit.df_resid, rel=1e-10)


class TestPartialR2:
    def test_orthogonal_target_gives_zero(self):
        n = 64
        t = np.arange(n)
        a = np.where(t % 2 == 0, 1.0, -1.0)
        b = np.where(t % 4 < 2, 1.0, -1.0)  # orthogonal to a
        X = DesignMatrix(np.column_stack([a, b]), ("a", "b"))
        assert partial_r2(X, "a", ["b"]) == pytest.approx(0.0, abs=1e-12)

    def test_identical_conditioner_gives_one(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=30)
        X = DesignMatrix(np.column_stack([x, x * 2.0]), ("x", "x2"))
        assert partial_r2(X, "x", ["x2"]) == pytest.approx(1.0, abs=1e-12)

    def test_matches_direct_rss_oracle(self):
        rng = np.random.default_rng(8)
        X = random_design(rng, n=80, p=3)
        value = partial_r2(X, "x0", ["intercept", "x1", "x2"])
        # oracle: explicit RSS / TSS from an independent regression
        t = X.column("x0")
        Z = np.column_stack([np.ones(80), X.column("x1"), X.column("x2")])
        coef = np.linalg.solve(Z.T @ Z, Z.T @ t)
        rss = np.sum((t - Z @ coef) ** 2)
        tss = np.sum((t - t.mean()) ** 2)
        assert value == pytest.approx(1.0 - rss / tss, abs=1e-10)

    def test_empty_conditioning_set(self):
        rng = np.random.default_rng(6)
        X = random_design(rng, n=20, p=2, intercept=False)
        assert partial_r2(X, "x0", []) == 0.0

    def test_constant_target_rejected(self):
        X = DesignMatrix(
            np.column_stack([np.ones(10), np.arange(10.0)]), ("c", "t")
        )
        with pytest.raises(ValidationError, match="constant"):
            partial_r2(X, "c", ["t"])

    def test_target_in_conditioning_rejected(self):
        rng = np.random.default_rng(10)
        X = random_design(rng, n=20, p=2)
        with pytest.raises(ValidationError, match="target"):
            partial_r2(X, "x0", ["x0", "x1"])
