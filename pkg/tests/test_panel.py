import numpy as np
import pytest

from didni.exceptions import ValidationError
from didni.linmod import ols_fit
from didni.panel import (
    DidModelSpec,
    PanelDataset,
    TrendSpec,
    build_design,
    pspline_fit,
    rcs_basis,
    trend_from_label,
)
from didni.simlab import ScenarioConfig, generate_panel


def tiny_panel(n_treated=1, n_comparison=1, t_max=4, t0=3, outcome=None):
    units, times, treated = [], [], []
    labels = [f"t{i}" for i in range(n_treated)] + [
        f"c{i}" for i in range(n_comparison)
    ]
    flags = [True] * n_treated + [False] * n_comparison
    for label, flag in zip(labels, flags):
        for t in range(1, t_max + 1):
            units.append(label)
            times.append(t)
            treated.append(flag)
    n = len(units)
    return PanelDataset(
        unit_ids=np.array(units),
        times=np.array(times),
        treated=np.array(treated),
        outcome=np.zeros(n) if outcome is None else np.asarray(outcome, dtype=float),
        t0=t0,
    )


class TestPanelValidation:
    def test_unbalanced_lists_missing_cells(self):
        with pytest.raises(ValidationError, match="missing cells"):
            PanelDataset(
                unit_ids=np.array(["a", "a", "b"]),
                times=np.array([1, 2, 1]),
                treated=np.array([True, True, False]),
                outcome=np.zeros(3),
                t0=2,
            )

    def test_duplicate_cell_rejected(self):
        with pytest.raises(ValidationError, match="duplicate"):
            PanelDataset(
                unit_ids=np.array(["a", "a", "a", "b", "b"]),
                times=np.array([1, 2, 2, 1, 2]),
                treated=np.array([True, True, True, False, False]),
                outcome=np.zeros(5),
                t0=2,
            )

    def test_times_must_start_at_one(self):
        with pytest.raises(ValidationError, match="contiguous"):
            PanelDataset(
                unit_ids=np.array(["a", "a", "b", "b"]),
                times=np.array([2, 3, 2, 3]),
                treated=np.array([True, True, False, False]),
                outcome=np.zeros(4),
                t0=3,
            )

    def test_t0_bounds(self):
        with pytest.raises(ValidationError, match="t0"):
            tiny_panel(t0=1)
        with pytest.raises(ValidationError, match="t0"):
            tiny_panel(t0=5)

    def test_treated_constant_within_unit(self):
        with pytest.raises(ValidationError, match="varies within unit"):
            PanelDataset(
                unit_ids=np.array(["a", "a", "b", "b"]),
                times=np.array([1, 2, 1, 2]),
                treated=np.array([True, False, False, False]),
                outcome=np.zeros(4),
                t0=2,
            )

    def test_needs_both_arms(self):
        with pytest.raises(ValidationError, match="at least one treated"):
            PanelDataset(
                unit_ids=np.array(["a", "a", "b", "b"]),
                times=np.array([1, 2, 1, 2]),
                treated=np.array([True, True, True, True]),
                outcome=np.zeros(4),
                t0=2,
            )

    def test_properties(self):
        panel = tiny_panel(t_max=5, t0=3)
        assert panel.t_max == 5
        assert panel.pre_times == (1, 2)
        assert panel.post_times == (3, 4, 5)
        assert panel.n_units == 2


class TestBuildDesign:
    def test_column_count_no_trend(self):
        # 2 units x 4 times, T0=3: intercept + 1 unit dummy + 3 time dummies
        # + effect indicators at times 3 and 4
        panel = tiny_panel()
        X, y, effect_cols = build_design(panel, DidModelSpec())
        assert X.n_cols == 1 + 1 + 3 + 2
        assert effect_cols == ["effect::3", "effect::4"]
        assert y.shape == (8,)

    def test_linear_trend_adds_d_times_t(self):
        panel = tiny_panel()
        X, _, _ = build_design(panel, DidModelSpec(trend=TrendSpec.poly(1)))
        assert X.n_cols == 1 + 1 + 3 + 2 + 1
        d_t = panel.treated.astype(float) * panel.times
        assert np.array_equal(X.column("trend::t1"), d_t)

    def test_placebo_window_drops_post_rows(self):
        panel = tiny_panel(t_max=4, t0=3)
        spec = DidModelSpec(effect_window=(2,))
        X, y, effect_cols = build_design(panel, spec)
        assert effect_cols == ["effect::2"]
        assert X.n_rows == 4  # 2 units x pre times {1, 2}
        assert all(not c.startswith("effect::3") for c in X.column_names)

    def test_partial_post_window_rejected(self):
        panel = tiny_panel(t_max=4, t0=3)
        with pytest.raises(ValidationError, match="full post period"):
            build_design(panel, DidModelSpec(effect_window=(3,)))

    def test_window_must_be_contiguous(self):
        with pytest.raises(ValidationError, match="contiguous"):
            DidModelSpec(effect_window=(1, 3))

    def test_trend_block_only_adds_columns(self):
        cfg = ScenarioConfig(
            n_treated=3, n_comparison=4, n_pre=6, n_post=4, trials=1, seed=0
        )
        panel = generate_panel(cfg, 0)
        base, _, _ = build_design(panel, DidModelSpec())
        for trend, extra in [
            (TrendSpec.poly(1), 1),
            (TrendSpec.poly(2), 2),
            (TrendSpec.poly(3), 3),
            (TrendSpec.rcs(), 2),
        ]:
            X, _, _ = build_design(panel, DidModelSpec(trend=trend))
            assert X.n_rows == base.n_rows
            assert X.n_cols == base.n_cols + extra

    def test_average_effect_equals_collapsed_two_by_two_did(self):
        rng = np.random.default_rng(14)
        for seed in range(4):
            cfg = ScenarioConfig(
                n_treated=int(rng.integers(2, 6)),
                n_comparison=int(rng.integers(2, 8)),
                n_pre=int(rng.integers(2, 6)),
                n_post=int(rng.integers(2, 6)),
                violation="linear",
                effect_sd=0.7,
                violation_slope=0.1,
                trials=1,
                seed=seed,
            )
            panel = generate_panel(cfg, 0)
            X, y, effect_cols = build_design(panel, DidModelSpec())
            fit = ols_fit(X, y)
            avg, _ = fit.linear_combination(effect_cols)
            d = panel.treated
            post = panel.times >= panel.t0
            collapsed = (
                y[d & post].mean()
                - y[d & ~post].mean()
                - (y[~d & post].mean() - y[~d & ~post].mean())
            )
            assert avg == pytest.approx(collapsed, abs=1e-8)

    def test_effects_invariant_to_unit_relabeling(self):
        cfg = ScenarioConfig(
            n_treated=3, n_comparison=5, n_pre=4, n_post=3, trials=1, seed=5
        )
        panel = generate_panel(cfg, 0)
        X, y, effect_cols = build_design(panel, DidModelSpec(trend=TrendSpec.poly(1)))
        fit = ols_fit(X, y)
        relabeled = PanelDataset(
            unit_ids=np.array([f"zz_{u}" for u in panel.unit_ids]),
            times=panel.times,
            treated=panel.treated,
            outcome=panel.outcome,
            t0=panel.t0,
        )
        X2, y2, _ = build_design(relabeled, DidModelSpec(trend=TrendSpec.poly(1)))
        fit2 = ols_fit(X2, y2)
        for c in effect_cols:
            assert fit2.coef(c) == pytest.approx(fit.coef(c), abs=1e-9)

    def test_subgroup_column(self):
        panel = tiny_panel(n_treated=1, n_comparison=2)
        sub = np.array([u == "c1" for u in panel.unit_ids])
        with_sub = PanelDataset(
            unit_ids=panel.unit_ids,
            times=panel.times,
            treated=panel.treated,
            outcome=panel.outcome,
            t0=panel.t0,
            subgroup=sub,
        )
        X, _, _ = build_design(
            with_sub, DidModelSpec(include_subgroup_effect=True)
        )
        expected = ((panel.times >= panel.t0) & sub).astype(float)
        assert np.array_equal(X.column("subgroup::post"), expected)

    def test_subgroup_requested_without_labels(self):
        panel = tiny_panel()
        with pytest.raises(ValidationError, match="subgroup"):
            build_design(panel, DidModelSpec(include_subgroup_effect=True))


class TestRcsBasis:
    def test_needs_four_distinct_times(self):
        with pytest.raises(ValidationError, match="4 distinct"):
            rcs_basis([1, 2, 3], knot=2)

    def test_zero_below_and_linear_beyond_boundaries(self):
        times = np.arange(1.0, 10.0)
        basis = rcs_basis(times, knot=5.0)
        cubic = basis[:, 1]
        assert cubic[0] == pytest.approx(0.0, abs=1e-12)
        # evaluate beyond the upper boundary: second differences vanish there
        far = np.array([9.0, 11.0, 13.0, 15.0, 17.0])
        ext = rcs_basis(far, knot=5.0, boundary=(1.0, 9.0))[:, 1]
        second_diff = np.diff(ext, n=2)
        assert np.abs(second_diff).max() < 1e-10

    def test_smoothness_on_fine_grid(self):
        # derived check: continuous value, first, and second differences
        grid = np.linspace(1.0, 9.0, 4001)
        h = grid[1] - grid[0]
        cubic = rcs_basis(grid, knot=5.0, boundary=(1.0, 9.0))[:, 1]
        first = np.diff(cubic) / h
        second = np.diff(first) / h
        assert np.abs(np.diff(cubic)).max() < 10 * h  # value continuity
        assert np.abs(np.diff(first)).max() < 10 * h  # C1
        assert np.abs(np.diff(second)).max() < 10 * h  # C2 (jumps only in 3rd)

    def test_affine_time_shift_leaves_fitted_values_unchanged(self):
        rng = np.random.default_rng(17)
        times = np.arange(1.0, 11.0)
        y = rng.normal(size=10)
        for shift in (0.0, 3.0, -2.5):
            t = times + shift
            basis = rcs_basis(t, knot=float(np.median(t)))
            Z = np.column_stack([np.ones(10), basis])
            fitted = Z @ np.linalg.lstsq(Z, y, rcond=None)[0]
            if shift == 0.0:
                reference = fitted
            else:
                assert np.allclose(fitted, reference, atol=1e-8)

    def test_knot_inside_boundaries(self):
        with pytest.raises(ValidationError, match="strictly between"):
            rcs_basis(np.arange(1.0, 10.0), knot=9.0)


class TestTrendSpec:
    def test_poly_degree_validation(self):
        with pytest.raises(ValidationError, match="degree"):
            TrendSpec.poly(4)

    def test_pspline_grid_validation(self):
        with pytest.raises(ValidationError, match="positive"):
            TrendSpec.pspline(lambda_grid=[0.0, 1.0])
        with pytest.raises(ValidationError, match="increasing"):
            TrendSpec.pspline(lambda_grid=[1.0, 1.0])
        with pytest.raises(ValidationError, match="basis_size"):
            TrendSpec.pspline(basis_size=3)

    def test_labels(self):
        assert trend_from_label("quad").label == "quadratic"
        assert trend_from_label("none").label == "none"
        with pytest.raises(ValidationError, match="unknown trend"):
            trend_from_label("spline9000")


class TestPspline:
    def test_huge_lambda_reproduces_linear_trend_fit(self):
        cfg = ScenarioConfig(
            n_treated=5, n_comparison=8, n_pre=15, n_post=10,
            violation="linear", effect_sd=1.0, violation_slope=0.08,
            trials=1, seed=11,
        )
        panel = generate_panel(cfg, 0)
        Xl, yl, effect_cols = build_design(panel, DidModelSpec(trend=TrendSpec.poly(1)))
        linear = ols_fit(Xl, yl)
        ps = pspline_fit(
            panel,
            DidModelSpec(trend=TrendSpec.pspline(basis_size=8, lambda_grid=[1e12])),
        )
        for c in effect_cols:
            assert ps.fit.coef(c) == pytest.approx(linear.coef(c), abs=1e-4)

    def test_single_lambda_grid_is_returned(self):
        cfg = ScenarioConfig(
            n_treated=4, n_comparison=6, n_pre=8, n_post=4, trials=1, seed=2
        )
        panel = generate_panel(cfg, 0)
        ps = pspline_fit(
            panel, DidModelSpec(trend=TrendSpec.pspline(basis_size=6, lambda_grid=[3.5]))
        )
        assert ps.lambda_ == 3.5

    def test_gcv_prefers_smooth_fit_on_null_trend_data(self):
        cfg = ScenarioConfig(
            n_treated=25, n_comparison=50, n_pre=15, n_post=10,
            violation="none", effect_sd=1.0, trials=1, seed=21,
        )
        panel = generate_panel(cfg, 0)
        times = np.arange(1.0, panel.t_max + 1)
        rough = pspline_fit(
            panel, DidModelSpec(trend=TrendSpec.pspline(basis_size=8, lambda_grid=[1e-4]))
        )
        smooth = pspline_fit(
            panel, DidModelSpec(trend=TrendSpec.pspline(basis_size=8, lambda_grid=[1e8]))
        )
        assert np.ptp(smooth.trend_values(times)) < np.ptp(rough.trend_values(times))
        # effect recovered within 2 standard errors of the truth
        ps = pspline_fit(panel, DidModelSpec(trend=TrendSpec.pspline(basis_size=8)))
        est, se = ps.fit.linear_combination(list(ps.effect_cols))
        assert abs(est - 1.0) < 2.0 * se

    def test_warns_on_short_pre_period(self):
        cfg = ScenarioConfig(
            n_treated=4, n_comparison=6, n_pre=5, n_post=4, trials=1, seed=3
        )
        panel = generate_panel(cfg, 0)
        with pytest.warns(UserWarning, match="pre-intervention"):
            pspline_fit(panel, DidModelSpec(trend=TrendSpec.pspline(basis_size=6)))

    def test_requires_pspline_spec(self):
        panel = tiny_panel()
        with pytest.raises(ValidationError, match="pspline"):
            pspline_fit(panel, DidModelSpec(trend=TrendSpec.poly(1)))
