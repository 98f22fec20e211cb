import numpy as np
import pytest
from scipy.special import ndtr, ndtri
from scipy.stats import t as t_dist

from didni.exceptions import ValidationError
from didni.power import (
    detection_power,
    empirical_power,
    mde,
    ni_power,
    se_inflation_bound,
    two_sample_se,
)


class TestMde:
    def test_quantile_arithmetic(self):
        value = mde(100, 1.0, alpha=0.05, power=0.8, sided="one")
        assert value == pytest.approx((0.8416 + 1.6449) / 10.0, abs=1e-4)

    def test_power_at_alpha_boundary_is_zero(self):
        assert mde(50, 1.0, alpha=0.05, power=0.05) == pytest.approx(0.0, abs=1e-12)

    def test_root_n_scaling(self):
        assert mde(400, 1.0) == pytest.approx(mde(100, 1.0) / 2.0, abs=1e-12)

    def test_two_sided_uses_half_alpha(self):
        one = mde(100, 1.0, alpha=0.025, sided="one")
        two = mde(100, 1.0, alpha=0.05, sided="two")
        assert one == pytest.approx(two, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValidationError, match="power"):
            mde(100, 1.0, power=0.01)
        with pytest.raises(ValidationError, match="positive"):
            mde(0, 1.0)
        with pytest.raises(ValidationError, match="positive"):
            mde(10, -1.0)

    def test_t_reference(self):
        z_based = mde(100, 1.0, df=None)
        t_based = mde(100, 1.0, df=5)
        oracle = (1.0 / 10.0) * (t_dist.ppf(0.8, 5) - t_dist.ppf(0.05, 5))
        assert t_based == pytest.approx(oracle, abs=1e-12)
        assert t_based > z_based


class TestNiPower:
    def test_prop3_roundtrip_identity(self):
        n, sigma = 100, 1.0
        se = sigma / np.sqrt(n)
        for beta in (0.2, 0.1, 0.05):
            theta_star = mde(n, sigma, alpha=0.05, power=1 - beta, sided="one")
            assert ni_power(theta_star, 0.0, se, alpha=0.05, sided="one") == (
                pytest.approx(1 - beta, abs=1e-12)
            )

    def test_true_theta_at_delta_gives_alpha(self):
        assert ni_power(0.4, 0.4, 0.1, alpha=0.05, sided="one") == pytest.approx(
            0.05, abs=1e-12
        )

    def test_half_mde_power(self):
        theta_star = mde(100, 1.0, alpha=0.05, power=0.8, sided="one")
        power = ni_power(0.5 * theta_star, 0.0, 0.1, alpha=0.05, sided="one")
        assert power == pytest.approx(0.344, abs=5e-4)
        # the published narrative reports ~31%; agreement within 4 pp
        assert abs(power - 0.31) <= 0.04

    def test_two_sided_matches_tost_closed_form_at_zero(self):
        # at theta = 0 the TOST power is 2 * Phi(z_{a/2} + delta/se) - 1
        delta, se, alpha = 0.3, 0.1, 0.05
        expected = 2.0 * ndtr(ndtri(alpha / 2.0) + delta / se) - 1.0
        assert ni_power(delta, 0.0, se, alpha=alpha, sided="two") == pytest.approx(
            expected, abs=1e-12
        )

    def test_two_sided_below_one_sided(self):
        for delta in (0.05, 0.2, 0.4):
            one = ni_power(delta, 0.0, 0.1, sided="one")
            two = ni_power(delta, 0.0, 0.1, sided="two")
            assert two <= one + 1e-12

    def test_monotone_in_delta_and_theta(self):
        deltas = np.linspace(0.05, 0.8, 12)
        powers = [ni_power(d, 0.0, 0.1, sided="one") for d in deltas]
        assert all(a < b for a, b in zip(powers, powers[1:]))
        thetas = np.linspace(0.0, 0.5, 12)
        powers = [ni_power(0.4, t, 0.1, sided="one") for t in thetas]
        assert all(a > b for a, b in zip(powers, powers[1:]))

    def test_validation(self):
        with pytest.raises(ValidationError, match="se"):
            ni_power(0.3, 0.0, 0.0)
        with pytest.raises(ValidationError, match="delta"):
            ni_power(-0.3, 0.0, 0.1, sided="two")


class TestDetectionPower:
    def test_eighty_percent_point(self):
        assert detection_power(0.24865, 0.1, alpha=0.05, sided="one") == (
            pytest.approx(0.800, abs=1e-3)
        )

    def test_size_equals_level_at_null(self):
        assert detection_power(0.0, 0.2, alpha=0.05, sided="two") == pytest.approx(
            0.05, abs=1e-12
        )

    def test_two_sample_reduction(self):
        sigma, n = 1.0, 200
        se = two_sample_se(sigma, n, sigma, n)
        assert se == pytest.approx(sigma * np.sqrt(2.0 / n), abs=1e-12)
        direct = detection_power(0.3, se, sided="one")
        one_sample = detection_power(0.3, sigma / np.sqrt(n / 2.0), sided="one")
        assert direct == pytest.approx(one_sample, abs=1e-12)

    def test_shifted_null(self):
        base = detection_power(0.5, 0.1, sided="one")
        shifted = detection_power(0.8, 0.1, theta0=0.3, sided="one")
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_monotone_in_magnitude(self):
        thetas = np.linspace(0.0, 1.0, 15)
        powers = [detection_power(t, 0.2, sided="two") for t in thetas]
        assert all(a <= b + 1e-12 for a, b in zip(powers, powers[1:]))

    def test_t_reference(self):
        z_power = detection_power(0.3, 0.1, sided="two")
        t_power = detection_power(0.3, 0.1, sided="two", df=8)
        crit = t_dist.ppf(0.975, 8)
        oracle = t_dist.cdf(-crit + 3.0, 8) + t_dist.cdf(-crit - 3.0, 8)
        assert t_power == pytest.approx(oracle, abs=1e-12)
        assert t_power < z_power


@pytest.fixture(scope="module")
def draws():
    rng = np.random.default_rng(987)
    return rng.normal(size=20_000) / np.sqrt(1000)  # X-bar under theta=0


class TestMonteCarloAgreement:
    """Closed-form powers vs empirical rejection rates of actual z-tests."""

    N = 1000
    REPS = 20_000

    def test_one_sided_detection(self, draws):
        theta, alpha = 0.08, 0.05
        se = 1.0 / np.sqrt(self.N)
        stats = (draws + theta) / se
        rate = float(np.mean(stats > ndtri(1 - alpha)))
        assert abs(rate - detection_power(theta, se, alpha=alpha, sided="one")) < 0.01

    def test_two_sided_detection(self, draws):
        theta, alpha = 0.08, 0.05
        se = 1.0 / np.sqrt(self.N)
        stats = np.abs((draws + theta) / se)
        rate = float(np.mean(stats > ndtri(1 - alpha / 2)))
        assert abs(rate - detection_power(theta, se, alpha=alpha, sided="two")) < 0.01

    def test_one_sided_ni(self, draws):
        delta, alpha = 0.078, 0.05
        se = 1.0 / np.sqrt(self.N)
        stats = (draws - delta) / se  # true theta = 0
        rate = float(np.mean(stats < ndtri(alpha)))
        assert abs(rate - ni_power(delta, 0.0, se, alpha=alpha, sided="one")) < 0.01

    def test_tost(self, draws):
        delta, alpha = 0.078, 0.05
        se = 1.0 / np.sqrt(self.N)
        low = (draws - delta) / se < ndtri(alpha / 2)
        high = (draws + delta) / se > ndtri(1 - alpha / 2)
        rate = float(np.mean(low & high))
        assert abs(rate - ni_power(delta, 0.0, se, alpha=alpha, sided="two")) < 0.01


class TestSeInflationBound:
    def test_orthogonal_trend(self):
        assert se_inflation_bound(0.0, 0.3) == pytest.approx(1.0)

    def test_arithmetic(self):
        assert se_inflation_bound(0.2, 0.5) == pytest.approx(0.6)

    def test_domain(self):
        with pytest.raises(ValidationError):
            se_inflation_bound(-0.1, 0.5)
        with pytest.raises(ValidationError):
            se_inflation_bound(0.2, 1.0)

    def test_bound_holds_on_simulated_designs(self):
        # fit-both-models oracle with the R^2-increment numerator: the
        # variance ratio identity makes the bound hold for every effect column
        from didni.linmod import OlsSolver, partial_r2
        from didni.panel import DidModelSpec, TrendSpec, build_design
        from didni.simlab import ScenarioConfig, generate_panel

        rng = np.random.default_rng(0)
        for _ in range(8):
            cfg = ScenarioConfig(
                n_treated=int(rng.integers(3, 8)),
                n_comparison=int(rng.integers(4, 10)),
                n_pre=int(rng.integers(3, 8)),
                n_post=int(rng.integers(2, 6)),
                trials=1,
                seed=int(rng.integers(1e6)),
            )
            panel = generate_panel(cfg, 0)
            Xr, _, effect_cols = build_design(panel, DidModelSpec())
            Xe, _, _ = build_design(panel, DidModelSpec(trend=TrendSpec.poly(1)))
            red = OlsSolver(Xr)
            exp = OlsSolver(Xe)
            for c in effect_cols:
                others = [x for x in Xr.column_names if x != c]
                r2_others = partial_r2(Xr, c, others)
                # trend's share of the effect's variance beyond the others
                r2_gain = partial_r2(Xe, c, others + ["trend::t1"]) - r2_others
                bound = se_inflation_bound(r2_gain, r2_others)
                j_r = Xr.column_index(c)
                j_e = Xe.column_index(c)
                realized = red.xtx_inv[j_r, j_r] / exp.xtx_inv[j_e, j_e]
                assert realized >= bound - 1e-9


class TestEmpiricalPower:
    def test_fixed_point_exact(self):
        assert empirical_power(0.05, alpha=0.05).value == pytest.approx(0.5, abs=1e-12)

    def test_monotone_decreasing_with_floor(self):
        ps = np.linspace(0.001, 0.999, 40)
        values = [empirical_power(p).value for p in ps]
        assert all(a > b for a, b in zip(values, values[1:]))
        # observed-direction convention: the p -> 1 floor is alpha / 2
        assert values[-1] < 0.05

    def test_transform_value(self):
        # directional transform of z = 1: Phi(1 - 1.96)
        assert empirical_power(0.3173).value == pytest.approx(
            float(ndtr(1.0 - ndtri(0.975))), abs=1e-4
        )

    def test_carries_caveat(self):
        result = empirical_power(0.01)
        assert "inflated" in result.caveat

    def test_domain(self):
        with pytest.raises(ValidationError):
            empirical_power(0.0)
        with pytest.raises(ValidationError):
            empirical_power(1.0)
