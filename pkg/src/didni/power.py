"""Closed-form power calculus for detection and non-inferiority z-tests.

Covers the minimum detectable effect, power to rule out a violation of a
given size, ordinary detection power (one- and two-sided, two-sample and
shifted-null variants), the variance-inflation lower bound from adding a
trend difference, and the empirical-power transform of a p-value (with its
health warning).

All formulas are z-based; passing ``df`` substitutes the t distribution with
that many degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import ndtr, ndtri
from scipy.stats import t as t_dist

from .exceptions import ValidationError


def _cdf(x: float, df: int | None) -> float:
    return float(t_dist.cdf(x, df)) if df is not None else float(ndtr(x))


def _ppf(q: float, df: int | None) -> float:
    return float(t_dist.ppf(q, df)) if df is not None else float(ndtri(q))


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")


def _check_sided(sided: str) -> None:
    if sided not in ("one", "two"):
        raise ValidationError("sided must be 'one' or 'two'")


def mde(
    n: int,
    sigma: float,
    alpha: float = 0.05,
    power: float = 0.8,
    sided: str = "one",
    df: int | None = None,
) -> float:
    """Smallest effect a level-alpha test detects with the given power.

    One-sided: theta* = (sigma/sqrt(n)) * (Phi^-1(power) - Phi^-1(alpha));
    the two-sided version uses alpha/2 (the far-tail contribution is
    neglected, as usual).
    """
    _check_alpha(alpha)
    _check_sided(sided)
    if n <= 0 or sigma <= 0:
        raise ValidationError("n and sigma must be positive")
    # power == alpha is the degenerate boundary (theta* = 0); below it the
    # request is contradictory
    if not (alpha <= power < 1.0):
        raise ValidationError("power must lie in [alpha, 1)")
    a = alpha / 2.0 if sided == "two" else alpha
    return (sigma / math.sqrt(n)) * (_ppf(power, df) - _ppf(a, df))


def ni_power(
    delta: float,
    true_theta: float,
    se: float,
    alpha: float = 0.05,
    sided: str = "one",
    df: int | None = None,
) -> float:
    """Probability of ruling out a violation of at least delta.

    One-sided: Phi(Phi^-1(alpha) + (delta - true_theta)/se). The two-sided
    version is the TOST power over (-delta, delta), which is slightly lower
    than the one-sided power at equal alpha.
    """
    _check_alpha(alpha)
    _check_sided(sided)
    if se <= 0:
        raise ValidationError("se must be positive")
    if sided == "one":
        return _cdf(_ppf(alpha, df) + (delta - true_theta) / se, df)
    if delta <= 0:
        raise ValidationError("two-sided ni power needs delta > 0")
    upper = _cdf(_ppf(alpha / 2.0, df) + (delta - true_theta) / se, df)
    lower = _cdf(_ppf(1.0 - alpha / 2.0, df) - (delta + true_theta) / se, df)
    return max(0.0, upper - lower)


def detection_power(
    theta: float,
    se: float,
    alpha: float = 0.05,
    sided: str = "one",
    theta0: float = 0.0,
    df: int | None = None,
) -> float:
    """Power of a z-test to detect an effect of size theta.

    ``theta0`` shifts the null (H0: theta <= theta0); the two-sided version
    sums both rejection tails, so at theta = theta0 it returns exactly alpha.
    """
    _check_alpha(alpha)
    _check_sided(sided)
    if se <= 0:
        raise ValidationError("se must be positive")
    shift = (theta - theta0) / se
    if sided == "one":
        return _cdf(_ppf(alpha, df) + shift, df)
    crit = _ppf(1.0 - alpha / 2.0, df)
    return _cdf(-crit + shift, df) + _cdf(-crit - shift, df)


def two_sample_se(sigma1: float, n1: int, sigma2: float, n2: int) -> float:
    """Standard error of a difference in means from two independent samples."""
    if sigma1 <= 0 or sigma2 <= 0 or n1 <= 0 or n2 <= 0:
        raise ValidationError("sample sizes and sigmas must be positive")
    return math.sqrt(sigma1**2 / n1 + sigma2**2 / n2)


def se_inflation_bound(r2_target_on_trend: float, r2_target_on_others: float) -> float:
    """Lower bound on the reduced-to-expanded variance ratio for an effect.

    Adding a trend-difference column inflates the effect's variance by at
    least 1 / bound, where bound = 1 - R2(effect | trend) /
    (1 - R2(effect | other reduced-model columns)).
    """
    for name, value in (
        ("r2_target_on_trend", r2_target_on_trend),
        ("r2_target_on_others", r2_target_on_others),
    ):
        if not (0.0 <= value < 1.0):
            raise ValidationError(f"{name} must lie in [0, 1)")
    return 1.0 - r2_target_on_trend / (1.0 - r2_target_on_others)


@dataclass(frozen=True)
class EmpiricalPower:
    """Observed-power transform of a p-value, flagged as unreliable.

    Empirical power is a bijection of the p-value, not new information, and
    publication bias makes it read high; the caveat travels with the number.
    """

    value: float
    p_value: float
    alpha: float
    caveat: str = (
        "empirical power is a transform of the p-value and is often "
        "artificially inflated; it is not evidence about true study power"
    )


def empirical_power(p_value: float, alpha: float = 0.05) -> EmpiricalPower:
    """Power to detect the observed effect, computed from its own p-value.

    Takes the two-sided Wald p-value, recovers z = Phi^-1(1 - p/2), and
    returns the probability that a replication is significant in the
    observed direction, Phi(z - z_{1-alpha/2}). That convention makes the
    fixed point exact: p = alpha maps to precisely 50% observed power.
    (Counting wrong-sign rejections too would add Phi(-z - z_{1-alpha/2}),
    at most a few 1e-5 anywhere near significance.)
    """
    _check_alpha(alpha)
    if not (0.0 < p_value < 1.0):
        raise ValidationError("p_value must lie strictly in (0, 1)")
    z = float(ndtri(1.0 - p_value / 2.0))
    crit = float(ndtri(1.0 - alpha / 2.0))
    value = float(ndtr(z - crit))
    return EmpiricalPower(value=value, p_value=p_value, alpha=alpha)
