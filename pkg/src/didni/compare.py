"""Comparing treatment effects across nested DID specifications and casting
the comparison as non-inferiority / equivalence tests.

Three routes to the sampling distribution of the difference in average
effects (kappa):

* ``compare_scale_factor``  — exact linear transform of the differential
  slope: kappa = W * theta_hat, with W the post-minus-pre mean time index.
* ``compare_variance_difference`` — nested-model variance difference for the
  averaged effect under iid errors.
* ``compare_resampled`` — cluster bootstrap or randomization inference for
  anything the closed forms do not cover (robust errors, spline trends).

``ni_test``/``ni_curve`` turn a kappa and its standard error into
non-inferiority verdicts and p-value curves; ``one_step_up`` wraps the whole
base-versus-simpler-model procedure.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .exceptions import ComputationError, ValidationError
from .linmod import DesignMatrix, FitResult, ols_fit
from .panel import (
    DidModelSpec,
    PanelDataset,
    TrendSpec,
    build_design,
    pspline_fit,
    trend_row_values,
)

RESAMPLING_METHODS = ("cluster_bootstrap", "randomization")


# ---------------------------------------------------------------------------
# Effect summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectSummary:
    """Per-period treatment effects plus their equal-weight average.

    The average standard error comes from the full covariance block of the
    effect coefficients, not from the per-period standard errors alone.
    """

    window: tuple[int, ...]
    per_period: dict[int, tuple[float, float]]
    average: float
    average_se: float

    def as_rows(self) -> list[dict]:
        rows = [
            {"time": k, "estimate": est, "se": se}
            for k, (est, se) in sorted(self.per_period.items())
        ]
        rows.append({"time": "average", "estimate": self.average, "se": self.average_se})
        return rows


def summarize_effects(
    fit: FitResult, effect_cols: Sequence[str], window: Sequence[int]
) -> EffectSummary:
    if len(effect_cols) != len(window):
        raise ValidationError("effect columns and window lengths differ")
    per_period = {
        int(k): (fit.coef(c), fit.se(c)) for k, c in zip(window, effect_cols)
    }
    average, average_se = fit.linear_combination(list(effect_cols))
    return EffectSummary(
        window=tuple(int(k) for k in window),
        per_period=per_period,
        average=average,
        average_se=average_se,
    )


# ---------------------------------------------------------------------------
# Scale factor (Proposition-1 route)
# ---------------------------------------------------------------------------


def scale_factor_w(t0: int, t_max: int) -> float:
    """Mean post-period time index minus mean pre-period time index.

    Converts a differential slope into a difference in average treatment
    effects. Uses the true period counts (t_max - t0 + 1 post periods,
    t0 - 1 pre periods).
    """
    if not (2 <= t0 <= t_max):
        raise ValidationError(f"need 2 <= t0 <= t_max, got t0={t0}, t_max={t_max}")
    post_mean = (t0 + t_max) / 2.0
    pre_mean = (1 + (t0 - 1)) / 2.0
    return post_mean - pre_mean


@dataclass(frozen=True)
class ComparisonResult:
    """Difference in average treatment effects between two specifications."""

    kappa: float
    se_kappa: float
    method: str
    ci: tuple[float, float]
    alpha: float
    scale_factor_w: float | None = None
    p_value: float | None = None
    replicates: np.ndarray | None = None
    variance_clamped: bool = False

    def __eq__(self, other):
        if not isinstance(other, ComparisonResult):
            return NotImplemented
        same_reps = (
            self.replicates is None
            and other.replicates is None
        ) or (
            self.replicates is not None
            and other.replicates is not None
            and np.array_equal(self.replicates, other.replicates)
        )
        return same_reps and (
            self.kappa,
            self.se_kappa,
            self.method,
            self.ci,
            self.alpha,
            self.scale_factor_w,
            self.p_value,
            self.variance_clamped,
        ) == (
            other.kappa,
            other.se_kappa,
            other.method,
            other.ci,
            other.alpha,
            other.scale_factor_w,
            other.p_value,
            other.variance_clamped,
        )


def _normal_ci(kappa: float, se: float, alpha: float) -> tuple[float, float]:
    z = ndtri(1.0 - alpha / 2.0)
    return (kappa - z * se, kappa + z * se)


def compare_scale_factor(
    fit_expanded: FitResult,
    data: PanelDataset,
    alpha: float = 0.05,
    trend_col: str = "trend::t1",
) -> ComparisonResult:
    """Kappa from the linear-trend coefficient: kappa = W * theta_hat.

    Requires the expanded fit to contain the differential-slope column; the
    standard error is |W| times the slope's standard error.
    """
    if trend_col not in fit_expanded.column_names:
        raise ValidationError(
            f"expanded fit has no {trend_col!r} column; fit a linear trend-difference model first"
        )
    w = scale_factor_w(data.t0, data.t_max)
    theta = fit_expanded.coef(trend_col)
    se_theta = fit_expanded.se(trend_col)
    kappa = w * theta
    se = abs(w) * se_theta
    return ComparisonResult(
        kappa=kappa,
        se_kappa=se,
        method="scale_factor",
        ci=_normal_ci(kappa, se, alpha),
        alpha=alpha,
        scale_factor_w=w,
    )


# ---------------------------------------------------------------------------
# Variance difference (Proposition-2 route)
# ---------------------------------------------------------------------------


def spans_nested(reduced: "DesignMatrix", expanded: "DesignMatrix") -> bool:
    """Whether every reduced column lies in the expanded column span.

    Catches nestings the column names cannot express, like the linear trend
    inside a restricted-cubic-spline basis.
    """
    coef, *_ = np.linalg.lstsq(expanded.values, reduced.values, rcond=None)
    resid = reduced.values - expanded.values @ coef
    scale = max(float(np.abs(reduced.values).max()), 1.0)
    return bool(np.abs(resid).max() <= 1e-8 * scale)


def compare_variance_difference(
    fit_reduced: FitResult,
    fit_expanded: FitResult,
    effect_cols: Sequence[str],
    alpha: float = 0.05,
    nested_checked: bool = False,
) -> ComparisonResult:
    """Kappa with variance Var_exp(avg) - Var_red(avg) * sigma2_exp / sigma2_red.

    Both fits must be iid OLS on identical rows with the reduced regressors a
    subset of the expanded ones (``nested_checked=True`` skips the name-based
    subset test for callers that have verified nesting by column spans). A
    negative variance estimate (possible in finite samples when the added
    columns are nearly orthogonal to the effects) is clamped to zero with a
    warning; prefer ``compare_resampled`` in that situation.
    """
    if fit_reduced.vcov_kind != "iid" or fit_expanded.vcov_kind != "iid":
        raise ValidationError(
            "variance-difference comparison requires iid fits; "
            "use compare_resampled for robust or clustered errors"
        )
    if fit_reduced.n_obs != fit_expanded.n_obs:
        raise ValidationError("fits were produced from different row sets")
    if not nested_checked and not set(fit_reduced.column_names) <= set(
        fit_expanded.column_names
    ):
        raise ValidationError("models are not nested (reduced columns must be a subset)")
    effect_cols = list(effect_cols)
    avg_red, se_red = fit_reduced.linear_combination(effect_cols)
    avg_exp, se_exp = fit_expanded.linear_combination(effect_cols)
    kappa = avg_red - avg_exp

    variance = se_exp**2 - se_red**2 * (fit_expanded.sigma2 / fit_reduced.sigma2)
    clamped = False
    if variance < 0.0:
        warnings.warn(
            "variance-difference estimate is negative and was clamped to 0; "
            "the added columns are nearly orthogonal to the effects in this "
            "sample - consider compare_resampled",
            stacklevel=2,
        )
        variance = 0.0
        clamped = True
    se = float(np.sqrt(variance))
    return ComparisonResult(
        kappa=kappa,
        se_kappa=se,
        method="variance_difference",
        ci=_normal_ci(kappa, se, alpha),
        alpha=alpha,
        variance_clamped=clamped,
    )


# ---------------------------------------------------------------------------
# Resampling (bootstrap / randomization) route
# ---------------------------------------------------------------------------


def _average_effect(data: PanelDataset, spec: DidModelSpec) -> float:
    if spec.trend.kind == "pspline":
        ps = pspline_fit(data, spec)
        est, _ = ps.fit.linear_combination(list(ps.effect_cols))
        return est
    X, y, effect_cols = build_design(data, spec)
    fit = ols_fit(X, y)
    est, _ = fit.linear_combination(effect_cols)
    return est


def _kappa(data: PanelDataset, spec_reduced: DidModelSpec, spec_expanded: DidModelSpec) -> float:
    return _average_effect(data, spec_reduced) - _average_effect(data, spec_expanded)


def _unit_table(data: PanelDataset) -> tuple[list, np.ndarray]:
    units = list(data.units)
    treated = np.array(
        [bool(data.treated[data.unit_ids == u][0]) for u in units]
    )
    return units, treated


def _permutation_entities(data: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    """(entity flags, row->entity index) for label permutation.

    Treatment is reassigned across clusters when cluster ids exist (treatment
    must then be constant within clusters), across units otherwise.
    """
    if data.cluster_ids is not None:
        clusters = np.unique(data.cluster_ids)
        flags = []
        for c in clusters:
            vals = np.unique(data.treated[data.cluster_ids == c])
            if vals.size != 1:
                raise ValidationError(
                    "randomization at the cluster level needs treatment constant "
                    f"within clusters; cluster {c!r} mixes treated and comparison units"
                )
            flags.append(bool(vals[0]))
        index = {c: i for i, c in enumerate(clusters.tolist())}
        row_entity = np.array([index[c] for c in data.cluster_ids.tolist()])
        return np.array(flags), row_entity
    units, unit_treated = _unit_table(data)
    index = {u: i for i, u in enumerate(units)}
    row_entity = np.array([index[u] for u in data.unit_ids.tolist()])
    return unit_treated, row_entity


def _permuted_treated(data: PanelDataset, rng: np.random.Generator) -> np.ndarray:
    """Treated labels permuted across units, or across clusters when present."""
    flags, row_entity = _permutation_entities(data)
    return rng.permutation(flags)[row_entity]


def _batched_avg_effects(
    data: PanelDataset,
    spec: DidModelSpec,
    d_rows: np.ndarray,
    qf: np.ndarray,
    y_resid: np.ndarray,
    e0: np.ndarray,
) -> np.ndarray:
    """Averaged effect estimates under many treated-label assignments.

    Only the effect indicators and trend interactions depend on the labels,
    so the fixed block (dummies, intercept, subgroup) is residualized out
    once, and each assignment reduces to a small batched normal-equations
    solve. Exact FWL algebra, identical to refitting the full model.
    """
    rows = np.ones(data.n_rows, dtype=bool)
    trend_raw, _ = trend_row_values(data, spec.trend, rows)
    n_eff = e0.shape[1]
    n_perm, n = d_rows.shape
    k = n_eff + trend_raw.shape[1]
    averages = np.empty(n_perm)
    w = np.full(n_eff, 1.0 / n_eff)
    chunk = max(1, int(4_000_000 // max(n * k, 1)))
    for start in range(0, n_perm, chunk):
        d_chunk = d_rows[start : start + chunk]
        z = np.empty((d_chunk.shape[0], n, k))
        z[:, :, :n_eff] = e0[None, :, :] * d_chunk[:, :, None]
        if k > n_eff:
            z[:, :, n_eff:] = trend_raw[None, :, :] * d_chunk[:, :, None]
        qtz = np.einsum("np,bnk->bpk", qf, z)
        z -= np.einsum("np,bpk->bnk", qf, qtz)
        gram = np.einsum("bnk,bnl->bkl", z, z)
        rhs = np.einsum("bnk,n->bk", z, y_resid)
        try:
            coef = np.linalg.solve(gram, rhs[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise ComputationError(
                "a permuted design was singular; the panel cannot support "
                "randomization inference for this specification"
            ) from exc
        averages[start : start + chunk] = coef[:, :n_eff] @ w
    return averages


def _randomization_kappas(
    data: PanelDataset,
    spec_reduced: DidModelSpec,
    spec_expanded: DidModelSpec,
    rng: np.random.Generator,
    replications: int,
) -> np.ndarray:
    """Cross-model effect differences under permuted treatment labels."""
    flags, row_entity = _permutation_entities(data)
    fast = (
        spec_reduced.include_subgroup_effect == spec_expanded.include_subgroup_effect
        and all(
            spec.trend.kind != "pspline" and not spec.resolve_window(data)[1]
            for spec in (spec_reduced, spec_expanded)
        )
    )
    if not fast:
        reps = np.empty(replications)
        for b in range(replications):
            permuted = replace(data, treated=rng.permutation(flags)[row_entity])
            reps[b] = _kappa(permuted, spec_reduced, spec_expanded)
        return reps
    perm_flags = np.stack([rng.permutation(flags) for _ in range(replications)])
    d_rows = perm_flags[:, row_entity].astype(float)
    X, y, _ = build_design(
        data,
        DidModelSpec(
            trend=TrendSpec.none(),
            include_subgroup_effect=spec_expanded.include_subgroup_effect,
        ),
    )
    fixed_idx = [
        j for j, c in enumerate(X.column_names) if not c.startswith("effect::")
    ]
    f_block = X.values[:, fixed_idx]
    qf, _ = np.linalg.qr(f_block)
    y_resid = y - qf @ (qf.T @ y)
    e0 = np.column_stack(
        [(data.times == k).astype(float) for k in data.post_times]
    )
    avg_red = _batched_avg_effects(data, spec_reduced, d_rows, qf, y_resid, e0)
    avg_exp = _batched_avg_effects(data, spec_expanded, d_rows, qf, y_resid, e0)
    return avg_red - avg_exp


def _bootstrap_dataset(
    data: PanelDataset, rng: np.random.Generator
) -> PanelDataset:
    """Resample clusters with replacement, stratified by treatment arm when
    clusters do not straddle arms (this keeps both arms populated)."""
    clusters = np.unique(data.cluster_ids)
    pure = True
    arm = {}
    for c in clusters:
        vals = np.unique(data.treated[data.cluster_ids == c])
        if vals.size != 1:
            pure = False
            break
        arm[c] = bool(vals[0])

    for _ in range(1000):
        if pure:
            treated_cl = [c for c in clusters if arm[c]]
            control_cl = [c for c in clusters if not arm[c]]
            draw = list(rng.choice(treated_cl, size=len(treated_cl), replace=True))
            draw += list(rng.choice(control_cl, size=len(control_cl), replace=True))
        else:
            draw = list(rng.choice(clusters, size=len(clusters), replace=True))
        parts = {"unit": [], "time": [], "treated": [], "outcome": [], "cluster": []}
        sub_parts = [] if data.subgroup is not None else None
        for i, c in enumerate(draw):
            mask = data.cluster_ids == c
            parts["unit"].extend(
                f"{u}#{i}" for u in data.unit_ids[mask].tolist()
            )
            parts["time"].extend(data.times[mask].tolist())
            parts["treated"].extend(data.treated[mask].tolist())
            parts["outcome"].extend(data.outcome[mask].tolist())
            parts["cluster"].extend(f"{c}#{i}" for _ in range(int(mask.sum())))
            if sub_parts is not None:
                sub_parts.extend(data.subgroup[mask].tolist())
        treated = np.array(parts["treated"], dtype=bool)
        if treated.any() and not treated.all():
            return PanelDataset(
                unit_ids=np.array(parts["unit"]),
                times=np.array(parts["time"]),
                treated=treated,
                outcome=np.array(parts["outcome"]),
                t0=data.t0,
                cluster_ids=np.array(parts["cluster"]),
                subgroup=np.array(sub_parts, dtype=bool) if sub_parts is not None else None,
            )
    raise ComputationError("could not draw a bootstrap replicate with both arms")


def compare_resampled(
    data: PanelDataset,
    spec_reduced: DidModelSpec,
    spec_expanded: DidModelSpec,
    method: str = "randomization",
    replications: int = 999,
    seed: int = 0,
    alpha: float = 0.05,
    ci_grid: Sequence[float] | None = None,
) -> ComparisonResult:
    """Resampled sampling distribution for the cross-model effect difference.

    * ``cluster_bootstrap``: clusters resampled with replacement (stratified
      by arm when clusters align with treatment); percentile CI and replicate
      standard deviation.
    * ``randomization``: treated labels permuted across units, or across
      clusters when cluster ids are present. Reports the two-sided p-value
      for kappa = 0 and a test-inversion CI over ``ci_grid`` (default: a
      201-point grid spanning kappa +/- 4 permutation standard deviations).

    Deterministic for a fixed seed.
    """
    if method not in RESAMPLING_METHODS:
        raise ValidationError(f"method must be one of {RESAMPLING_METHODS}")
    if replications < 200:
        raise ValidationError("use at least 200 replications for resampled inference")
    rng = np.random.default_rng(seed)
    kappa_obs = _kappa(data, spec_reduced, spec_expanded)

    if method == "cluster_bootstrap":
        if data.cluster_ids is None:
            raise ValidationError(
                "cluster_bootstrap requires cluster ids; map a cluster column "
                "(units can serve as their own clusters)"
            )
        n_entities = np.unique(data.cluster_ids).size
        if n_entities < 5:
            warnings.warn(
                f"only {n_entities} clusters; bootstrap inference will be fragile",
                stacklevel=2,
            )
        reps = np.empty(replications)
        for b in range(replications):
            reps[b] = _kappa(_bootstrap_dataset(data, rng), spec_reduced, spec_expanded)
        se = float(np.std(reps, ddof=1))
        ci = (
            float(np.quantile(reps, alpha / 2.0)),
            float(np.quantile(reps, 1.0 - alpha / 2.0)),
        )
        return ComparisonResult(
            kappa=kappa_obs,
            se_kappa=se,
            method=method,
            ci=ci,
            alpha=alpha,
            replicates=reps,
        )

    # randomization
    if data.cluster_ids is not None:
        n_entities = np.unique(data.cluster_ids).size
    else:
        n_entities = data.n_units
    if n_entities < 5:
        warnings.warn(
            f"only {n_entities} permutation entities; the null distribution is coarse",
            stacklevel=2,
        )
    reps = _randomization_kappas(data, spec_reduced, spec_expanded, rng, replications)
    # spread compared against the outcome scale: a numerically-zero null
    # distribution (noiseless panels) cannot support inference
    scale = max(float(np.std(data.outcome)), abs(kappa_obs), 1e-300)
    if np.ptp(reps) <= 1e-9 * scale:
        raise ComputationError(
            "permutation distribution has zero variance; randomization inference is undefined here"
        )
    p_value = float((1 + np.sum(np.abs(reps) >= abs(kappa_obs))) / (1 + replications))
    se = float(np.std(reps, ddof=1))
    centered = reps - reps.mean()
    if ci_grid is None:
        half = 4.0 * se
        ci_grid = kappa_obs + np.linspace(-half, half, 201)
    grid = np.asarray(ci_grid, dtype=float)
    distances = np.abs(kappa_obs - grid)
    abs_centered = np.sort(np.abs(centered))
    counts = abs_centered.size - np.searchsorted(abs_centered, distances, side="left")
    p_grid = (1 + counts) / (1 + replications)
    accepted = grid[p_grid >= alpha]
    if accepted.size == 0:
        accepted = np.array([kappa_obs])
    ci = (float(accepted.min()), float(accepted.max()))
    return ComparisonResult(
        kappa=kappa_obs,
        se_kappa=se,
        method=method,
        ci=ci,
        alpha=alpha,
        p_value=p_value,
        replicates=reps,
    )


# ---------------------------------------------------------------------------
# Non-inferiority verdicts and curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NiVerdict:
    """One non-inferiority (or equivalence) test outcome."""

    delta: float
    sided: str
    p_value: float
    reject_h0: bool
    alpha: float


def _check_test_args(alpha: float, sided: str, delta: float) -> None:
    if not (0.0 < alpha < 1.0):
        raise ValidationError("alpha must lie in (0, 1)")
    if sided not in ("one", "two"):
        raise ValidationError("sided must be 'one' or 'two'")
    if sided == "two" and delta <= 0.0:
        raise ValidationError("two-sided tests need delta > 0")


def ni_test(
    kappa: float,
    se_kappa: float,
    delta: float,
    alpha: float = 0.05,
    sided: str = "one",
) -> NiVerdict:
    """Test the null that the violation is at least delta.

    One-sided: H0 kappa >= delta, p = Phi((kappa - delta)/se). Two-sided is
    the TOST equivalence test over (-delta, delta); its p-value is the larger
    of the two one-sided p-values and it rejects only when both do.
    A zero standard error degenerates to a sign comparison with p in {0, 1}.
    """
    _check_test_args(alpha, sided, delta)
    if se_kappa < 0.0:
        raise ValidationError("se_kappa must be nonnegative")
    if se_kappa == 0.0:
        inside = (kappa < delta) if sided == "one" else (abs(kappa) < delta)
        p = 0.0 if inside else 1.0
    elif sided == "one":
        p = float(ndtr((kappa - delta) / se_kappa))
    else:
        p_low = float(ndtr((kappa - delta) / se_kappa))
        p_high = float(ndtr(-(kappa + delta) / se_kappa))
        p = max(p_low, p_high)
    return NiVerdict(
        delta=float(delta),
        sided=sided,
        p_value=p,
        reject_h0=bool(p < alpha),
        alpha=alpha,
    )


def ni_test_resampled(
    comparison: ComparisonResult,
    delta: float,
    alpha: float = 0.05,
    sided: str = "one",
) -> NiVerdict:
    """Non-inferiority verdict from a randomization null distribution.

    Uses the centered permutation replicates as the null shape: the one-sided
    p-value is the fraction of centered replicates at or below
    kappa_obs - delta (plus-one convention).
    """
    _check_test_args(alpha, sided, delta)
    if comparison.replicates is None:
        raise ValidationError("comparison carries no replicates; run compare_resampled first")
    centered = comparison.replicates - comparison.replicates.mean()
    n = centered.size
    p_low = float((1 + np.sum(centered <= comparison.kappa - delta)) / (1 + n))
    if sided == "one":
        p = p_low
    else:
        p_high = float((1 + np.sum(centered >= comparison.kappa + delta)) / (1 + n))
        p = max(p_low, p_high)
    return NiVerdict(
        delta=float(delta), sided=sided, p_value=p, reject_h0=bool(p < alpha), alpha=alpha
    )


@dataclass(frozen=True)
class NiCurve:
    """One-sided non-inferiority p-values over a threshold grid."""

    deltas: tuple[float, ...]
    p_values: tuple[float, ...]
    crossing_delta: float
    alpha: float

    def as_rows(self) -> list[dict]:
        return [
            {"delta": d, "p_value": p} for d, p in zip(self.deltas, self.p_values)
        ]


def ni_curve(
    kappa: float,
    se_kappa: float,
    delta_grid: Sequence[float],
    alpha: float = 0.05,
) -> NiCurve:
    """P-value for each threshold, plus the exact crossing threshold.

    The crossing (smallest delta ruled out at level alpha) is reported in
    closed form, kappa + z_{1-alpha} * se; it equals the upper bound of the
    one-sided 1-alpha confidence interval.
    """
    grid = [float(d) for d in delta_grid]
    if any(a > b for a, b in zip(grid, grid[1:])):
        raise ValidationError("delta grid must be sorted ascending")
    p_values = tuple(
        ni_test(kappa, se_kappa, d, alpha=alpha, sided="one").p_value for d in grid
    )
    crossing = kappa + ndtri(1.0 - alpha) * se_kappa
    return NiCurve(
        deltas=tuple(grid),
        p_values=p_values,
        crossing_delta=float(crossing),
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Subgroup comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubgroupComparison:
    """Differential post-period shift for a placebo subgroup."""

    estimate: float
    se: float
    column: str
    fit: FitResult


def subgroup_compare(
    data: PanelDataset,
    trend: TrendSpec = TrendSpec.none(),
    vcov_kind: str = "iid",
) -> SubgroupComparison:
    """Fit the model with a subgroup post-period term and return its estimate.

    The subgroup must be disjoint from the treated units; the returned
    estimate and standard error feed directly into ``ni_test``.
    """
    if data.subgroup is None:
        raise ValidationError("panel has no subgroup labels")
    if not data.subgroup.any():
        raise ValidationError("subgroup is empty")
    if np.any(data.subgroup & data.treated):
        raise ValidationError("subgroup units must be disjoint from treated units")
    spec = DidModelSpec(trend=trend, include_subgroup_effect=True)
    X, y, _ = build_design(data, spec)
    fit = ols_fit(
        X,
        y,
        vcov_kind=vcov_kind,
        cluster_ids=data.cluster_ids if vcov_kind == "cluster_cr1" else None,
    )
    return SubgroupComparison(
        estimate=fit.coef("subgroup::post"),
        se=fit.se("subgroup::post"),
        column="subgroup::post",
        fit=fit,
    )


# ---------------------------------------------------------------------------
# One-step-up procedure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OneStepUpResult:
    """Verdict for one base-versus-simpler comparison, with any follow-up."""

    verdict: str  # 'unclear' | 'no_change' | 'change'
    reduced_trend: str
    expanded_trend: str
    comparison: ComparisonResult
    ni: NiVerdict
    delta: float
    alpha: float
    recommendation: str
    step_up: "OneStepUpResult | None" = None


def _compare_for_trends(
    data: PanelDataset,
    reduced_trend: TrendSpec,
    expanded_trend: TrendSpec,
    method: str,
    alpha: float,
    seed: int,
    replications: int,
) -> ComparisonResult:
    spec_reduced = DidModelSpec(trend=reduced_trend)
    spec_expanded = DidModelSpec(trend=expanded_trend)
    if expanded_trend.kind == "pspline" and method not in RESAMPLING_METHODS:
        warnings.warn(
            "normal inference is not appropriate for the penalized-spline model; "
            "switching to randomization inference",
            stacklevel=3,
        )
        method = "randomization"
    if method == "scale_factor":
        if reduced_trend.kind != "none" or not (
            expanded_trend.kind == "poly" and expanded_trend.degree == 1
        ):
            raise ValidationError(
                "the scale-factor method applies only to the none-versus-linear comparison"
            )
        X, y, _ = build_design(data, spec_expanded)
        fit = ols_fit(X, y)
        return compare_scale_factor(fit, data, alpha=alpha)
    if method == "variance_difference":
        Xr, yr, effect_cols = build_design(data, spec_reduced)
        Xe, ye, _ = build_design(data, spec_expanded)
        nested = set(Xr.column_names) <= set(Xe.column_names) or spans_nested(Xr, Xe)
        if not nested:
            raise ValidationError(
                f"{reduced_trend.label} is not nested in {expanded_trend.label}; "
                "use a resampling method for this comparison"
            )
        fit_r = ols_fit(Xr, yr)
        fit_e = ols_fit(Xe, ye)
        return compare_variance_difference(
            fit_r, fit_e, effect_cols, alpha=alpha, nested_checked=True
        )
    return compare_resampled(
        data,
        spec_reduced,
        spec_expanded,
        method=method,
        replications=replications,
        seed=seed,
        alpha=alpha,
    )


def _classify(cr: ComparisonResult, ni: NiVerdict) -> str:
    if ni.reject_h0:
        return "no_change"
    lo, hi = cr.ci
    if lo > 0.0 or hi < 0.0:
        return "change"
    return "unclear"


_RECOMMENDATIONS = {
    "no_change": (
        "Differences in the average treatment effect beyond delta are ruled out; "
        "the simpler trend assumption is supported. Consider a sensitivity check "
        "with a more flexible trend."
    ),
    "change": (
        "The trend difference moves the treatment effect and a change of at "
        "least delta cannot be ruled out; step up to a more flexible trend "
        "(multiplicity-corrected)."
    ),
    "unclear": (
        "The comparison is too imprecise to evaluate the assumption at this "
        "delta; report the confidence interval rather than a pass/fail verdict."
    ),
}


def one_step_up(
    data: PanelDataset,
    delta: float,
    base_trend: TrendSpec = TrendSpec.poly(1),
    alpha: float = 0.05,
    method: str = "variance_difference",
    step_up_trend: TrendSpec | None = TrendSpec.rcs(),
    seed: int = 0,
    replications: int = 999,
) -> OneStepUpResult:
    """Compare the base-trend model against the no-trend model and classify.

    Verdicts: 'no_change' when a TOST rules out |kappa| >= delta, 'change'
    when the confidence interval excludes zero but delta cannot be ruled out,
    'unclear' otherwise. On 'change' the procedure steps up once, comparing
    the base trend against ``step_up_trend`` at a Bonferroni-corrected
    alpha / 2.
    """
    if delta <= 0.0:
        raise ValidationError("delta must be positive")
    return _one_step(
        data,
        reduced_trend=TrendSpec.none(),
        expanded_trend=base_trend,
        delta=delta,
        alpha=alpha,
        method=method,
        step_up_trend=step_up_trend,
        seed=seed,
        replications=replications,
    )


def _one_step(
    data: PanelDataset,
    reduced_trend: TrendSpec,
    expanded_trend: TrendSpec,
    delta: float,
    alpha: float,
    method: str,
    step_up_trend: TrendSpec | None,
    seed: int,
    replications: int,
) -> OneStepUpResult:
    cr = _compare_for_trends(
        data, reduced_trend, expanded_trend, method, alpha, seed, replications
    )
    if cr.method == "randomization":
        ni = ni_test_resampled(cr, delta, alpha=alpha, sided="two")
    else:
        ni = ni_test(cr.kappa, cr.se_kappa, delta, alpha=alpha, sided="two")
    verdict = _classify(cr, ni)
    step_up = None
    if (
        verdict == "change"
        and step_up_trend is not None
        and step_up_trend != expanded_trend
    ):
        step_up = _one_step(
            data,
            reduced_trend=expanded_trend,
            expanded_trend=step_up_trend,
            delta=delta,
            alpha=alpha / 2.0,  # Bonferroni for the sequential test
            method=method,
            step_up_trend=None,
            seed=seed + 1,
            replications=replications,
        )
    return OneStepUpResult(
        verdict=verdict,
        reduced_trend=reduced_trend.label,
        expanded_trend=expanded_trend.label,
        comparison=cr,
        ni=ni,
        delta=delta,
        alpha=alpha,
        recommendation=_RECOMMENDATIONS[verdict],
        step_up=step_up,
    )
