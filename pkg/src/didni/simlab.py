"""Monte Carlo laboratory for the trend-difference simulation study.

Scenarios draw balanced two-arm panels with unit, time, and idiosyncratic
N(0,1) components, an additive treatment effect from the intervention start,
and one of four parallel-trends violations. Each trial is fit with a ladder
of trend-difference models and aggregated into detection power, bias, MSE,
and the power to rule out a model-versus-no-trend effect change.

Designs are fixed within a scenario (only outcomes vary), so each model is
factorized once and all trials are solved as one batched linear-algebra
pass. Randomization inference for the penalized-spline model shares one set
of label permutations across trials for the same reason; each trial's
p-value remains a valid randomization p-value because the permutations are
drawn independently of the outcomes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtri

from .exceptions import ComputationError, ValidationError
from .linmod import OlsSolver
from .panel import (
    DEFAULT_LAMBDA_GRID,
    DidModelSpec,
    PanelDataset,
    PsplineSolver,
    TrendSpec,
    bspline_basis,
    build_design,
    pspline_penalized_columns,
    pspline_transform,
    trend_column_names,
)

MODEL_ORDER = ("none", "linear", "quadratic", "cubic", "rcs", "pspline")
MODEL_TRENDS = {
    "none": TrendSpec.none(),
    "linear": TrendSpec.poly(1),
    "quadratic": TrendSpec.poly(2),
    "cubic": TrendSpec.poly(3),
    "rcs": TrendSpec.rcs(),
}
VIOLATIONS = ("none", "last_pre_jump", "linear", "midpoint_change")

PAPER_N_TREATED = (5, 10, 50)
PAPER_N_COMPARISON = (10, 50, 100)
PAPER_N_PRE = (5, 15)
PAPER_N_POST = (5, 15)
PAPER_EFFECTS = (0.5, 1.0)

_RI_STREAM = 2**40 + 17  # keeps the permutation stream clear of trial indices


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation cell: panel shape, violation type, effect size."""

    n_treated: int
    n_comparison: int
    n_pre: int
    n_post: int
    violation: str = "none"
    effect_sd: float = 1.0
    violation_slope: float = 0.05
    jump_magnitude: float | None = None  # defaults to effect_sd
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        for name in ("n_treated", "n_comparison", "n_pre", "n_post"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.violation not in VIOLATIONS:
            raise ValidationError(f"violation must be one of {VIOLATIONS}")
        if self.effect_sd < 0:
            raise ValidationError("effect_sd must be nonnegative")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if self.seed < 0:
            raise ValidationError("seed must be a nonnegative integer")

    @property
    def t0(self) -> int:
        return self.n_pre + 1

    @property
    def t_max(self) -> int:
        return self.n_pre + self.n_post

    @property
    def jump(self) -> float:
        return self.effect_sd if self.jump_magnitude is None else self.jump_magnitude

    def sort_key(self) -> tuple:
        return (
            self.n_treated,
            self.n_comparison,
            self.n_pre,
            self.n_post,
            VIOLATIONS.index(self.violation),
            self.effect_sd,
        )

    def label(self) -> str:
        return (
            f"t{self.n_treated}_c{self.n_comparison}"
            f"_pre{self.n_pre}_post{self.n_post}"
            f"_{self.violation}_es{self.effect_sd:g}"
        )

    def key_fields(self) -> dict:
        return {
            "n_treated": self.n_treated,
            "n_comparison": self.n_comparison,
            "n_pre": self.n_pre,
            "n_post": self.n_post,
            "violation": self.violation,
            "effect_sd": self.effect_sd,
        }


def paper_grid(trials: int = 200, seed: int = 0) -> list[ScenarioConfig]:
    """The full simulation grid: 3*3*2*2*4*2 = 288 cells.

    Each cell gets its own seed derived from the grid seed and the cell's
    content, so results do not depend on execution order or parallelism.
    """
    scenarios = []
    for nt in PAPER_N_TREATED:
        for nc in PAPER_N_COMPARISON:
            for n_pre in PAPER_N_PRE:
                for n_post in PAPER_N_POST:
                    for violation in VIOLATIONS:
                        for effect in PAPER_EFFECTS:
                            entropy = [
                                seed,
                                nt,
                                nc,
                                n_pre,
                                n_post,
                                VIOLATIONS.index(violation),
                                int(round(effect * 100)),
                            ]
                            cell_seed = int(
                                np.random.SeedSequence(entropy).generate_state(
                                    1, np.uint64
                                )[0]
                            )
                            scenarios.append(
                                ScenarioConfig(
                                    n_treated=nt,
                                    n_comparison=nc,
                                    n_pre=n_pre,
                                    n_post=n_post,
                                    violation=violation,
                                    effect_sd=effect,
                                    trials=trials,
                                    seed=cell_seed,
                                )
                            )
    return scenarios


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


def _violation_profile(config: ScenarioConfig) -> np.ndarray:
    """Additive treated-group component at each time, beyond the effect."""
    t = np.arange(1, config.t_max + 1, dtype=float)
    if config.violation == "none":
        return np.zeros_like(t)
    if config.violation == "linear":
        return config.violation_slope * t
    if config.violation == "midpoint_change":
        midpoint = math.ceil((config.t0 - 1) / 2)
        return config.violation_slope * np.clip(t - midpoint, 0.0, None)
    # last_pre_jump: the effect starts one period early
    profile = np.zeros_like(t)
    profile[config.t0 - 2] = config.jump
    return profile


def generate_panel(config: ScenarioConfig, trial_index: int) -> PanelDataset:
    """One simulated panel, deterministic in (config.seed, trial_index).

    One observation per group and period: unit effects, time effects, and
    noise are all standard normal, the treatment effect is added to treated
    groups from t0 on, and the configured violation shifts the treated
    group's path.
    """
    if trial_index < 0:
        raise ValidationError("trial_index must be nonnegative")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, trial_index]))
    n_units = config.n_treated + config.n_comparison
    t_max = config.t_max
    unit_effects = rng.normal(size=n_units)
    time_effects = rng.normal(size=t_max)
    noise = rng.normal(size=(n_units, t_max))

    treated_flag = np.zeros(n_units, dtype=bool)
    treated_flag[: config.n_treated] = True
    t_grid = np.arange(1, t_max + 1)
    outcome = unit_effects[:, None] + time_effects[None, :] + noise
    effect_path = config.effect_sd * (t_grid >= config.t0) + _violation_profile(config)
    outcome[treated_flag, :] += effect_path[None, :]

    unit_labels = np.array(
        [f"t{i + 1:03d}" for i in range(config.n_treated)]
        + [f"c{i + 1:03d}" for i in range(config.n_comparison)]
    )
    return PanelDataset(
        unit_ids=np.repeat(unit_labels, t_max),
        times=np.tile(t_grid, n_units),
        treated=np.repeat(treated_flag, t_max),
        outcome=outcome.ravel(),
        t0=config.t0,
    )


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelStats:
    """Aggregates for one fitted model within a scenario."""

    model: str
    power: float
    bias: float
    mse: float
    rule_out_power: float


@dataclass(frozen=True)
class ScenarioResult:
    """All per-model aggregates for one scenario."""

    config: ScenarioConfig
    alpha: float
    delta: float | None
    models: dict[str, ModelStats]
    excluded_trials: int
    estimates: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def to_rows(self) -> list[dict]:
        rows = []
        for name, stats in self.models.items():
            row = dict(self.config.key_fields())
            row.update(
                {
                    "violation_slope": self.config.violation_slope,
                    "trials": self.config.trials,
                    "seed": self.config.seed,
                    "model": name,
                    "power": stats.power,
                    "bias": stats.bias,
                    "mse": stats.mse,
                    "rule_out_power": stats.rule_out_power,
                    "excluded_trials": self.excluded_trials,
                }
            )
            rows.append(row)
        return rows


class _OlsModelPlan:
    """Per-scenario precomputation for one unpenalized model."""

    def __init__(self, data: PanelDataset, trend: TrendSpec):
        X, _, effect_cols = build_design(data, DidModelSpec(trend=trend))
        self.solver = OlsSolver(X)
        self.n, self.p = X.values.shape
        idx = [X.column_index(c) for c in effect_cols]
        w = np.zeros(self.p)
        w[idx] = 1.0 / len(idx)
        self.weights = w
        # Variance of the averaged effect is sigma2 times this design constant.
        self.c_avg = float(w @ self.solver.xtx_inv @ w)

    def batch(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Averaged-effect estimates and residual variances for all trials."""
        estimates, rss = self.solver.batch_linear_combination(Y, self.weights)
        sigma2 = rss / (self.n - self.p)
        return estimates, sigma2


def _tost_reject(kappa, se, delta, alpha):
    """Vectorized two-one-sided-test rejection of |kappa| >= delta."""
    kappa = np.asarray(kappa, dtype=float)
    se = np.asarray(se, dtype=float)
    out = np.empty(kappa.shape, dtype=bool)
    degenerate = se == 0.0
    out[degenerate] = np.abs(kappa[degenerate]) < delta
    ok = ~degenerate
    if np.any(ok):
        from scipy.special import ndtr

        p_low = ndtr((kappa[ok] - delta) / se[ok])
        p_high = ndtr(-(kappa[ok] + delta) / se[ok])
        out[ok] = np.maximum(p_low, p_high) < alpha
    return out


def run_scenario(
    config: ScenarioConfig,
    models: Sequence[str] = MODEL_ORDER,
    alpha: float = 0.05,
    delta: float | None = None,
    ri_replications: int = 199,
    pspline_basis_size: int | None = None,
    pspline_lambda_grid: Sequence[float] | None = None,
    pspline_inference: str = "randomization",
    keep_trials: bool = False,
) -> ScenarioResult:
    """Fit the requested models to every trial and aggregate.

    ``delta`` (the rule-out threshold for the model-versus-no-trend change)
    defaults to the scenario's effect size. Significance for unpenalized
    models is a two-sided z-test at ``alpha``; the penalized spline uses
    randomization inference with ``ri_replications`` label permutations
    (set ``pspline_inference='none'`` to skip it and report NaN power for
    that model). Trials where any model produces a non-finite estimate are
    excluded from every aggregate; more than 1% exclusions is an error.
    """
    models = list(models)
    if not models:
        raise ValidationError("models must be non-empty")
    unknown = [m for m in models if m not in MODEL_ORDER]
    if unknown:
        raise ValidationError(f"unknown models {unknown}; choose from {MODEL_ORDER}")
    if pspline_inference not in ("randomization", "none"):
        raise ValidationError("pspline_inference must be 'randomization' or 'none'")
    if delta is None and config.effect_sd > 0:
        delta = config.effect_sd

    template = generate_panel(config, 0)
    n_rows = template.n_rows
    Y = np.empty((n_rows, config.trials))
    Y[:, 0] = template.outcome
    for trial in range(1, config.trials):
        Y[:, trial] = generate_panel(config, trial).outcome

    z_crit = float(ndtri(1.0 - alpha / 2.0))
    truth = config.effect_sd

    ols_names = [m for m in models if m != "pspline"]
    plans = {name: _OlsModelPlan(template, MODEL_TRENDS[name]) for name in ols_names}
    none_plan = plans.get("none") or _OlsModelPlan(template, TrendSpec.none())

    estimates: dict[str, np.ndarray] = {}
    significant: dict[str, np.ndarray] = {}
    rule_out: dict[str, np.ndarray] = {}

    none_est, none_sigma2 = none_plan.batch(Y)
    for name in ols_names:
        plan = plans[name]
        est, sigma2 = (none_est, none_sigma2) if name == "none" else plan.batch(Y)
        se = np.sqrt(sigma2 * plan.c_avg)
        estimates[name] = est
        significant[name] = np.abs(est) >= z_crit * se
        if delta is not None:
            kappa = none_est - est
            var_kappa = sigma2 * max(plan.c_avg - none_plan.c_avg, 0.0)
            rule_out[name] = _tost_reject(kappa, np.sqrt(var_kappa), delta, alpha)

    if "pspline" in models:
        ps = _run_pspline(
            template,
            config,
            Y,
            none_plan,
            none_est,
            alpha=alpha,
            delta=delta,
            ri_replications=ri_replications,
            basis_size=pspline_basis_size,
            lambda_grid=pspline_lambda_grid,
            inference=pspline_inference,
        )
        estimates["pspline"] = ps["estimates"]
        significant["pspline"] = ps["significant"]
        if delta is not None:
            rule_out["pspline"] = ps["rule_out"]

    included = np.ones(config.trials, dtype=bool)
    for est in estimates.values():
        included &= np.isfinite(est)
    excluded = int(config.trials - included.sum())
    if excluded > 0.01 * config.trials:
        raise ComputationError(
            f"{excluded} of {config.trials} trials failed to fit in scenario {config.label()}"
        )

    stats: dict[str, ModelStats] = {}
    for name in models:
        est = estimates[name][included]
        err = est - truth
        # NaN indicators (skipped inference) propagate to NaN aggregates.
        power = float(np.mean(np.asarray(significant[name][included], dtype=float)))
        if delta is not None:
            ro = float(np.mean(np.asarray(rule_out[name][included], dtype=float)))
        else:
            ro = float("nan")
        stats[name] = ModelStats(
            model=name,
            power=power,
            bias=float(np.mean(err)),
            mse=float(np.mean(err**2)),
            rule_out_power=ro,
        )

    return ScenarioResult(
        config=config,
        alpha=alpha,
        delta=delta,
        models=stats,
        excluded_trials=excluded,
        estimates={k: v.copy() for k, v in estimates.items()} if keep_trials else None,
    )


def _run_pspline(
    template: PanelDataset,
    config: ScenarioConfig,
    Y: np.ndarray,
    none_plan: _OlsModelPlan,
    none_est: np.ndarray,
    alpha: float,
    delta: float | None,
    ri_replications: int,
    basis_size: int | None,
    lambda_grid: Sequence[float] | None,
    inference: str,
) -> dict:
    """Penalized-spline estimates for all trials, plus randomization inference.

    One set of treated-label permutations is shared across trials; for each
    permutation the cross-product blocks that depend on the labels are
    rebuilt once and every trial's outcome is solved against them in a
    single batched call, re-selecting lambda by GCV per (trial, permutation).
    """
    trend = TrendSpec.pspline(
        basis_size=basis_size, lambda_grid=tuple(lambda_grid) if lambda_grid else None
    )
    spec = DidModelSpec(trend=trend)
    X, _, effect_cols = build_design(template, spec)
    grid = trend.lambda_grid or DEFAULT_LAMBDA_GRID
    solver = PsplineSolver(X, pspline_penalized_columns(X.column_names), grid)
    idx = [X.column_index(c) for c in effect_cols]
    weights = np.zeros(X.n_cols)
    weights[idx] = 1.0 / len(idx)

    obs_avg, _ = solver.batch_average_effect(Y, weights)
    n_trials = Y.shape[1]
    out = {
        "estimates": obs_avg,
        "significant": np.full(n_trials, np.nan),
        "rule_out": np.full(n_trials, np.nan),
    }
    if inference == "none":
        return out
    if ri_replications < 1:
        raise ValidationError("ri_replications must be at least 1")

    # Label-independent blocks: intercept/unit/time columns are fixed.
    names = X.column_names
    fixed_idx = [
        j
        for j, c in enumerate(names)
        if not (c.startswith("effect::") or c.startswith("trend::"))
    ]
    f_block = X.values[:, fixed_idx]
    n = X.values.shape[0]
    t_row = template.times
    window = template.post_times
    e0 = np.column_stack([(t_row == k).astype(float) for k in window])
    spline_names = trend_column_names(X)
    n_spline = len(spline_names)
    basis_dim = n_spline + 1  # transform drops the constant direction
    raw = bspline_basis(t_row.astype(float), 1.0, float(template.t_max), basis_dim)
    transform, tnames = pspline_transform(basis_dim, 1.0, float(template.t_max))
    assert tnames == list(spline_names)
    raw_basis = raw @ transform  # identity penalty applies to the w-columns

    n_eff = e0.shape[1]
    p_f = f_block.shape[1]
    p_total = p_f + n_eff + n_spline
    penalty = np.zeros((p_total, p_total))
    pen_idx = [
        p_f + n_eff + j
        for j, c in enumerate(spline_names)
        if c.startswith("trend::ps_w")
    ]
    penalty[pen_idx, pen_idx] = 1.0

    ftf = f_block.T @ f_block
    fty = f_block.T @ Y  # (p_f, trials)
    yty = np.einsum("ij,ij->j", Y, Y)

    unit_treated = np.array(
        [template.treated[template.unit_ids == u][0] for u in template.units]
    )
    unit_index = {u: i for i, u in enumerate(template.units)}
    u_row = np.array([unit_index[u] for u in template.unit_ids.tolist()])

    rng = np.random.default_rng(np.random.SeedSequence([config.seed, _RI_STREAM]))
    grid_arr = np.asarray(grid)
    w_eff = np.full(n_eff, 1.0 / n_eff)

    sig_count = np.zeros(n_trials)
    kappa_perms = np.empty((ri_replications, n_trials))
    abs_obs = np.abs(obs_avg)

    for b in range(ri_replications):
        d_units = rng.permutation(unit_treated)
        d_row = d_units[u_row].astype(float)
        e_perm = e0 * d_row[:, None]
        s_perm = raw_basis * d_row[:, None]

        fte = f_block.T @ e_perm
        fts = f_block.T @ s_perm
        ete = e_perm.T @ e_perm
        ets = e_perm.T @ s_perm
        sts = s_perm.T @ s_perm
        xtx = np.empty((p_total, p_total))
        xtx[:p_f, :p_f] = ftf
        xtx[:p_f, p_f : p_f + n_eff] = fte
        xtx[:p_f, p_f + n_eff :] = fts
        xtx[p_f : p_f + n_eff, :p_f] = fte.T
        xtx[p_f : p_f + n_eff, p_f : p_f + n_eff] = ete
        xtx[p_f : p_f + n_eff, p_f + n_eff :] = ets
        xtx[p_f + n_eff :, :p_f] = fts.T
        xtx[p_f + n_eff :, p_f : p_f + n_eff] = ets.T
        xtx[p_f + n_eff :, p_f + n_eff :] = sts

        xty = np.empty((p_total, n_trials))
        xty[:p_f] = fty
        xty[p_f : p_f + n_eff] = e_perm.T @ Y
        xty[p_f + n_eff :] = s_perm.T @ Y

        gcv = np.empty((grid_arr.size, n_trials))
        avg_by_lambda = np.empty((grid_arr.size, n_trials))
        for li, lam in enumerate(grid_arr):
            try:
                factor = cho_factor(xtx + lam * penalty)
            except np.linalg.LinAlgError as exc:
                raise ComputationError(
                    f"singular permuted design at lambda={lam:g}"
                ) from exc
            beta = cho_solve(factor, xty)
            quad = np.einsum("ij,ij->j", beta, xtx @ beta)
            cross = np.einsum("ij,ij->j", beta, xty)
            rss = np.clip(yty - 2.0 * cross + quad, 0.0, None)
            inv_cols = cho_solve(factor, penalty[:, pen_idx])
            tr_h = p_total - lam * float(inv_cols[pen_idx, np.arange(len(pen_idx))].sum())
            denom = n - tr_h
            if denom <= 0:
                raise ComputationError("effective degrees of freedom exceed sample size")
            gcv[li] = n * rss / denom**2
            avg_by_lambda[li] = w_eff @ beta[p_f : p_f + n_eff]

        best = np.argmin(gcv, axis=0)
        avg_perm = avg_by_lambda[best, np.arange(n_trials)]
        sig_count += (np.abs(avg_perm) >= abs_obs).astype(float)

        if delta is not None:
            # No-trend-model normal equations assembled from the same blocks.
            xtx_none = np.empty((p_f + n_eff, p_f + n_eff))
            xtx_none[:p_f, :p_f] = ftf
            xtx_none[:p_f, p_f:] = fte
            xtx_none[p_f:, :p_f] = fte.T
            xtx_none[p_f:, p_f:] = ete
            try:
                factor_none = cho_factor(xtx_none)
            except np.linalg.LinAlgError as exc:
                raise ComputationError("singular permuted no-trend design") from exc
            beta_none = cho_solve(factor_none, xty[: p_f + n_eff])
            avg_none_perm = w_eff @ beta_none[p_f:]
            kappa_perms[b] = avg_none_perm - avg_perm

    p_sig = (1.0 + sig_count) / (1.0 + ri_replications)
    out["significant"] = p_sig < alpha

    if delta is not None:
        kappa_obs = none_est - obs_avg
        centered = kappa_perms - kappa_perms.mean(axis=0, keepdims=True)
        p_low = (1.0 + np.sum(centered <= kappa_obs - delta, axis=0)) / (
            1.0 + ri_replications
        )
        p_high = (1.0 + np.sum(centered >= kappa_obs + delta, axis=0)) / (
            1.0 + ri_replications
        )
        out["rule_out"] = np.maximum(p_low, p_high) < alpha
    return out


# ---------------------------------------------------------------------------
# Grid execution
# ---------------------------------------------------------------------------


def run_grid(
    scenarios: Sequence[ScenarioConfig],
    models: Sequence[str] = MODEL_ORDER,
    alpha: float = 0.05,
    delta: float | None = None,
    parallelism: int = 1,
    sink: Callable[[ScenarioResult], None] | None = None,
    ri_replications: int = 199,
    pspline_inference: str = "randomization",
) -> list[ScenarioResult]:
    """Run many scenarios, streaming results to ``sink`` as they complete.

    The returned list is sorted by scenario key, so output is identical for
    any parallelism degree; per-scenario seeds live in the configs.
    """
    scenarios = list(scenarios)
    if not scenarios:
        return []
    kwargs = {
        "models": tuple(models),
        "alpha": alpha,
        "delta": delta,
        "ri_replications": ri_replications,
        "pspline_inference": pspline_inference,
    }
    results: list[ScenarioResult] = []
    if parallelism <= 1 or len(scenarios) == 1:
        for cfg in scenarios:
            result = run_scenario(cfg, **kwargs)
            _emit(sink, result)
            results.append(result)
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = {
                pool.submit(run_scenario, cfg, **kwargs): cfg for cfg in scenarios
            }
            for fut in as_completed(futures):
                result = fut.result()
                _emit(sink, result)
                results.append(result)
    results.sort(key=lambda r: r.config.sort_key())
    return results


def _emit(sink: Callable[[ScenarioResult], None] | None, result: ScenarioResult) -> None:
    if sink is None:
        return
    try:
        sink(result)
    except Exception as exc:
        raise ComputationError(
            f"output sink failed for scenario {result.config.label()}: {exc}"
        ) from exc
