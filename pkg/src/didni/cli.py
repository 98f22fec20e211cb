"""Command-line interface.

Five commands: ``fit`` (one DID specification, event-study table),
``compare`` (one-step-up verdict or CI framing for the cross-model effect
difference), ``ni-curve`` (p-value over a threshold grid), ``power``
(closed-form calculators), and ``simulate`` (scenario grids).

Every command prints a human-readable table; ``--out`` additionally writes
CSV or JSON (JSON embeds the full run configuration, package version, and
seed). ``--plot`` / ``--plot-dir`` render matplotlib figures next to the
delimited output. Validation problems exit with code 2, computation
failures with code 3.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import numpy as np

from . import __version__
from .compare import (
    ComparisonResult,
    compare_resampled,
    compare_scale_factor,
    compare_variance_difference,
    ni_curve,
    ni_test,
    one_step_up,
    subgroup_compare,
    summarize_effects,
)
from .exceptions import DidniError, ValidationError
from .ingest import ColumnMapping, IngestResult, ingest_csv, parse_scenario_file
from .linmod import ols_fit
from .panel import DidModelSpec, TrendSpec, build_design, pspline_fit, trend_from_label
from .power import (
    detection_power,
    empirical_power,
    mde,
    ni_power,
    se_inflation_bound,
)
from .report import text_table, write_report
from .simlab import MODEL_ORDER, paper_grid, run_grid

EXIT_VALIDATION = 2
EXIT_COMPUTATION = 3

TREND_CHOICES = ("none", "linear", "quad", "cubic", "rcs", "pspline")
METHODS = {
    "scale": "scale_factor",
    "vardiff": "variance_difference",
    "boot": "cluster_bootstrap",
    "ri": "randomization",
}
JOBS_ENV = "DIDNI_JOBS"


def guarded(func):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except (DidniError, np.linalg.LinAlgError) as exc:
            click.echo(f"computation failed: {exc}", err=True)
            sys.exit(EXIT_COMPUTATION)

    return wrapper


def data_options(func):
    options = [
        click.option("--input", "input_path", required=True,
                     type=click.Path(exists=True, dir_okay=False),
                     help="Panel CSV with a header row."),
        click.option("--map-unit", default="unit", show_default=True),
        click.option("--map-time", default="time", show_default=True),
        click.option("--map-outcome", default="outcome", show_default=True),
        click.option("--map-treated", default="treated", show_default=True),
        click.option("--map-cluster", default=None,
                     help="Optional cluster-id column."),
        click.option("--map-subgroup", default=None,
                     help="Optional placebo-subgroup indicator column."),
        click.option("--t0", required=True,
                     help="Intervention start, in the input file's own time units."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def output_options(func):
    options = [
        click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False),
                     help="Write machine-readable results here."),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
                     default="csv", show_default=True),
        click.option("--plot", "plot_path", default=None, type=click.Path(dir_okay=False),
                     help="Render a figure to this file (png/pdf)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _load(input_path, map_unit, map_time, map_outcome, map_treated,
          map_cluster, map_subgroup, t0) -> IngestResult:
    mapping = ColumnMapping(
        unit=map_unit, time=map_time, outcome=map_outcome, treated=map_treated,
        cluster=map_cluster, subgroup=map_subgroup,
    )
    return ingest_csv(input_path, mapping, t0)


def _trend_spec(trend: str, pspline_basis, pspline_grid) -> TrendSpec:
    spec = trend_from_label(trend)
    if spec.kind == "pspline" and (pspline_basis or pspline_grid):
        grid = None
        if pspline_grid:
            try:
                lo, hi, count = pspline_grid.split(":")
                grid = tuple(np.logspace(float(lo), float(hi), int(count)))
            except ValueError as exc:
                raise ValidationError(
                    "--pspline-grid must be 'log10lo:log10hi:count', e.g. '-4:8:25'"
                ) from exc
        spec = TrendSpec.pspline(basis_size=pspline_basis, lambda_grid=grid)
    return spec


def _echo_time_map(ingested: IngestResult) -> None:
    click.echo("time mapping (raw -> index):")
    click.echo(text_table(ingested.mapping_rows()))


def _cli_config(ctx_params: dict, ingested: IngestResult | None = None) -> dict:
    config = {k: v for k, v in ctx_params.items() if not callable(v)}
    if ingested is not None:
        config["time_map"] = {str(k): v for k, v in ingested.time_map.items()}
    return config


@click.group()
@click.version_option(__version__, prog_name="didni")
def main():
    """Non-inferiority testing for difference-in-differences assumptions."""


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


@main.command("fit")
@data_options
@click.option("--trend", type=click.Choice(TREND_CHOICES), default="none",
              show_default=True, help="Treated-group trend-difference basis.")
@click.option("--vcov", type=click.Choice(["iid", "hc1", "cluster"]), default="iid",
              show_default=True)
@click.option("--placebo", default=None,
              help="Fit the placebo model over this pre-period window, "
                   "'START[:END]' in raw time units (END defaults to the "
                   "last pre-intervention period).")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--pspline-basis", type=int, default=None,
              help="Spline basis size (pspline trend only).")
@click.option("--pspline-grid", default=None,
              help="Smoothing grid 'log10lo:log10hi:count' (pspline trend only).")
@output_options
@click.pass_context
@guarded
def fit_command(ctx, input_path, map_unit, map_time, map_outcome, map_treated,
                map_cluster, map_subgroup, t0, trend, vcov, placebo, alpha,
                pspline_basis, pspline_grid, out_path, fmt, plot_path):
    """Fit one DID specification and report the event-study table."""
    ingested = _load(input_path, map_unit, map_time, map_outcome, map_treated,
                     map_cluster, map_subgroup, t0)
    data = ingested.data
    trend_spec = _trend_spec(trend, pspline_basis, pspline_grid)

    window = None
    if placebo is not None:
        window = _parse_placebo(placebo, ingested)
    spec = DidModelSpec(trend=trend_spec, effect_window=window)

    meta: dict = {"trend": trend_spec.label, "rows_used": None}
    if trend_spec.kind == "pspline":
        ps = pspline_fit(data, spec)
        fit, effect_cols = ps.fit, list(ps.effect_cols)
        meta.update({"lambda": ps.lambda_, "edf": ps.edf})
        click.echo(
            "note: penalized-spline standard errors are descriptive only; "
            "use `compare --method ri` for inference on this model.", err=True,
        )
    else:
        if vcov == "cluster" and data.cluster_ids is None:
            raise ValidationError("--vcov cluster requires --map-cluster")
        X, y, effect_cols = build_design(data, spec)
        kind = {"iid": "iid", "hc1": "hc1", "cluster": "cluster_cr1"}[vcov]
        fit = ols_fit(X, y, vcov_kind=kind,
                      cluster_ids=data.cluster_ids if vcov == "cluster" else None)
    meta["rows_used"] = fit.n_obs
    meta["r_squared"] = fit.r_squared

    used_window = spec.resolve_window(data)[0]
    summary = summarize_effects(fit, effect_cols, used_window)
    index_to_raw = {v: k for k, v in ingested.time_map.items()}
    z = _z(1 - alpha / 2)
    rows = []
    for k in sorted(summary.per_period):
        est, se = summary.per_period[k]
        rows.append({
            "time_index": k, "time": str(index_to_raw.get(k, k)),
            "estimate": est, "se": se,
            "ci_low": est - z * se, "ci_high": est + z * se,
        })
    rows.append({
        "time_index": "", "time": "average",
        "estimate": summary.average, "se": summary.average_se,
        "ci_low": summary.average - z * summary.average_se,
        "ci_high": summary.average + z * summary.average_se,
    })

    _echo_time_map(ingested)
    click.echo(text_table(rows))
    click.echo(f"rows used: {fit.n_obs}   vcov: {fit.vcov_kind}   R^2: {fit.r_squared:.4f}")

    if out_path:
        write_report(out_path, fmt, "fit", _cli_config(ctx.params, ingested),
                     rows, extra={"meta": meta})
        click.echo(f"wrote {out_path}")
    if plot_path:
        from . import plots

        plots.plot_event_study(summary, data.t0, plot_path,
                               title=f"Event study ({trend_spec.label} trend difference)")
        click.echo(f"wrote {plot_path}")


def _parse_placebo(placebo: str, ingested: IngestResult) -> tuple[int, ...]:
    string_map = {str(k): v for k, v in ingested.time_map.items()}
    parts = placebo.split(":")
    if len(parts) not in (1, 2):
        raise ValidationError("--placebo expects 'START' or 'START:END'")
    if parts[0] not in string_map:
        raise ValidationError(f"placebo start {parts[0]!r} is not an observed time")
    start = string_map[parts[0]]
    if len(parts) == 2:
        if parts[1] not in string_map:
            raise ValidationError(f"placebo end {parts[1]!r} is not an observed time")
        end = string_map[parts[1]]
    else:
        end = ingested.data.t0 - 1
    if not start <= end:
        raise ValidationError("placebo window start must not exceed its end")
    return tuple(range(start, end + 1))


def _z(q: float) -> float:
    from scipy.special import ndtri

    return float(ndtri(q))


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


@main.command("compare")
@data_options
@click.option("--trend", type=click.Choice([c for c in TREND_CHOICES if c != "none"]),
              default="linear", show_default=True,
              help="Base (expanded) trend-difference model.")
@click.option("--method", type=click.Choice(sorted(METHODS)), default="vardiff",
              show_default=True)
@click.option("--delta", type=float, default=None,
              help="Non-inferiority threshold in outcome units; without it "
                   "only the confidence-interval framing and curve are reported.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--sided", type=click.Choice(["one", "two"]), default=None,
              help="Required for --subgroup verdicts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=999, show_default=True,
              help="Replications for boot/ri methods.")
@click.option("--step-up-trend", type=click.Choice(["rcs", "pspline", "none"]),
              default="rcs", show_default=True,
              help="Trend used when the procedure steps up ('none' disables).")
@click.option("--subgroup", "subgroup_mode", is_flag=True,
              help="Compare a placebo subgroup's post-period shift instead of "
                   "cross-model effects (requires --map-subgroup, --delta, --sided).")
@output_options
@click.pass_context
@guarded
def compare_command(ctx, input_path, map_unit, map_time, map_outcome, map_treated,
                    map_cluster, map_subgroup, t0, trend, method, delta, alpha,
                    sided, seed, reps, step_up_trend, subgroup_mode,
                    out_path, fmt, plot_path):
    """Compare treatment effects across specifications (one step up)."""
    ingested = _load(input_path, map_unit, map_time, map_outcome, map_treated,
                     map_cluster, map_subgroup, t0)
    data = ingested.data

    if subgroup_mode:
        _compare_subgroup(ctx, ingested, delta, alpha, sided, out_path, fmt, plot_path)
        return

    base_trend = trend_from_label(trend)
    method_name = METHODS[method]

    if delta is None:
        cr = _comparison(data, base_trend, method_name, alpha, seed, reps)
        _report_ci_framing(ctx, ingested, cr, alpha, out_path, fmt, plot_path)
        return

    step_up = None if step_up_trend == "none" else trend_from_label(step_up_trend)
    result = one_step_up(data, delta=delta, base_trend=base_trend, alpha=alpha,
                         method=method_name, step_up_trend=step_up,
                         seed=seed, replications=reps)
    rows = []
    stage = result
    while stage is not None:
        rows.append({
            "comparison": f"{stage.reduced_trend} vs {stage.expanded_trend}",
            "kappa": stage.comparison.kappa,
            "se_kappa": stage.comparison.se_kappa,
            "ci_low": stage.comparison.ci[0],
            "ci_high": stage.comparison.ci[1],
            "alpha": stage.alpha,
            "p_equivalence": stage.ni.p_value,
            "verdict": stage.verdict,
        })
        stage = stage.step_up
    click.echo(text_table(rows))
    click.echo(f"verdict: {result.verdict}")
    click.echo(result.recommendation)
    if result.step_up is not None:
        click.echo(
            f"step-up verdict ({result.step_up.expanded_trend}, "
            f"Bonferroni alpha={result.step_up.alpha:g}): {result.step_up.verdict}"
        )
        click.echo(result.step_up.recommendation)

    if out_path:
        write_report(out_path, fmt, "compare", _cli_config(ctx.params, ingested), rows,
                     extra={"recommendation": result.recommendation})
        click.echo(f"wrote {out_path}")
    if plot_path:
        from . import plots

        grid = _default_delta_grid(result.comparison)
        curve = ni_curve(result.comparison.kappa, result.comparison.se_kappa,
                         grid, alpha=alpha)
        plots.plot_ni_curve(curve, plot_path,
                            title=f"Rule-out curve: none vs {result.expanded_trend}")
        click.echo(f"wrote {plot_path}")


def _comparison(data, base_trend, method_name, alpha, seed, reps) -> ComparisonResult:
    spec_reduced = DidModelSpec(trend=TrendSpec.none())
    spec_expanded = DidModelSpec(trend=base_trend)
    if base_trend.kind == "pspline" and method_name not in (
        "cluster_bootstrap", "randomization",
    ):
        click.echo(
            "note: normal inference is not appropriate for the penalized-spline "
            "model; using randomization inference.", err=True,
        )
        method_name = "randomization"
    if method_name == "scale_factor":
        if base_trend != TrendSpec.poly(1):
            raise ValidationError("--method scale applies only to --trend linear")
        X, y, _ = build_design(data, spec_expanded)
        return compare_scale_factor(ols_fit(X, y), data, alpha=alpha)
    if method_name == "variance_difference":
        Xr, yr, effect_cols = build_design(data, spec_reduced)
        Xe, ye, _ = build_design(data, spec_expanded)
        return compare_variance_difference(
            ols_fit(Xr, yr), ols_fit(Xe, ye), effect_cols, alpha=alpha
        )
    return compare_resampled(data, spec_reduced, spec_expanded, method=method_name,
                             replications=reps, seed=seed, alpha=alpha)


def _default_delta_grid(cr: ComparisonResult) -> np.ndarray:
    scale = max(cr.se_kappa, abs(cr.kappa), 1e-12)
    top = abs(cr.kappa) + 4.0 * scale
    return np.linspace(0.0, top, 101)[1:]


def _report_ci_framing(ctx, ingested, cr, alpha, out_path, fmt, plot_path):
    grid = _default_delta_grid(cr)
    curve = ni_curve(cr.kappa, cr.se_kappa, grid, alpha=alpha)
    click.echo(text_table([{
        "kappa": cr.kappa, "se_kappa": cr.se_kappa, "method": cr.method,
        "ci_low": cr.ci[0], "ci_high": cr.ci[1],
        **({"p_kappa_zero": cr.p_value} if cr.p_value is not None else {}),
    }]))
    click.echo(
        f"At the {alpha:g} level, effect-difference values below {cr.ci[0]:.6g} "
        f"and above {cr.ci[1]:.6g} can be ruled out."
    )
    click.echo(
        f"Smallest one-sided threshold ruled out at this level: {curve.crossing_delta:.6g} "
        "(no --delta given, so no pass/fail verdict is reported)."
    )
    rows = curve.as_rows()
    if out_path:
        write_report(out_path, fmt, "compare", _cli_config(ctx.params, ingested), rows,
                     extra={"comparison": {
                         "kappa": cr.kappa, "se_kappa": cr.se_kappa,
                         "method": cr.method, "ci": list(cr.ci),
                         "p_kappa_zero": cr.p_value,
                         "crossing_delta": curve.crossing_delta,
                     }})
        click.echo(f"wrote {out_path}")
    if plot_path:
        from . import plots

        plots.plot_ni_curve(curve, plot_path)
        click.echo(f"wrote {plot_path}")


def _compare_subgroup(ctx, ingested, delta, alpha, sided, out_path, fmt, plot_path):
    data = ingested.data
    if data.subgroup is None:
        raise ValidationError("--subgroup requires --map-subgroup")
    if delta is None or sided is None:
        raise ValidationError(
            "--subgroup verdicts need an explicit --delta and --sided "
            "(the direction of a tolerable placebo shift is context-specific)"
        )
    result = subgroup_compare(data)
    verdict = ni_test(result.estimate, result.se, delta, alpha=alpha, sided=sided)
    rows = [{
        "term": result.column, "estimate": result.estimate, "se": result.se,
        "delta": delta, "sided": sided, "p_value": verdict.p_value,
        "reject_h0": verdict.reject_h0,
    }]
    click.echo(text_table(rows))
    outcome = "ruled out" if verdict.reject_h0 else "NOT ruled out"
    click.echo(f"Subgroup shifts of at least {delta:g} are {outcome} at alpha={alpha:g}.")
    if out_path:
        write_report(out_path, fmt, "compare-subgroup",
                     _cli_config(ctx.params, ingested), rows)
        click.echo(f"wrote {out_path}")
    if plot_path:
        from . import plots

        grid = np.linspace(0.0, abs(result.estimate) + 4 * max(result.se, 1e-12), 101)[1:]
        plots.plot_ni_curve(ni_curve(result.estimate, result.se, grid, alpha=alpha),
                            plot_path, title="Subgroup rule-out curve")
        click.echo(f"wrote {plot_path}")


# ---------------------------------------------------------------------------
# ni-curve
# ---------------------------------------------------------------------------


@main.command("ni-curve")
@click.option("--input", "input_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--map-unit", default="unit", show_default=True)
@click.option("--map-time", default="time", show_default=True)
@click.option("--map-outcome", default="outcome", show_default=True)
@click.option("--map-treated", default="treated", show_default=True)
@click.option("--map-cluster", default=None)
@click.option("--map-subgroup", default=None)
@click.option("--t0", default=None)
@click.option("--trend", type=click.Choice([c for c in TREND_CHOICES if c != "none"]),
              default="linear", show_default=True)
@click.option("--method", type=click.Choice(sorted(METHODS)), default="vardiff",
              show_default=True)
@click.option("--kappa", type=float, default=None,
              help="Skip fitting: curve for this estimate...")
@click.option("--se", "se_kappa", type=float, default=None,
              help="...with this standard error.")
@click.option("--delta-max", type=float, default=None,
              help="Upper end of the threshold grid (default: auto).")
@click.option("--delta-steps", type=int, default=100, show_default=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--reps", type=int, default=999, show_default=True)
@output_options
@click.pass_context
@guarded
def ni_curve_command(ctx, input_path, map_unit, map_time, map_outcome, map_treated,
                     map_cluster, map_subgroup, t0, trend, method, kappa, se_kappa,
                     delta_max, delta_steps, alpha, seed, reps,
                     out_path, fmt, plot_path):
    """Non-inferiority p-values over a threshold grid, plus the crossing."""
    ingested = None
    if kappa is not None or se_kappa is not None:
        if kappa is None or se_kappa is None:
            raise ValidationError("--kappa and --se must be given together")
        cr = None
    else:
        if input_path is None or t0 is None:
            raise ValidationError("provide either --kappa/--se or --input/--t0")
        ingested = _load(input_path, map_unit, map_time, map_outcome, map_treated,
                         map_cluster, map_subgroup, t0)
        cr = _comparison(ingested.data, trend_from_label(trend), METHODS[method],
                         alpha, seed, reps)
        kappa, se_kappa = cr.kappa, cr.se_kappa

    if delta_max is None:
        delta_max = abs(kappa) + 4.0 * max(se_kappa, abs(kappa), 1e-12)
    grid = np.linspace(0.0, delta_max, delta_steps + 1)[1:]
    curve = ni_curve(kappa, se_kappa, grid, alpha=alpha)
    rows = curve.as_rows()
    click.echo(text_table(rows[:: max(1, len(rows) // 20)]))
    click.echo(f"kappa: {kappa:.6g}   se: {se_kappa:.6g}")
    click.echo(f"crossing delta (smallest threshold ruled out): {curve.crossing_delta:.6g}")
    if out_path:
        write_report(out_path, fmt, "ni-curve", _cli_config(ctx.params, ingested), rows,
                     extra={"crossing_delta": curve.crossing_delta,
                            "kappa": kappa, "se_kappa": se_kappa})
        click.echo(f"wrote {out_path}")
    if plot_path:
        from . import plots

        plots.plot_ni_curve(curve, plot_path)
        click.echo(f"wrote {plot_path}")


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------


@main.group("power")
def power_group():
    """Closed-form power and threshold calculators."""


def _emit_scalar(ctx, command, rows, out_path, fmt, plot_path=None, plot_fn=None):
    click.echo(text_table(rows))
    if out_path:
        write_report(out_path, fmt, command, _cli_config(ctx.params), rows)
        click.echo(f"wrote {out_path}")
    if plot_path and plot_fn:
        plot_fn(plot_path)
        click.echo(f"wrote {plot_path}")


@power_group.command("mde")
@click.option("--n", type=int, required=True, help="Sample size.")
@click.option("--sigma", type=float, required=True, help="Outcome standard deviation.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--power", "target_power", type=float, default=0.8, show_default=True)
@click.option("--sided", type=click.Choice(["one", "two"]), default="one", show_default=True)
@click.option("--df", type=int, default=None, help="Use a t reference with this df.")
@output_options
@click.pass_context
@guarded
def power_mde(ctx, n, sigma, alpha, target_power, sided, df, out_path, fmt, plot_path):
    """Minimum detectable effect."""
    value = mde(n, sigma, alpha=alpha, power=target_power, sided=sided, df=df)
    rows = [{"n": n, "sigma": sigma, "alpha": alpha, "power": target_power,
             "sided": sided, "mde": value}]
    _emit_scalar(ctx, "power-mde", rows, out_path, fmt)


@power_group.command("ni")
@click.option("--delta", type=float, required=True, help="Threshold to rule out.")
@click.option("--theta", "true_theta", type=float, default=0.0, show_default=True,
              help="Assumed true violation.")
@click.option("--se", type=float, required=True, help="Standard error of the estimate.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--sided", type=click.Choice(["one", "two"]), default="one", show_default=True)
@click.option("--df", type=int, default=None)
@output_options
@click.pass_context
@guarded
def power_ni(ctx, delta, true_theta, se, alpha, sided, df, out_path, fmt, plot_path):
    """Power to rule out a violation of at least delta."""
    value = ni_power(delta, true_theta, se, alpha=alpha, sided=sided, df=df)
    rows = [{"delta": delta, "true_theta": true_theta, "se": se, "alpha": alpha,
             "sided": sided, "power": value}]

    def render(path):
        from . import plots

        grid = np.linspace(0.0, 2.0 * max(delta, se), 200)[1:]
        powers = [ni_power(d, true_theta, se, alpha=alpha, sided=sided, df=df)
                  for d in grid]
        plots.plot_power_curve(grid, powers, path, xlabel="threshold (delta)",
                               title="Power to rule out a violation")

    _emit_scalar(ctx, "power-ni", rows, out_path, fmt, plot_path, render)


@power_group.command("detect")
@click.option("--theta", type=float, required=True, help="Effect size to detect.")
@click.option("--se", type=float, required=True)
@click.option("--alpha", type=float, default=0.05, show_default=True)
@click.option("--sided", type=click.Choice(["one", "two"]), default="one", show_default=True)
@click.option("--theta0", type=float, default=0.0, show_default=True,
              help="Null value (shifted-null tests).")
@click.option("--df", type=int, default=None)
@output_options
@click.pass_context
@guarded
def power_detect(ctx, theta, se, alpha, sided, theta0, df, out_path, fmt, plot_path):
    """Power of an ordinary z-test to detect an effect."""
    value = detection_power(theta, se, alpha=alpha, sided=sided, theta0=theta0, df=df)
    rows = [{"theta": theta, "theta0": theta0, "se": se, "alpha": alpha,
             "sided": sided, "power": value}]

    def render(path):
        from . import plots

        grid = np.linspace(0.0, 2.0 * max(abs(theta), se), 200)
        powers = [detection_power(x, se, alpha=alpha, sided=sided, theta0=theta0, df=df)
                  for x in grid]
        plots.plot_power_curve(grid, powers, path, xlabel="effect size",
                               title="Detection power")

    _emit_scalar(ctx, "power-detect", rows, out_path, fmt, plot_path, render)


@power_group.command("empirical")
@click.option("--p", "p_value", type=float, required=True, help="Observed p-value.")
@click.option("--alpha", type=float, default=0.05, show_default=True)
@output_options
@click.pass_context
@guarded
def power_empirical(ctx, p_value, alpha, out_path, fmt, plot_path):
    """Observed ('empirical') power transform of a p-value, with its caveat."""
    result = empirical_power(p_value, alpha=alpha)
    rows = [{"p_value": p_value, "alpha": alpha, "empirical_power": result.value}]
    click.echo(f"caveat: {result.caveat}", err=True)
    _emit_scalar(ctx, "power-empirical", rows, out_path, fmt)


@power_group.command("se-inflation")
@click.option("--r2-trend", type=float, required=True,
              help="R^2 of the effect indicator on the trend column(s).")
@click.option("--r2-others", type=float, required=True,
              help="R^2 of the effect indicator on the other reduced-model columns.")
@output_options
@click.pass_context
@guarded
def power_se_inflation(ctx, r2_trend, r2_others, out_path, fmt, plot_path):
    """Lower bound on the variance ratio from adding a trend difference."""
    value = se_inflation_bound(r2_trend, r2_others)
    rows = [{"r2_trend": r2_trend, "r2_others": r2_others,
             "variance_ratio_lower_bound": value}]
    _emit_scalar(ctx, "power-se-inflation", rows, out_path, fmt)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


@main.command("simulate")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Scenario file (see scenarios/example.cfg).")
@click.option("--paper-grid", "use_paper_grid", is_flag=True,
              help="Run the full built-in scenario grid (288 cells).")
@click.option("--models", default=None,
              help="Space-separated subset of: " + " ".join(MODEL_ORDER))
@click.option("--trials", type=int, default=None, help="Override trials per scenario.")
@click.option("--seed", type=int, default=None, help="Override the grid seed.")
@click.option("--alpha", type=float, default=None)
@click.option("--delta", type=float, default=None,
              help="Rule-out threshold (default: each scenario's effect size).")
@click.option("--ri-reps", type=int, default=None,
              help="Randomization replications for the penalized spline.")
@click.option("--no-pspline-inference", is_flag=True,
              help="Skip randomization inference for the penalized spline "
                   "(its power columns become NaN).")
@click.option("--jobs", type=int, default=None,
              help=f"Parallel scenario workers (default: ${JOBS_ENV} or CPU count).")
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--plot-dir", default=None, type=click.Path(file_okay=False),
              help="Render power/bias/mse/rule-out figures into this directory.")
@click.pass_context
@guarded
def simulate_command(ctx, config_path, use_paper_grid, models, trials, seed, alpha,
                     delta, ri_reps, no_pspline_inference, jobs, out_path, fmt,
                     plot_dir):
    """Run a scenario grid and aggregate power, bias, and MSE per model."""
    if (config_path is None) == (not use_paper_grid):
        raise ValidationError("provide exactly one of --config or --paper-grid")
    if use_paper_grid:
        scenarios = paper_grid(trials=trials or 200, seed=seed or 0)
        grid_alpha = alpha if alpha is not None else 0.05
        grid_delta = delta
        grid_models = tuple((models or " ".join(MODEL_ORDER)).split())
        ri = ri_reps if ri_reps is not None else 199
    else:
        settings, scenarios = parse_scenario_file(config_path)
        if trials is not None:
            scenarios = [_replace_cfg(s, trials=trials) for s in scenarios]
        if seed is not None:
            scenarios = [_replace_cfg(s, seed=seed + i) for i, s in enumerate(scenarios)]
        grid_alpha = alpha if alpha is not None else settings.alpha
        grid_delta = delta if delta is not None else settings.delta
        grid_models = tuple(models.split()) if models else settings.models
        ri = ri_reps if ri_reps is not None else settings.ri_replications

    unknown = [m for m in grid_models if m not in MODEL_ORDER]
    if unknown:
        raise ValidationError(f"unknown models {unknown}; choose from {MODEL_ORDER}")

    if jobs is None:
        jobs = int(os.environ.get(JOBS_ENV, os.cpu_count() or 1))

    total = len(scenarios)

    def progress(result):
        click.echo(f"done {result.config.label()}", err=True)

    click.echo(f"running {total} scenario(s) with {jobs} worker(s)...", err=True)
    results = run_grid(scenarios, models=grid_models, alpha=grid_alpha,
                       delta=grid_delta, parallelism=jobs, sink=progress,
                       ri_replications=ri,
                       pspline_inference="none" if no_pspline_inference
                       else "randomization")

    rows = [row for result in results for row in result.to_rows()]
    click.echo(text_table(rows[:30]))
    if len(rows) > 30:
        click.echo(f"... {len(rows) - 30} more rows (use --out to capture everything)")

    if out_path:
        write_report(out_path, fmt, "simulate", _cli_config(ctx.params), rows,
                     extra={"n_scenarios": total})
        click.echo(f"wrote {out_path}")
    if plot_dir:
        from . import plots

        for metric in ("power", "rule_out_power", "bias", "mse"):
            target = os.path.join(plot_dir, f"{metric}.png")
            plots.plot_scenario_metric(results, metric, target)
            click.echo(f"wrote {target}")


def _replace_cfg(cfg, **kwargs):
    from dataclasses import replace

    return replace(cfg, **kwargs)


if __name__ == "__main__":
    main()
