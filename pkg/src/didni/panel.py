"""Panel data model and design-matrix builders for DID specifications.

A :class:`PanelDataset` is a balanced unit-by-time panel on an integer time
grid 1..T with an intervention start ``t0``. Builders turn it into named
design matrices with unit and time dummies, per-period treatment-effect
indicators, and a configurable treated-group trend-difference basis
(polynomial, restricted cubic spline, or penalized B-spline).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import solve_triangular

from .exceptions import ComputationError, ValidationError
from .linmod import DesignMatrix, FitResult

TREND_KINDS = ("none", "poly", "rcs", "pspline")
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4.0, 8.0, 25))


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PanelDataset:
    """Balanced panel with treatment, optional cluster and subgroup labels.

    Times must already be mapped to the contiguous grid 1..T (the CLI's
    ingestion layer does this for calendar data); ``t0`` is the first
    post-intervention period.
    """

    unit_ids: np.ndarray
    times: np.ndarray
    treated: np.ndarray
    outcome: np.ndarray
    t0: int
    cluster_ids: np.ndarray | None = None
    subgroup: np.ndarray | None = None

    def __post_init__(self):
        unit_ids = np.asarray(self.unit_ids)
        times = np.asarray(self.times, dtype=int)
        treated = np.asarray(self.treated, dtype=bool)
        outcome = np.asarray(self.outcome, dtype=float)
        n = unit_ids.shape[0]
        for name, arr in (("times", times), ("treated", treated), ("outcome", outcome)):
            if arr.shape != (n,):
                raise ValidationError(f"{name} must have the same length as unit_ids")
        if not np.isfinite(outcome).all():
            raise ValidationError("outcome contains non-finite values")

        cluster_ids = self.cluster_ids
        if cluster_ids is not None:
            cluster_ids = np.asarray(cluster_ids)
            if cluster_ids.shape != (n,):
                raise ValidationError("cluster_ids must have one entry per row")
        subgroup = self.subgroup
        if subgroup is not None:
            subgroup = np.asarray(subgroup, dtype=bool)
            if subgroup.shape != (n,):
                raise ValidationError("subgroup must have one entry per row")

        units, unit_inverse = np.unique(unit_ids, return_inverse=True)
        all_times = np.unique(times)
        t_max = int(all_times.max()) if all_times.size else 0
        if all_times.size == 0 or all_times[0] != 1 or not np.array_equal(
            all_times, np.arange(1, t_max + 1)
        ):
            raise ValidationError(
                "times must cover a contiguous integer grid starting at 1; "
                f"observed {all_times.tolist()[:10]}"
            )
        if not (2 <= self.t0 <= t_max):
            raise ValidationError(f"t0 must satisfy 2 <= t0 <= {t_max}, got {self.t0}")

        # Balance: every unit observes every time exactly once.
        cell_counts = np.zeros((units.size, t_max), dtype=int)
        np.add.at(cell_counts, (unit_inverse, times - 1), 1)
        if np.any(cell_counts != 1):
            for i, u in enumerate(units):
                dup = np.flatnonzero(cell_counts[i] > 1) + 1
                if dup.size:
                    raise ValidationError(
                        f"duplicate (unit, time) cells for unit {u!r} at times {dup.tolist()}"
                    )
            missing = []
            for i, u in enumerate(units):
                gap = np.flatnonzero(cell_counts[i] == 0) + 1
                if gap.size:
                    missing.append(f"unit {u!r}: times {gap.tolist()}")
            raise ValidationError(
                "panel is not balanced; missing cells: " + "; ".join(missing[:8])
            )

        treated_per_unit = np.zeros(units.size, dtype=int)
        np.add.at(treated_per_unit, unit_inverse, treated.astype(int))
        varies = (treated_per_unit % t_max) != 0
        if varies.any():
            raise ValidationError(
                f"treated status varies within unit {units[np.argmax(varies)]!r}"
            )
        if subgroup is not None:
            sub_per_unit = np.zeros(units.size, dtype=int)
            np.add.at(sub_per_unit, unit_inverse, subgroup.astype(int))
            sv = (sub_per_unit % t_max) != 0
            if sv.any():
                raise ValidationError(
                    f"subgroup label varies within unit {units[np.argmax(sv)]!r}"
                )

        unit_treated = treated_per_unit == t_max
        if not unit_treated.any() or unit_treated.all():
            raise ValidationError("need at least one treated and one comparison unit")

        for name, arr in (
            ("unit_ids", unit_ids),
            ("times", times),
            ("treated", treated),
            ("outcome", outcome),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if cluster_ids is not None:
            cluster_ids.setflags(write=False)
        if subgroup is not None:
            subgroup.setflags(write=False)
        object.__setattr__(self, "cluster_ids", cluster_ids)
        object.__setattr__(self, "subgroup", subgroup)
        object.__setattr__(self, "_units", tuple(units.tolist()))
        object.__setattr__(self, "_t_max", t_max)

    @property
    def n_rows(self) -> int:
        return self.unit_ids.shape[0]

    @property
    def t_max(self) -> int:
        return self._t_max

    @property
    def units(self) -> tuple:
        return self._units

    @property
    def n_units(self) -> int:
        return len(self._units)

    @property
    def pre_times(self) -> tuple[int, ...]:
        return tuple(range(1, self.t0))

    @property
    def post_times(self) -> tuple[int, ...]:
        return tuple(range(self.t0, self.t_max + 1))

    def to_frame(self) -> pd.DataFrame:
        data = {
            "unit": self.unit_ids,
            "time": self.times,
            "treated": self.treated.astype(int),
            "outcome": self.outcome,
        }
        if self.cluster_ids is not None:
            data["cluster"] = self.cluster_ids
        if self.subgroup is not None:
            data["subgroup"] = self.subgroup.astype(int)
        return pd.DataFrame(data)

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        t0: int,
        unit: str = "unit",
        time: str = "time",
        outcome: str = "outcome",
        treated: str = "treated",
        cluster: str | None = None,
        subgroup: str | None = None,
    ) -> "PanelDataset":
        return cls(
            unit_ids=frame[unit].to_numpy(),
            times=frame[time].to_numpy(),
            treated=frame[treated].to_numpy().astype(bool),
            outcome=frame[outcome].to_numpy(dtype=float),
            t0=t0,
            cluster_ids=frame[cluster].to_numpy() if cluster else None,
            subgroup=frame[subgroup].to_numpy().astype(bool) if subgroup else None,
        )


# ---------------------------------------------------------------------------
# Specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrendSpec:
    """Which treated-group trend-difference basis to include.

    kind 'none' or 'poly' (degree 1..3), 'rcs' (restricted cubic spline with
    boundary knots at the pre-period extremes and an interior knot at the
    pre-period median), or 'pspline' (cubic B-splines with a second-order
    difference penalty, smoothing chosen by GCV over ``lambda_grid``).
    """

    kind: str = "none"
    degree: int = 0
    basis_size: int | None = None
    lambda_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in TREND_KINDS:
            raise ValidationError(f"trend kind must be one of {TREND_KINDS}")
        if self.kind == "poly" and self.degree not in (1, 2, 3):
            raise ValidationError("poly trend degree must be 1, 2, or 3")
        if self.kind != "poly" and self.degree != 0:
            raise ValidationError("degree is only meaningful for poly trends")
        if self.kind == "pspline":
            if self.basis_size is not None and self.basis_size < 4:
                raise ValidationError("pspline basis_size must be at least 4")
            if self.lambda_grid is not None:
                grid = tuple(float(x) for x in self.lambda_grid)
                if not grid or any(x <= 0 for x in grid):
                    raise ValidationError("lambda_grid must be strictly positive")
                if any(a >= b for a, b in zip(grid, grid[1:])):
                    raise ValidationError("lambda_grid must be strictly increasing")
                object.__setattr__(self, "lambda_grid", grid)
        elif self.basis_size is not None or self.lambda_grid is not None:
            raise ValidationError("basis_size/lambda_grid only apply to pspline")

    @classmethod
    def none(cls) -> "TrendSpec":
        return cls("none")

    @classmethod
    def poly(cls, degree: int) -> "TrendSpec":
        return cls("poly", degree=degree)

    @classmethod
    def rcs(cls) -> "TrendSpec":
        return cls("rcs")

    @classmethod
    def pspline(
        cls,
        basis_size: int | None = None,
        lambda_grid: Sequence[float] | None = None,
    ) -> "TrendSpec":
        return cls(
            "pspline",
            basis_size=basis_size,
            lambda_grid=tuple(lambda_grid) if lambda_grid is not None else None,
        )

    @property
    def label(self) -> str:
        if self.kind == "poly":
            return {1: "linear", 2: "quadratic", 3: "cubic"}[self.degree]
        return self.kind


def trend_from_label(label: str) -> TrendSpec:
    """Map CLI-style labels (none/linear/quad/cubic/rcs/pspline) to specs."""
    table = {
        "none": TrendSpec.none(),
        "linear": TrendSpec.poly(1),
        "quad": TrendSpec.poly(2),
        "quadratic": TrendSpec.poly(2),
        "cubic": TrendSpec.poly(3),
        "rcs": TrendSpec.rcs(),
        "pspline": TrendSpec.pspline(),
    }
    try:
        return table[label]
    except KeyError:
        raise ValidationError(
            f"unknown trend {label!r}; choose from {sorted(set(table))}"
        ) from None


@dataclass(frozen=True)
class DidModelSpec:
    """One DID model: trend basis, effect window, optional subgroup term.

    ``effect_window`` defaults to the full post period {t0..T}. A window
    lying entirely before t0 is a placebo specification: the model is fit to
    pre-intervention data only, with placebo effect indicators over the
    window.
    """

    trend: TrendSpec = TrendSpec.none()
    effect_window: tuple[int, ...] | None = None
    include_subgroup_effect: bool = False

    def __post_init__(self):
        if self.effect_window is not None:
            window = tuple(int(t) for t in self.effect_window)
            if not window:
                raise ValidationError("effect window must be non-empty")
            if sorted(window) != list(range(min(window), max(window) + 1)):
                raise ValidationError("effect window must be a contiguous range")
            object.__setattr__(self, "effect_window", window)

    def resolve_window(self, data: PanelDataset) -> tuple[tuple[int, ...], bool]:
        """Return (window, is_placebo) for this spec on a dataset."""
        if self.effect_window is None:
            return data.post_times, False
        window = tuple(sorted(self.effect_window))
        if max(window) < data.t0:
            if min(window) < 1:
                raise ValidationError("placebo window times must be >= 1")
            return window, True
        if window == data.post_times:
            return window, False
        raise ValidationError(
            "effect window must be either entirely pre-intervention (placebo) "
            f"or the full post period {data.post_times[0]}..{data.post_times[-1]}"
        )


def effect_column(time: int) -> str:
    return f"effect::{time}"


# ---------------------------------------------------------------------------
# Basis construction
# ---------------------------------------------------------------------------


def rcs_basis(
    times: Sequence[float],
    knot: float,
    boundary: tuple[float, float] | None = None,
) -> np.ndarray:
    """Restricted cubic spline basis with three knots: two columns (t, cubic).

    Boundary knots default to the min/max of ``times`` (at least 4 distinct
    values required); the cubic column is zero below the lower boundary and
    exactly linear beyond the upper one, using the standard normalization by
    the squared knot span.
    """
    x = np.asarray(times, dtype=float)
    if boundary is None:
        distinct = np.unique(x)
        if distinct.size < 4:
            raise ValidationError(
                f"restricted cubic spline needs >= 4 distinct times, got {distinct.size}"
            )
        k1, k3 = float(distinct[0]), float(distinct[-1])
    else:
        k1, k3 = float(boundary[0]), float(boundary[1])
    k2 = float(knot)
    if not (k1 < k2 < k3):
        raise ValidationError(
            f"interior knot must lie strictly between boundaries, got {k1} < {k2} < {k3}"
        )

    def plus3(v):
        return np.clip(v, 0.0, None) ** 3

    cubic = (
        plus3(x - k1)
        - plus3(x - k2) * (k3 - k1) / (k3 - k2)
        + plus3(x - k3) * (k2 - k1) / (k3 - k2)
    ) / (k3 - k1) ** 2
    return np.column_stack([x, cubic])


def default_pspline_basis_size(n_pre_times: int) -> int:
    """Basis dimension used when the spec leaves it unset."""
    return max(4, min(10, n_pre_times - 1))


def bspline_basis(
    times: Sequence[float], t_min: float, t_max: float, basis_size: int, degree: int = 3
) -> np.ndarray:
    """Uniform (unclamped) cubic B-spline basis over [t_min, t_max].

    Equally spaced knots extended past both boundaries so that coefficient
    vectors that are affine in the index reproduce affine functions of t;
    that makes the null space of the second-difference penalty exactly the
    linear trends.
    """
    if basis_size < degree + 1:
        raise ValidationError(f"basis_size must be at least {degree + 1}")
    if not t_max > t_min:
        raise ValidationError("need t_max > t_min for a spline basis")
    h = (t_max - t_min) / (basis_size - degree)
    knots = t_min + h * np.arange(-degree, basis_size + 1)
    x = np.asarray(times, dtype=float)
    design = BSpline.design_matrix(x, knots, degree)
    return np.asarray(design.todense())


def second_difference_penalty(size: int) -> np.ndarray:
    """Second-order difference operator D2 (size-2 x size)."""
    if size < 3:
        raise ValidationError("difference penalty needs at least 3 coefficients")
    return np.diff(np.eye(size), n=2, axis=0)


def pspline_transform(
    basis_size: int, t_min: float, t_max: float, degree: int = 3
) -> tuple[np.ndarray, list[str]]:
    """Reparameterize B-spline coefficients so the curvature penalty is plain.

    The second-difference penalty has a two-dimensional null space (constant
    and linear in the coefficient index). The constant direction reproduces
    the treated indicator, which the unit dummies already span, so it is
    dropped; the linear direction is kept unpenalized; the remaining
    directions are penalty eigenvectors scaled by 1/sqrt(eigenvalue), which
    turns lambda * ||D2 w||^2 into lambda * ||gamma_wiggle||^2. With that
    identity penalty the augmented least-squares rows stay orthogonal at any
    lambda, so huge smoothing values are numerically safe.

    Returns the (basis_size x basis_size-1) transform and column names.
    """
    h = (t_max - t_min) / (basis_size - degree)
    knots = t_min + h * np.arange(-degree, basis_size + 1)
    greville = np.array(
        [knots[j + 1 : j + degree + 1].mean() for j in range(basis_size)]
    )
    lin = greville - greville.mean()
    lin = lin / np.linalg.norm(lin)
    d2 = second_difference_penalty(basis_size)
    penalty = d2.T @ d2
    eigval, eigvec = np.linalg.eigh(penalty)
    positive = eigval > eigval[-1] * 1e-9
    range_vecs = eigvec[:, positive] / np.sqrt(eigval[positive])
    transform = np.column_stack([lin, range_vecs])
    names = ["trend::ps_lin"] + [
        f"trend::ps_w{j + 1:02d}" for j in range(range_vecs.shape[1])
    ]
    return transform, names


def pspline_penalized_columns(column_names: Sequence[str]) -> list[str]:
    """Names of the identity-penalized spline columns in a design."""
    return [c for c in column_names if c.startswith("trend::ps_w")]


# ---------------------------------------------------------------------------
# Design assembly
# ---------------------------------------------------------------------------


def trend_row_values(
    data: PanelDataset, trend: TrendSpec, rows: np.ndarray
) -> tuple[np.ndarray, list[str]]:
    """Trend basis evaluated at each retained row's time, before the
    treated-group interaction. Returns (values, column names)."""
    t = data.times[rows].astype(float)
    if trend.kind == "none":
        return np.empty((int(rows.sum()), 0)), []
    if trend.kind == "poly":
        cols = np.column_stack([t**j for j in range(1, trend.degree + 1)])
        return cols, [f"trend::t{j}" for j in range(1, trend.degree + 1)]
    pre = np.asarray(data.pre_times, dtype=float)
    if trend.kind == "rcs":
        if pre.size < 4:
            raise ValidationError(
                "rcs trend needs at least 4 pre-intervention periods"
            )
        basis = rcs_basis(t, knot=float(np.median(pre)), boundary=(pre[0], pre[-1]))
        return basis, ["trend::rcs1", "trend::rcs2"]
    # pspline: basis spans the full observed time range; the post-period part
    # is pinned by the effect indicators plus the difference penalty.
    basis_size = trend.basis_size or default_pspline_basis_size(pre.size)
    basis = bspline_basis(t, 1.0, float(data.t_max), basis_size)
    transform, names = pspline_transform(basis_size, 1.0, float(data.t_max))
    return basis @ transform, names


def _trend_block(
    data: PanelDataset, trend: TrendSpec, rows: np.ndarray
) -> tuple[np.ndarray, list[str]]:
    values, names = trend_row_values(data, trend, rows)
    if values.shape[1]:
        values = values * data.treated[rows].astype(float)[:, None]
    return values, names


def build_design(
    data: PanelDataset, spec: DidModelSpec
) -> tuple[DesignMatrix, np.ndarray, list[str]]:
    """Assemble the regression for one DID specification.

    Returns the named design, the outcome vector over the retained rows, and
    the names of the per-period effect columns (ordered by time). Placebo
    windows drop all rows at or after t0.
    """
    window, is_placebo = spec.resolve_window(data)
    if is_placebo:
        rows = data.times < data.t0
    else:
        rows = np.ones(data.n_rows, dtype=bool)

    unit_ids = data.unit_ids[rows]
    times = data.times[rows]
    treated = data.treated[rows]
    n = int(rows.sum())

    blocks = [np.ones((n, 1))]
    names: list[str] = ["intercept"]

    units, unit_inverse = np.unique(unit_ids, return_inverse=True)
    if units.size > 1:
        one_hot = np.zeros((n, units.size))
        one_hot[np.arange(n), unit_inverse] = 1.0
        blocks.append(one_hot[:, 1:])  # first unit is the reference
        names.extend(f"unit::{u}" for u in units[1:])

    kept_times, time_inverse = np.unique(times, return_inverse=True)
    if kept_times.size > 1:
        one_hot = np.zeros((n, kept_times.size))
        one_hot[np.arange(n), time_inverse] = 1.0
        blocks.append(one_hot[:, 1:])
        names.extend(f"time::{t}" for t in kept_times[1:])

    effect_cols = []
    for k in window:
        blocks.append(((times == k) & treated).astype(float)[:, None])
        name = effect_column(k)
        names.append(name)
        effect_cols.append(name)

    trend_values, trend_names = _trend_block(data, spec.trend, rows)
    if trend_values.shape[1]:
        blocks.append(trend_values)
        names.extend(trend_names)

    if spec.include_subgroup_effect:
        if data.subgroup is None:
            raise ValidationError("spec requests a subgroup effect but the panel has no subgroup labels")
        sub = data.subgroup[rows]
        if not sub.any():
            raise ValidationError("subgroup effect requested but no subgroup rows present")
        blocks.append(((times >= data.t0) & sub).astype(float)[:, None])
        names.append("subgroup::post")

    X = DesignMatrix(np.hstack(blocks), tuple(names))
    return X, data.outcome[rows].copy(), effect_cols


def trend_column_names(X: DesignMatrix) -> list[str]:
    return [c for c in X.column_names if c.startswith("trend::")]


# ---------------------------------------------------------------------------
# Penalized-spline fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsplineFit:
    """Penalized trend fit plus the GCV trace that chose its smoothing."""

    fit: FitResult
    lambda_: float
    lambda_grid: tuple[float, ...]
    gcv: tuple[float, ...]
    edf: float
    effect_cols: tuple[str, ...]
    basis_size: int
    t_max: int

    def trend_values(self, times: np.ndarray) -> np.ndarray:
        """Fitted treated-minus-comparison trend component at given times.

        Constant level differences live in the unit dummies, so the returned
        trend is identified up to its shape (zero coefficient-space mean).
        """
        transform, names = pspline_transform(self.basis_size, 1.0, float(self.t_max))
        coefs = np.array([self.fit.coef(c) for c in names])
        basis = bspline_basis(times, 1.0, float(self.t_max), self.basis_size)
        return basis @ (transform @ coefs)


class PsplineSolver:
    """Penalized least squares over a lambda grid for a fixed design.

    The penalty is lambda times the squared norm of the named coefficients
    (the design builder has already rotated the curvature penalty into this
    identity form). Per-lambda R factors (from QR of the penalty-augmented
    matrix) and hat-trace values are precomputed; each ``fit`` then costs a
    handful of matrix-vector products, so simulation trials can share one
    solver.
    """

    def __init__(
        self,
        X: DesignMatrix,
        penalized_cols: Sequence[str],
        lambda_grid: Sequence[float],
    ):
        values = X.values
        n, p = values.shape
        idx = [X.column_index(c) for c in penalized_cols]
        if not idx:
            raise ValidationError("need at least one penalized column")
        dmat = np.zeros((len(idx), p))
        dmat[np.arange(len(idx)), idx] = 1.0
        grid = tuple(float(x) for x in lambda_grid)
        if not grid or any(x <= 0 for x in grid):
            raise ValidationError("lambda grid must be strictly positive")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValidationError("lambda grid must be strictly increasing")

        self.design = X
        self.lambda_grid = grid
        self._xtx = values.T @ values
        self._solvers = []
        for lam in grid:
            augmented = np.vstack([values, np.sqrt(lam) * dmat])
            r = np.linalg.qr(augmented, mode="r")
            diag = np.abs(np.diag(r))
            tol = (diag.max() if diag.size else 1.0) * max(n, p) * np.finfo(float).eps
            if np.any(diag <= tol):
                bad = [X.column_names[j] for j in np.where(diag <= tol)[0]]
                raise ComputationError(
                    f"penalized design is singular at lambda={lam:g} (columns {bad})"
                )
            k = solve_triangular(r, np.eye(p))
            g = values @ k
            tr_h = float(np.sum(g * g))
            self._solvers.append((lam, k, tr_h))

    def batch_average_effect(
        self, Y: np.ndarray, weights: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """GCV-selected w'beta for many outcome columns at once.

        Returns (estimates, lambda_index) arrays of length m for Y of shape
        (n, m); each column's smoothing is chosen by its own GCV trace.
        """
        X = self.design
        values = X.values
        n, p = values.shape
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] != n:
            raise ValidationError(f"Y has {Y.shape[0]} rows, expected {n}")
        w = np.asarray(weights, dtype=float)
        if w.shape != (p,):
            raise ValidationError("weights must have one entry per design column")
        m = Y.shape[1]
        xty = values.T @ Y
        yty = np.einsum("ij,ij->j", Y, Y)
        gcv = np.empty((len(self._solvers), m))
        averages = np.empty((len(self._solvers), m))
        for i, (lam, k, tr_h) in enumerate(self._solvers):
            beta = k @ (k.T @ xty)
            quad = np.einsum("ij,ij->j", beta, self._xtx @ beta)
            cross = np.einsum("ij,ij->j", beta, xty)
            rss = np.clip(yty - 2.0 * cross + quad, 0.0, None)
            denom = n - tr_h
            if denom <= 0:
                raise ComputationError("effective degrees of freedom exceed sample size")
            gcv[i] = n * rss / denom**2
            averages[i] = w @ beta
        best = np.argmin(gcv, axis=0)
        return averages[best, np.arange(m)], best

    def fit(
        self,
        y: np.ndarray,
        effect_cols: Sequence[str],
        basis_size: int = 0,
        t_max: int = 0,
    ) -> PsplineFit:
        X = self.design
        values = X.values
        n, p = values.shape
        y = np.asarray(y, dtype=float)
        if y.shape != (n,):
            raise ValidationError(f"y has length {y.shape}, expected ({n},)")
        xty = values.T @ y
        yty = float(y @ y)

        gcv_values = []
        betas = []
        for lam, k, tr_h in self._solvers:
            beta = k @ (k.T @ xty)
            rss = max(yty - 2.0 * float(beta @ xty) + float(beta @ self._xtx @ beta), 0.0)
            denom = n - tr_h
            if denom <= 0:
                raise ComputationError("effective degrees of freedom exceed sample size")
            gcv_values.append(n * rss / denom**2)
            betas.append((beta, rss, tr_h, k))

        best = int(np.argmin(gcv_values))  # ties resolve to the smallest lambda
        lam, k, tr_h = self._solvers[best][0], betas[best][3], betas[best][2]
        beta, rss = betas[best][0], betas[best][1]
        sigma2 = rss / (n - tr_h)
        c = k.T @ self._xtx @ k
        vcov = sigma2 * (k @ c @ k.T)
        fit = FitResult(
            column_names=X.column_names,
            coefficients=beta,
            vcov=vcov,
            sigma2=sigma2,
            df_resid=max(int(round(n - tr_h)), 1),
            r_squared=float(np.clip(1.0 - rss / max(np.sum((y - y.mean()) ** 2), 1e-300), 0.0, 1.0)),
            vcov_kind="iid",
            n_obs=n,
        )
        return PsplineFit(
            fit=fit,
            lambda_=lam,
            lambda_grid=self.lambda_grid,
            gcv=tuple(gcv_values),
            edf=tr_h,
            effect_cols=tuple(effect_cols),
            basis_size=basis_size,
            t_max=t_max,
        )


def pspline_fit(data: PanelDataset, spec: DidModelSpec) -> PsplineFit:
    """Fit the penalized-spline trend-difference model, choosing lambda by GCV.

    The spline coefficients carry a second-order difference penalty; GCV is
    n*RSS / (n - tr(H))^2 minimized over the grid, ties going to the smallest
    lambda. The returned covariance is the penalized (ridge-style) one and is
    descriptive only; use randomization inference for hypothesis tests on
    this model.
    """
    if spec.trend.kind != "pspline":
        raise ValidationError("pspline_fit requires a pspline trend spec")
    X, y, effect_cols = build_design(data, spec)
    basis_size = spec.trend.basis_size or default_pspline_basis_size(
        len(data.pre_times)
    )
    if len(data.pre_times) < basis_size + 2:
        warnings.warn(
            f"only {len(data.pre_times)} pre-intervention periods for a "
            f"{basis_size}-function spline basis; the trend fit will lean on the penalty",
            stacklevel=2,
        )
    grid = spec.trend.lambda_grid or DEFAULT_LAMBDA_GRID
    solver = PsplineSolver(X, pspline_penalized_columns(X.column_names), grid)
    return solver.fit(y, effect_cols, basis_size=basis_size, t_max=data.t_max)
