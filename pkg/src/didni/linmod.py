"""Least-squares core: named design matrices, OLS with iid/robust/cluster
variance estimators, and partial R-squared helpers.

Everything here is deterministic and pure. Fits go through an orthogonal
(QR) factorization with column pivoting; the normal equations are never
formed, and rank deficiency raises instead of silently dropping columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.linalg import qr as _qr
from scipy.linalg import solve_triangular

from .exceptions import RankDeficientError, ValidationError

VCOV_KINDS = ("iid", "hc1", "cluster_cr1")


@dataclass(frozen=True)
class DesignMatrix:
    """Dense regressor matrix with unique column names.

    Rank is not checked at construction; it is enforced when the matrix is
    factorized for fitting, where the offending columns can be named.
    """

    values: np.ndarray
    column_names: tuple[str, ...]

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if values.ndim != 2:
            raise ValidationError("design matrix must be 2-dimensional")
        if values.shape[1] < 1:
            raise ValidationError("design matrix needs at least one column")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != values.shape[1]:
            raise ValidationError(
                f"{len(names)} column names for {values.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            dupes = sorted({c for c in names if names.count(c) > 1})
            raise ValidationError(f"duplicate column names: {dupes}")
        if not np.isfinite(values).all():
            raise ValidationError("design matrix contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "_index", {c: j for j, c in enumerate(names)})

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"no column named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_index(name)]


@dataclass(frozen=True)
class FitResult:
    """One fitted linear model: coefficients, variance matrix, diagnostics."""

    column_names: tuple[str, ...]
    coefficients: np.ndarray
    vcov: np.ndarray
    sigma2: float
    df_resid: int
    r_squared: float
    vcov_kind: str
    n_obs: int
    _index: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "_index", {c: j for j, c in enumerate(self.column_names)}
        )
        self.coefficients.setflags(write=False)
        self.vcov.setflags(write=False)

    @property
    def n_params(self) -> int:
        return len(self.column_names)

    def coef(self, name: str) -> float:
        return float(self.coefficients[self._col(name)])

    def se(self, name: str) -> float:
        j = self._col(name)
        return float(np.sqrt(max(self.vcov[j, j], 0.0)))

    def linear_combination(
        self, names: Sequence[str], weights: Sequence[float] | None = None
    ) -> tuple[float, float]:
        """Point estimate and standard error of w'beta over the named columns.

        Defaults to the equal-weight average; the variance uses the full
        covariance block (delta method on a linear form).
        """
        idx = [self._col(c) for c in names]
        w = np.full(len(idx), 1.0 / len(idx)) if weights is None else np.asarray(
            weights, dtype=float
        )
        if w.shape != (len(idx),):
            raise ValidationError("weights length must match names")
        est = float(w @ self.coefficients[idx])
        var = float(w @ self.vcov[np.ix_(idx, idx)] @ w)
        return est, float(np.sqrt(max(var, 0.0)))

    def params(self) -> pd.Series:
        return pd.Series(self.coefficients, index=list(self.column_names))

    def vcov_frame(self) -> pd.DataFrame:
        names = list(self.column_names)
        return pd.DataFrame(self.vcov, index=names, columns=names)

    def _col(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"no coefficient named {name!r}") from None


class OlsSolver:
    """Reusable QR factorization of a fixed design.

    Simulation loops refit the same design against many outcome vectors;
    factoring once and reusing Q and R makes each fit a couple of matrix-
    vector products. ``ols_fit`` is the one-shot wrapper.
    """

    def __init__(self, X: DesignMatrix):
        values = X.values
        n, p = values.shape
        if n <= p:
            raise ValidationError(
                f"need more rows than columns to fit ({n} rows, {p} columns)"
            )
        # Plain QR first (fast path); column-pivoted QR only when the
        # diagonal suggests deficiency, to name the collinear columns.
        Q, R = _qr(values, mode="economic")
        diag = np.abs(np.diag(R))
        tol = (diag.max() if diag.size and diag.max() > 0 else 1.0) * max(
            n, p
        ) * np.finfo(float).eps
        if np.any(diag <= tol):
            _, R_piv, piv = _qr(values, mode="economic", pivoting=True)
            diag_piv = np.abs(np.diag(R_piv))
            rank = int(np.sum(diag_piv > tol))
            dropped = [X.column_names[j] for j in piv[rank:]]
            raise RankDeficientError(
                f"design matrix is rank deficient (rank {rank} of {p}); "
                f"collinear columns: {dropped}",
                columns=dropped,
            )
        piv = np.arange(p)
        self.design = X
        self._Q = Q
        self._R = R
        self._piv = piv
        k = solve_triangular(R, np.eye(p))
        xtx_inv = np.empty((p, p))
        xtx_inv[np.ix_(piv, piv)] = k @ k.T
        self._xtx_inv = xtx_inv
        # Detect an intercept-like column so R^2 is centered when one exists.
        spans = np.ptp(values, axis=0)
        self._has_const = bool(np.any((spans == 0) & (values[0, :] != 0)))

    @property
    def xtx_inv(self) -> np.ndarray:
        return self._xtx_inv

    def batch_linear_combination(
        self, Y: np.ndarray, weights: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """w'beta and residual sum of squares for many outcome columns.

        ``Y`` is (n, m); returns two length-m arrays. Used by simulation
        loops where the design is fixed and only outcomes vary.
        """
        Y = np.asarray(Y, dtype=float)
        n, p = self.design.values.shape
        if Y.shape[0] != n:
            raise ValidationError(f"Y has {Y.shape[0]} rows, expected {n}")
        w = np.asarray(weights, dtype=float)
        if w.shape != (p,):
            raise ValidationError("weights must have one entry per design column")
        qty = self._Q.T @ Y
        betas = solve_triangular(self._R, qty)
        estimates = w[self._piv] @ betas
        rss = np.einsum("ij,ij->j", Y, Y) - np.einsum("ij,ij->j", qty, qty)
        return estimates, np.clip(rss, 0.0, None)

    def fit(
        self,
        y: np.ndarray,
        vcov_kind: str = "iid",
        cluster_ids: np.ndarray | None = None,
    ) -> FitResult:
        X = self.design
        values = X.values
        n, p = values.shape
        y = np.asarray(y, dtype=float)
        if y.shape != (n,):
            raise ValidationError(f"y has length {y.shape}, expected ({n},)")
        if vcov_kind not in VCOV_KINDS:
            raise ValidationError(f"vcov_kind must be one of {VCOV_KINDS}")

        beta = np.empty(p)
        beta[self._piv] = solve_triangular(self._R, self._Q.T @ y)
        resid = y - values @ beta
        rss = float(resid @ resid)
        df_resid = n - p
        sigma2 = rss / df_resid

        if self._has_const:
            tss = float(np.sum((y - y.mean()) ** 2))
        else:
            tss = float(y @ y)
        if tss <= 0.0:
            r_squared = 1.0 if rss <= 1e-300 else 0.0
        else:
            r_squared = float(np.clip(1.0 - rss / tss, 0.0, 1.0))

        if vcov_kind == "iid":
            vcov = sigma2 * self._xtx_inv
        elif vcov_kind == "hc1":
            scores = values * resid[:, None]
            meat = scores.T @ scores
            vcov = (n / df_resid) * self._xtx_inv @ meat @ self._xtx_inv
        else:  # cluster_cr1
            if cluster_ids is None:
                raise ValidationError("cluster_cr1 requires cluster_ids")
            cluster_ids = np.asarray(cluster_ids)
            if cluster_ids.shape != (n,):
                raise ValidationError("cluster_ids must have one entry per row")
            _, inverse = np.unique(cluster_ids, return_inverse=True)
            n_clusters = int(inverse.max()) + 1
            if n_clusters < 2:
                raise ValidationError("cluster_cr1 needs at least 2 distinct clusters")
            scores = values * resid[:, None]
            sums = np.zeros((n_clusters, p))
            np.add.at(sums, inverse, scores)
            meat = sums.T @ sums
            factor = (n_clusters / (n_clusters - 1)) * ((n - 1) / df_resid)
            vcov = factor * self._xtx_inv @ meat @ self._xtx_inv

        return FitResult(
            column_names=X.column_names,
            coefficients=beta,
            vcov=vcov,
            sigma2=sigma2,
            df_resid=df_resid,
            r_squared=r_squared,
            vcov_kind=vcov_kind,
            n_obs=n,
        )


def ols_fit(
    X: DesignMatrix,
    y: np.ndarray,
    vcov_kind: str = "iid",
    cluster_ids: np.ndarray | None = None,
) -> FitResult:
    """Ordinary least squares via pivoted QR.

    Raises :class:`RankDeficientError` (naming the collinear columns) rather
    than dropping anything, and :class:`ValidationError` on shape mismatches.
    """
    return OlsSolver(X).fit(y, vcov_kind=vcov_kind, cluster_ids=cluster_ids)


def partial_r2(
    X: DesignMatrix, target_col: str, conditioning_cols: Sequence[str]
) -> float:
    """R-squared from regressing one design column on a set of others.

    If the conditioning set contains a constant column the usual centered
    R-squared is returned, otherwise the uncentered version (sums of squares
    about zero). An empty conditioning set gives 0 by that convention.
    """
    t = X.column(target_col)
    conditioning = list(conditioning_cols)
    if target_col in conditioning:
        raise ValidationError("target column cannot be in the conditioning set")
    if np.ptp(t) == 0:
        raise ValidationError(f"target column {target_col!r} is constant")
    if not conditioning:
        return 0.0
    idx = [X.column_index(c) for c in conditioning]
    Z = X.values[:, idx]
    coef, *_ = np.linalg.lstsq(Z, t, rcond=None)
    rss = float(np.sum((t - Z @ coef) ** 2))
    has_const = bool(np.any((np.ptp(Z, axis=0) == 0) & (Z[0, :] != 0)))
    tss = float(np.sum((t - t.mean()) ** 2)) if has_const else float(t @ t)
    if tss <= 0.0:
        raise ValidationError(f"target column {target_col!r} has no variation")
    return float(np.clip(1.0 - rss / tss, 0.0, 1.0))
