"""Least-squares estimation of the Lee-Carter / Renshaw-Haberman family.

The RH objective ``sum (y - a - b k - c gamma)^2`` is minimized by cycling
through three blocks with the others held fixed:

* ``a``: row means of ``y - b k - c gamma``;
* ``(b, k)``: the constrained rank-1 fit of ``y - a - c gamma``;
* ``(c, gamma)``: a rank-1 fit of ``z = y - a - b k`` viewed on the
  age x year-of-birth grid, whose two corner triangles are unobserved.
  This is PCA with missing values and is solved by iterative SVD
  imputation (:func:`iterative_svd_missing`).  When ``c`` is pinned at
  ``1/p`` (H1, APC) it collapses to a per-cohort mean.

Each block update is an exact minimizer, so the objective never increases.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._kernels import EM_CONVERGED, EM_DEGENERATE, em_rank1, stalled
from .errors import DataError, DegenerateNormalizationError
from .linalg import DEFAULT_MAX_ITER, DEFAULT_TOL, rank1_ls_fit
from .models import ModelKind, ModelParams, apply_identifiability, cohort_index

__all__ = [
    "AgeCohortMatrix",
    "ConvergenceConfig",
    "FitReport",
    "CohortSolution",
    "rearrange_to_age_cohort",
    "iterative_svd_missing",
    "h1_gamma_update",
    "h1_gamma_update_hv",
    "fit_lc_ls",
    "fit_rh_ls",
    "fit_h1_ls",
    "fit_apc_ls",
    "fit_ls",
]

# slack allowed when guarding against an inner solve that fails to improve
_DESCENT_SLACK = 1e-12


@dataclass(frozen=True)
class ConvergenceConfig:
    """Stopping rules for the alternating scheme and its inner solver.

    ``tol`` bounds the relative change of the outer objective between
    iterations; ``inner_tol`` does the same for the observed-cell loss
    inside the iterative SVD.
    """

    tol: float = 1e-8
    max_outer: int = 20000
    inner_tol: float = 1e-10
    max_inner: int = 1000

    def __post_init__(self):
        for name in ("tol", "inner_tol"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("max_outer", "max_inner"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass
class FitReport:
    objective_trace: list = field(default_factory=list)
    iterations: int = 0
    wall_time_seconds: float = 0.0
    converged: bool = False

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def summary(self):
        return {
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "wall_time_seconds": float(self.wall_time_seconds),
            "objective": float(self.objective),
        }


def relative_change(previous, current):
    if previous == current:
        return 0.0
    return abs(previous - current) / max(abs(current), np.finfo(float).tiny)


# ---------------------------------------------------------------------------
# age-cohort layout

@dataclass(frozen=True, eq=False)
class AgeCohortMatrix:
    """``p x (n + p - 1)`` age by year-of-birth matrix with an observed mask.

    Column ``j`` is the cohort born in ``t_1 - x_p + j``.  Unobserved cells
    hold NaN.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.mask.shape or self.values.ndim != 2:
            raise ValueError("values and mask must be 2-D arrays of equal shape")

    @property
    def shape(self):
        return self.values.shape

    @property
    def counts(self):
        """Observed cells per cohort column."""
        return self.mask.sum(axis=0)

    @classmethod
    def band(cls, values_ap):
        return rearrange_to_age_cohort(values_ap)

    def observed(self):
        return np.where(self.mask, self.values, 0.0)

    def to_age_period(self):
        p, m = self.shape
        n = m - p + 1
        if n < 1 or self.mask.sum() != p * n:
            raise ValueError("matrix is not a full age-period band")
        return self.values[np.arange(p)[:, None], cohort_index(p, n)]

    def observed_loss(self, c, gamma):
        r = self.observed() - np.where(self.mask, np.outer(c, gamma), 0.0)
        return float(np.sum(r * r))


def rearrange_to_age_cohort(Z_ap, ages=None, years=None):
    """Lay a ``p x n`` age-period matrix out by age and year of birth."""
    Z_ap = np.asarray(Z_ap, dtype=float)
    if Z_ap.ndim != 2:
        raise ValueError("expected a 2-D age-period matrix")
    p, n = Z_ap.shape
    if ages is not None and len(ages) != p:
        raise ValueError(f"{len(ages)} ages for {p} rows")
    if years is not None and len(years) != n:
        raise ValueError(f"{len(years)} years for {n} columns")
    rows = np.repeat(np.arange(p)[:, None], n, axis=1)
    cols = cohort_index(p, n)
    values = np.full((p, n + p - 1), np.nan)
    mask = np.zeros((p, n + p - 1), dtype=bool)
    values[rows, cols] = Z_ap
    mask[rows, cols] = True
    return AgeCohortMatrix(values, mask)


# ---------------------------------------------------------------------------
# (c, gamma) updates

class CohortSolution(NamedTuple):
    c: np.ndarray
    gamma: np.ndarray
    report: FitReport
    completed: np.ndarray
    """Working matrix after the final imputation (missing cells = c gamma^T)."""


def iterative_svd_missing(Z, cfg=None, c0=None, gamma0=None):
    """Rank-1 fit ``c gamma^T`` of the observed cells of ``Z``, ``sum c = 1``.

    Missing cells are imputed, the completed matrix gets a constrained
    rank-1 fit, the missing cells are re-imputed from that fit, and so on
    until the relative change of the observed-cell loss drops below
    ``cfg.inner_tol``.  The first imputation uses row means of the observed
    values unless a warm start ``(c0, gamma0)`` is given, in which case it
    is ``c0 gamma0^T``.

    Every step minimizes the completed-data loss over the parameters and
    then over the imputed values, so the observed loss is non-increasing,
    and at a fixed point the imputed cells contribute nothing.

    Returns
    -------
    CohortSolution
        ``report.converged`` is False when ``max_inner`` ran out; the last
        (best) iterate is still returned.

    Raises
    ------
    DegenerateNormalizationError
        If the leading left singular vector sums to ~0.
    """
    cfg = cfg or ConvergenceConfig()
    mask = np.asarray(Z.mask, dtype=bool)
    if not (mask.any(axis=0).all() and mask.any(axis=1).all()):
        raise ValueError("every row and column needs at least one observed cell")
    obs = Z.observed()
    start = time.perf_counter()

    if c0 is not None:
        c0 = np.asarray(c0, dtype=float)
        gamma0 = np.asarray(gamma0, dtype=float)
        fill = np.outer(c0, gamma0)
        v0 = gamma0.copy()
    else:
        row_means = obs.sum(axis=1) / mask.sum(axis=1)
        fill = np.repeat(row_means[:, None], mask.shape[1], axis=1)
        v0 = np.empty(0)

    c, gamma, completed, trace, status = em_rank1(
        obs, mask, fill, v0, cfg.inner_tol, int(cfg.max_inner), DEFAULT_TOL, DEFAULT_MAX_ITER
    )
    if status == EM_DEGENERATE:
        raise DegenerateNormalizationError(
            "leading singular vector of the completed age-cohort matrix sums to ~0"
        )
    report = FitReport(
        [float(x) for x in trace],
        len(trace),
        time.perf_counter() - start,
        status == EM_CONVERGED,
    )
    return CohortSolution(c, gamma, report, completed)


def h1_gamma_update(Z):
    """Per-cohort least-squares gamma when ``c = 1/p``: ``(p / n_s) * sum z``."""
    p = Z.shape[0]
    counts = Z.counts
    if np.any(counts == 0):
        raise ValueError("every cohort column needs at least one observed cell")
    return p * Z.observed().sum(axis=0) / counts


def h1_gamma_update_hv(Z):
    """Per-cohort gamma with ``c = 1/p`` subject to ``sum (s - s_bar) gamma_s = 0``.

    Solved exactly with a Lagrange multiplier ``lam`` (the Lagrangian carries
    ``2 lam`` on the constraint)::

        gamma_s = (p / n_s) (sum_x z_xs - p lam (s - s_bar))
        lam = (1/p) * sum_s (s - s_bar) S_s / n_s / sum_s (s - s_bar)^2 / n_s

    with ``S_s`` the observed column sums.

    Returns
    -------
    gamma : ndarray
    lam : float
    """
    p, m = Z.shape
    counts = Z.counts.astype(float)
    if np.any(counts == 0):
        raise ValueError("every cohort column needs at least one observed cell")
    s = np.arange(m, dtype=float)
    s -= s.mean()
    denom = float(np.sum(s * s / counts))
    if denom == 0.0:
        raise ValueError("the trend constraint needs at least two cohorts")
    sums = Z.observed().sum(axis=0)
    lam = float(np.sum(s * sums / counts)) / (p * denom)
    gamma = (p / counts) * (sums - p * lam * s)
    return gamma, lam


# ---------------------------------------------------------------------------
# fits

def _check_grid(Y, ages, years):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise ValueError("expected a p x n matrix of log rates")
    if not np.all(np.isfinite(Y)):
        raise DataError("log-rate matrix has non-finite entries")
    p, n = Y.shape
    if p < 2 or n < 2:
        raise DataError(f"need at least 2 ages and 2 years, got {p} x {n}")
    ages = np.arange(p) if ages is None else np.asarray(ages)
    years = np.arange(n) if years is None else np.asarray(years)
    if len(ages) != p or len(years) != n:
        raise ValueError("ages/years do not match the data shape")
    return Y, ages, years


def fit_lc_ls(Y, ages=None, years=None):
    """Closed-form Lee-Carter least squares: row means plus the rank-1 fit
    of the row-centred matrix."""
    start = time.perf_counter()
    Y, ages, years = _check_grid(Y, ages, years)
    a = Y.mean(axis=1)
    b, k = rank1_ls_fit(Y - a[:, None])
    params = apply_identifiability(ModelParams(ModelKind.LC, ages, years, a=a, b=b, k=k))
    r = Y - a[:, None] - np.outer(params.b, params.k)
    report = FitReport([float(np.sum(r * r))], 1, time.perf_counter() - start, True)
    return params, report


def _fit_alternating(Y, kind, cfg, hv, ages, years):
    start = time.perf_counter()
    cfg = cfg or ConvergenceConfig()
    Y, ages, years = _check_grid(Y, ages, years)
    p, n = Y.shape
    idx = cohort_index(p, n)

    init = ModelParams.initial(kind, ages, years, Y)
    a, b, k = np.array(init.a), np.array(init.b), np.array(init.k)
    c, gamma = np.array(init.c), np.array(init.gamma)

    def objective():
        r = Y - a[:, None] - np.outer(b, k) - c[:, None] * gamma[idx]
        return float(np.sum(r * r))

    scale = float(np.sum(Y * Y))
    previous = objective()
    report = FitReport()
    cold_inner = True
    for it in range(1, cfg.max_outer + 1):
        cohort = c[:, None] * gamma[idx]

        a = (Y - np.outer(b, k) - cohort).mean(axis=1)

        R = Y - a[:, None] - cohort
        if kind is ModelKind.APC:
            k = p * R.mean(axis=0)
            kbar = k.mean()
            k -= kbar
            a += kbar / p
        else:
            b, k = rank1_ls_fit(R, b0=b)

        Zac = rearrange_to_age_cohort(Y - a[:, None] - np.outer(b, k))
        if kind is ModelKind.RH:
            before = Zac.observed_loss(c, gamma)
            sol = iterative_svd_missing(
                Zac, cfg, c0=None if cold_inner else c, gamma0=None if cold_inner else gamma
            )
            cold_inner = False
            if sol.report.objective <= before + _DESCENT_SLACK * max(before, 1.0):
                c, gamma = sol.c, sol.gamma
        elif hv:
            gamma, _ = h1_gamma_update_hv(Zac)
        else:
            gamma = h1_gamma_update(Zac)

        gbar = gamma.mean()
        gamma = gamma - gbar
        a = a + c * gbar

        current = objective()
        report.objective_trace.append(current)
        report.iterations = it
        if stalled(previous, current, cfg.tol, scale):
            report.converged = True
            break
        previous = current

    params = ModelParams(kind, ages, years, a=a, b=b, k=k, c=c, gamma=gamma, hv_constrained=hv)
    params = apply_identifiability(params)
    report.wall_time_seconds = time.perf_counter() - start
    return params, report


def fit_rh_ls(Y, cfg=None, ages=None, years=None):
    """Renshaw-Haberman least squares by alternating minimization.

    Returns ``(params, report)``; the trace holds the sum of squared
    log-rate residuals after each outer iteration.
    """
    return _fit_alternating(Y, ModelKind.RH, cfg, False, ages, years)


def fit_h1_ls(Y, cfg=None, hv=False, ages=None, years=None):
    """H1 least squares (``c = 1/p``); ``hv`` adds the cohort-trend constraint."""
    return _fit_alternating(Y, ModelKind.H1, cfg, bool(hv), ages, years)


def fit_apc_ls(Y, cfg=None, hv=False, ages=None, years=None):
    """APC least squares (``b = c = 1/p``).

    The period step is the per-year closed form ``k_t = p * mean_x(r)``.
    APC is only identified up to a linear trend shared by k, gamma and a;
    the returned bundle always has the trend removed from gamma, so ``hv``
    changes the iteration path but not the identified answer.
    """
    return _fit_alternating(Y, ModelKind.APC, cfg, bool(hv), ages, years)


def fit_ls(Y, kind, cfg=None, hv=False, ages=None, years=None):
    """Dispatch on model kind."""
    kind = ModelKind.parse(kind)
    if kind is ModelKind.LC:
        if hv:
            raise ValueError("LC has no cohort term to constrain")
        return fit_lc_ls(Y, ages, years)
    if kind is ModelKind.RH:
        if hv:
            raise ValueError("the trend-constrained least-squares update is defined for H1 and APC")
        return fit_rh_ls(Y, cfg, ages, years)
    if kind is ModelKind.H1:
        return fit_h1_ls(Y, cfg, hv, ages, years)
    return fit_apc_ls(Y, cfg, hv, ages, years)
