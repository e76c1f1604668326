"""Method comparisons and tolerance sweeps under one convergence rule.

A method is labelled ``KIND-ESTIMATOR[-HV]``, e.g. ``RH-LS``, ``H1-LS-HV``
or ``RH-MLE-HV``.  Every method starts from the same initial bundle and is
timed with a monotonic clock around the fit call only.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError
from .ls import ConvergenceConfig, fit_ls
from .mle import MleConfig, fit_poisson_mle
from .models import ModelKind, apply_identifiability, format_float, l2_error, poisson_loglik

__all__ = [
    "Method",
    "ComparisonRow",
    "SweepRow",
    "run_comparison",
    "tolerance_sweep",
    "comparison_to_csv",
    "sweep_to_csv",
    "COMPARISON_HEADER",
    "SWEEP_HEADER",
]

COMPARISON_HEADER = "method,l2_error,loglik,wall_time_seconds,iterations,converged"
SWEEP_HEADER = "tol,l2_error,loglik,wall_time_seconds,max_param_delta"


@dataclass(frozen=True)
class Method:
    kind: ModelKind
    estimator: str  # "LS" or "MLE"
    hv: bool = False

    @classmethod
    def parse(cls, label):
        if isinstance(label, cls):
            return label
        parts = str(label).strip().upper().split("-")
        hv = len(parts) == 3 and parts[2] == "HV"
        if len(parts) not in (2, 3) or (len(parts) == 3 and not hv) or parts[1] not in ("LS", "MLE"):
            raise ValueError(f"unknown method {label!r}; expected e.g. RH-LS, H1-LS-HV, RH-MLE")
        method = cls(ModelKind.parse(parts[0]), parts[1], hv)
        if hv and method.kind is ModelKind.LC:
            raise CapabilityError(f"{method.label}: LC has no cohort index to constrain")
        if hv and method.kind is ModelKind.RH and method.estimator == "LS":
            raise CapabilityError(
                f"{method.label}: the trend-constrained least-squares update exists for H1 and APC only"
            )
        return method

    @property
    def label(self):
        return f"{self.kind.value}-{self.estimator}" + ("-HV" if self.hv else "")

    def check(self, surface):
        if self.estimator == "MLE" and surface.rate_only:
            raise CapabilityError(
                f"{self.label} needs deaths and exposures; the surface has rates only"
            )

    def fit(self, surface, tol):
        if self.estimator == "LS":
            return fit_ls(
                surface.log_rates, self.kind, ConvergenceConfig(tol=tol), self.hv,
                surface.ages, surface.years,
            )
        return fit_poisson_mle(surface, self.kind, MleConfig(tol=tol, hv=self.hv))


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    l2_error: float
    loglik: float
    wall_time_seconds: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SweepRow:
    tol: float
    l2_error: float
    loglik: float
    wall_time_seconds: float
    max_param_delta: float
    converged: bool = True  # not part of the CSV


def _loglik(surface, params):
    if surface.rate_only:
        return math.nan
    return poisson_loglik(surface, params, include_constant=True)


def _timed_fit(method, surface, tol):
    start = time.perf_counter()
    params, report = method.fit(surface, tol)
    return params, report, time.perf_counter() - start


def run_comparison(surface, methods, tol=1e-8, warmup=True):
    """Fit every method at the same tolerance; rows come back in request order.

    With ``warmup`` each method is fitted once untimed before the measured
    fit.  All methods are checked for applicability before anything runs.
    """
    parsed = [Method.parse(m) for m in methods]
    for method in parsed:
        method.check(surface)
    rows = []
    for method in parsed:
        if warmup:
            method.fit(surface, tol)
        params, report, elapsed = _timed_fit(method, surface, tol)
        rows.append(ComparisonRow(
            method.label,
            l2_error(surface.log_rates, params),
            _loglik(surface, params),
            elapsed,
            int(report.iterations),
            bool(report.converged),
        ))
    return rows


def tolerance_sweep(surface, method, tols, warmup=True):
    """One fit per tolerance; ``max_param_delta`` is measured against the
    fit at the last (tightest) tolerance.

    ``tols`` must be non-increasing.  Repeated values are allowed and give
    identical rows apart from timing.
    """
    method = Method.parse(method)
    method.check(surface)
    tols = [float(t) for t in tols]
    if not tols:
        raise ValueError("need at least one tolerance")
    if any(b > a for a, b in zip(tols, tols[1:])):
        raise ValueError("tolerances must be listed from loosest to tightest")
    if warmup:
        method.fit(surface, tols[0])
    fits = [_timed_fit(method, surface, tol) for tol in tols]
    reference = apply_identifiability(fits[-1][0]).vector()
    rows = []
    for tol, (params, report, elapsed) in zip(tols, fits):
        delta = float(np.max(np.abs(apply_identifiability(params).vector() - reference)))
        rows.append(SweepRow(
            tol, l2_error(surface.log_rates, params), _loglik(surface, params), elapsed, delta,
            bool(report.converged),
        ))
    return rows


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return format_float(value)


def comparison_to_csv(rows):
    lines = [COMPARISON_HEADER]
    for r in rows:
        lines.append(",".join(_cell(v) for v in (
            r.method, r.l2_error, r.loglik, r.wall_time_seconds, r.iterations, r.converged,
        )))
    return "\n".join(lines) + "\n"


def sweep_to_csv(rows):
    lines = [SWEEP_HEADER]
    for r in rows:
        lines.append(",".join(_cell(v) for v in (
            r.tol, r.l2_error, r.loglik, r.wall_time_seconds, r.max_param_delta,
        )))
    return "\n".join(lines) + "\n"
