"""Poisson maximum-likelihood baselines fitted by one-dimensional Newton steps.

Each sweep visits the parameter blocks ``a -> k -> b -> gamma -> c`` (blocks
that a model kind pins or lacks are skipped) and moves every parameter in
the block by one Newton step on the log-likelihood::

    theta += sum (D - N exp(eta)) w / sum N exp(eta) w^2

where ``w`` is the multiplier of ``theta`` in ``eta`` and the sums run over
the cells ``theta`` touches.  Parameters within a block touch disjoint
cells, so each step is safeguarded by halving until that parameter's own
likelihood contribution does not fall.  After the sweep the bundle is
renormalized (an exact invariance), and for the trend-constrained variant the
approximately invariant cohort-trend transformation is applied.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, DataError, NumericalError
from .ls import FitReport, relative_change
from .models import (
    ModelKind,
    ModelParams,
    apply_identifiability,
    cohort_index,
    poisson_loglik,
    remove_apc_trend,
)

__all__ = [
    "MleConfig",
    "fit_poisson_mle",
    "fit_poisson_mle_hv",
    "hv_project",
    "newton_numerators",
]

_ETA_CLAMP = 50.0
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class MleConfig:
    """``tol`` bounds the relative change of the log-likelihood per sweep."""

    tol: float = 1e-8
    max_outer: int = 200000
    hv: bool = False

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if int(self.max_outer) < 1:
            raise ValueError("max_outer must be a positive integer")


class _State:
    """Mutable working copy of a bundle plus the matching linear predictor."""

    def __init__(self, params, D, N):
        self.kind = params.kind
        self.p, self.n = params.p, params.n
        self.idx = cohort_index(self.p, self.n)
        self.a = np.array(params.a)
        self.b = np.array(params.b)
        self.k = np.array(params.k)
        self.c = np.array(params.c)
        self.gamma = np.array(params.gamma)
        self.D, self.N = D, N
        self.m = self.p + self.n - 1
        self.refresh()

    def refresh(self):
        eta = self.a[:, None] + np.outer(self.b, self.k)
        if self.kind.has_cohort:
            eta += self.c[:, None] * self.gamma[self.idx]
        self.eta = eta

    def to_params(self, template, hv):
        return ModelParams(
            self.kind, template.ages, template.years,
            a=self.a, b=self.b, k=self.k, c=self.c, gamma=self.gamma,
            hv_constrained=hv,
        )

    def loglik(self):
        return float(np.sum(self.D * self.eta - self.N * _exp(self.eta)))

    # -- per-block plumbing -------------------------------------------------
    # Each block is described by: the parameter vector, the multiplier w of
    # every parameter in every cell (p x n), and a reducer that sums a p x n
    # array onto that block's parameters.

    def _row(self, arr):
        return arr.sum(axis=1)

    def _col(self, arr):
        return arr.sum(axis=0)

    def _diag(self, arr):
        return np.bincount(self.idx.ravel(), weights=arr.ravel(), minlength=self.m)

    def blocks(self):
        kind = self.kind
        out = [("a", self._row, lambda: np.ones((self.p, self.n)))]
        out.append(("k", self._col, lambda: np.broadcast_to(self.b[:, None], (self.p, self.n))))
        if not kind.fixed_b:
            out.append(("b", self._row, lambda: np.broadcast_to(self.k[None, :], (self.p, self.n))))
        if kind.has_cohort:
            out.append(("gamma", self._diag, lambda: np.broadcast_to(self.c[:, None], (self.p, self.n))))
            if not kind.fixed_c:
                out.append(("c", self._row, lambda: self.gamma[self.idx]))
        return out

    def expand(self, name, delta):
        if name in ("a", "b", "c"):
            return delta[:, None]
        if name == "k":
            return delta[None, :]
        return delta[self.idx]

    def newton_block(self, name, reduce, weights):
        w = weights()
        mu = self.N * _exp(self.eta)
        num = reduce((self.D - mu) * w)
        den = reduce(mu * w * w)
        step = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        if not np.any(step):
            return
        base = reduce(self.D * self.eta - mu)
        theta = getattr(self, name)
        for _ in range(_MAX_HALVINGS):
            eta_new = self.eta + self.expand(name, step) * w
            gain = reduce(self.D * eta_new - self.N * _exp(eta_new)) - base
            bad = gain < 0
            if not np.any(bad):
                break
            step = np.where(bad, 0.5 * step, step)
        else:
            step = np.where(bad, 0.0, step)
            eta_new = self.eta + self.expand(name, step) * w
        theta += step
        self.eta = eta_new
        if not np.all(np.isfinite(theta)):
            i = int(np.argmax(~np.isfinite(theta)))
            raise NumericalError(f"non-finite Newton update for {name}[{i}]")

    def sweep(self):
        for name, reduce, weights in self.blocks():
            self.newton_block(name, reduce, weights)

    def numerators(self):
        mu = self.N * _exp(self.eta)
        return {
            name: reduce((self.D - mu) * weights())
            for name, reduce, weights in self.blocks()
        }


def _exp(eta):
    return np.exp(np.clip(eta, -_ETA_CLAMP, _ETA_CLAMP))


def newton_numerators(surface, params):
    """Score of each parameter block (``sum (D - N e^eta) w``), keyed by name.

    All entries vanish at an unconstrained maximum of the likelihood.
    """
    return _State(params, surface.deaths, surface.exposures).numerators()


def hv_project(params, kind=None):
    """Shift the linear trend out of gamma so that ``sum (s - s_bar) gamma_s = 0``.

    For H1 the transformation is::

        a_x   -> a_x + (g/p)(x - x_bar)
        b_x   -> (K b_x - g/p) / (K - g)
        k_t   -> (K - g) / K * k_t
        gamma -> gamma_s + g (s - s_bar)

    with ``K`` the least-squares slope of k on ``t - t_bar`` and
    ``g = -sum (s - s_bar) gamma_s / sum (s - s_bar)^2``.  It leaves fitted
    rates unchanged only when k is exactly linear.  RH uses the same form
    with ``1/p`` replaced by ``c_x``.  APC has an exact trend invariance and
    uses it instead (see :func:`mortfit.models.remove_apc_trend`).
    """
    kind = ModelKind.parse(kind or params.kind)
    if kind is not params.kind:
        raise ValueError(f"bundle is {params.kind.value}, not {kind.value}")
    if not kind.has_cohort:
        raise ValueError("LC has no cohort index to constrain")
    if kind is ModelKind.APC:
        return remove_apc_trend(params).with_values(hv_constrained=True)

    m = params.gamma.size
    s = np.arange(m, dtype=float)
    s -= s.mean()
    g = -float(s @ params.gamma) / float(s @ s)
    if g == 0.0:
        return params.with_values(hv_constrained=True)

    n = params.n
    tc = np.arange(n, dtype=float)
    tc -= tc.mean()
    K = float(tc @ params.k) / float(tc @ tc)
    if abs(K) < 1e-12 or abs(K - g) < 1e-12:
        raise NumericalError(f"degenerate trend transformation (K = {K:.3e}, g = {g:.3e})")

    p = params.p
    xc = np.arange(p, dtype=float)
    xc -= xc.mean()
    c = params.c
    return params.with_values(
        a=params.a + g * c * xc,
        b=(K * params.b - g * c) / (K - g),
        k=(K - g) / K * params.k,
        gamma=params.gamma + g * s,
        hv_constrained=True,
    )


def _fit(surface, kind, cfg, hv):
    start = time.perf_counter()
    kind = ModelKind.parse(kind)
    cfg = cfg or MleConfig(hv=hv)
    if surface.rate_only:
        raise CapabilityError(
            "Poisson maximum likelihood needs deaths and exposures; "
            "the surface was built from rates only"
        )
    if surface.p < 2 or surface.n < 2:
        raise DataError(f"need at least 2 ages and 2 years, got {surface.p} x {surface.n}")
    if hv and not kind.has_cohort:
        raise ValueError("LC has no cohort index to constrain")

    init = ModelParams.initial(kind, surface.ages, surface.years, surface.log_rates)
    if hv:
        init = init.with_values(hv_constrained=True)
    # the full likelihood (constant included) is what the relative-change
    # test is applied to; the constant-free part has an arbitrary magnitude
    constant = poisson_loglik(surface, init, include_constant=True) - poisson_loglik(
        surface, init, include_constant=False
    )
    state = _State(init, surface.deaths, surface.exposures)
    previous = state.loglik() + constant
    report = FitReport()
    params = init
    for it in range(1, cfg.max_outer + 1):
        state.sweep()
        params = apply_identifiability(state.to_params(init, hv))
        if hv:
            params = hv_project(params, kind)
        state = _State(params, surface.deaths, surface.exposures)
        current = state.loglik() + constant
        report.objective_trace.append(current)
        report.iterations = it
        if relative_change(previous, current) < cfg.tol:
            report.converged = True
            break
        previous = current

    if np.any(np.abs(state.eta) > _ETA_CLAMP):
        raise NumericalError("linear predictor left [-50, 50]; the fit diverged")
    report.wall_time_seconds = time.perf_counter() - start
    return params, report


def fit_poisson_mle(surface, kind, cfg=None):
    """Poisson MLE for any model kind.

    ``report.objective_trace`` records the full Poisson log-likelihood
    after each sweep and is non-decreasing.  Use
    :func:`fit_poisson_mle_hv` (or ``cfg.hv``) for the trend-constrained
    variant.
    """
    cfg = cfg or MleConfig()
    if cfg.hv:
        return fit_poisson_mle_hv(surface, kind, cfg)
    return _fit(surface, kind, cfg, hv=False)


def fit_poisson_mle_hv(surface, kind, cfg=None):
    """Poisson MLE with the cohort-trend constraint re-imposed after each sweep.

    The transformation is only approximately likelihood-preserving, so the
    trace may dip; convergence is judged on relative change alone.
    """
    return _fit(surface, kind, cfg or MleConfig(hv=True), hv=True)
