"""Model family, parameter bundles and the two objective functions.

Every model in the family is a special case of

    log m(x, t) = a_x + b_x k_t + c_x gamma_{t-x}

LC drops the cohort term, RH leaves everything free, H1 pins ``c = 1/p``
and APC additionally pins ``b = 1/p``.

Cohort indices run over years of birth ``s = t - x`` from ``t_1 - x_p`` to
``t_n - x_1``; cell ``(i, j)`` of a ``p x n`` age-year grid reads
``gamma[j - i + p - 1]``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import CapabilityError, DegenerateNormalizationError

__all__ = [
    "ModelKind",
    "ModelParams",
    "cohort_index",
    "cohort_years",
    "fitted_log_rates",
    "l2_error",
    "poisson_loglik",
    "apply_identifiability",
    "remove_apc_trend",
    "hv_statistic",
    "params_to_json",
    "params_from_json",
    "params_to_csv",
    "format_float",
]

_DEGENERATE_SUM = 1e-10


class ModelKind(str, enum.Enum):
    LC = "LC"
    RH = "RH"
    H1 = "H1"
    APC = "APC"

    @classmethod
    def parse(cls, label):
        if isinstance(label, cls):
            return label
        try:
            return cls(str(label).upper())
        except ValueError:
            raise ValueError(
                f"unknown model kind {label!r}; expected one of LC, RH, H1, APC"
            ) from None

    @property
    def has_cohort(self):
        return self is not ModelKind.LC

    @property
    def fixed_c(self):
        return self in (ModelKind.H1, ModelKind.APC)

    @property
    def fixed_b(self):
        return self is ModelKind.APC


def cohort_index(p, n):
    """``p x n`` integer matrix mapping grid cells to positions in gamma."""
    return np.arange(n)[None, :] - np.arange(p)[:, None] + (p - 1)


def cohort_years(ages, years):
    """Years of birth covered by the grid, oldest cohort first."""
    return np.arange(years[0] - ages[-1], years[-1] - ages[0] + 1)


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameter bundle for one fitted (or generating) model.

    Arrays are stored read-only.  ``c`` and ``gamma`` are empty for LC.
    """

    kind: ModelKind
    ages: np.ndarray
    years: np.ndarray
    a: np.ndarray
    b: np.ndarray
    k: np.ndarray
    c: np.ndarray = field(default_factory=lambda: np.empty(0))
    gamma: np.ndarray = field(default_factory=lambda: np.empty(0))
    hv_constrained: bool = False

    def __post_init__(self):
        kind = ModelKind.parse(self.kind)
        object.__setattr__(self, "kind", kind)
        ages = np.array(self.ages, dtype=int)
        years = np.array(self.years, dtype=int)
        ages.setflags(write=False)
        years.setflags(write=False)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "years", years)
        for name in ("a", "b", "k", "c", "gamma"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

        p, n = len(ages), len(years)
        if p < 1 or n < 1:
            raise ValueError("ages and years must be non-empty")
        if np.any(np.diff(ages) != 1) or np.any(np.diff(years) != 1):
            raise ValueError("ages and years must be consecutive increasing integers")
        expected = {"a": p, "b": p, "k": n}
        if kind.has_cohort:
            expected.update(c=p, gamma=n + p - 1)
        else:
            expected.update(c=0, gamma=0)
        for name, size in expected.items():
            got = getattr(self, name).shape
            if got != (size,):
                raise ValueError(
                    f"{kind.value} parameter {name} has shape {got}, expected ({size},)"
                )
        if self.hv_constrained and not kind.has_cohort:
            raise ValueError("the cohort-trend constraint needs a cohort term")

    @property
    def p(self):
        return len(self.ages)

    @property
    def n(self):
        return len(self.years)

    @property
    def cohorts(self):
        return cohort_years(self.ages, self.years)

    def vector(self):
        """All parameters concatenated as ``(a, b, k, c, gamma)``."""
        return np.concatenate([self.a, self.b, self.k, self.c, self.gamma])

    def with_values(self, **changes):
        return replace(self, **changes)

    @classmethod
    def initial(cls, kind, ages, years, Y):
        """Constraint-satisfying starting point shared by every estimator.

        ``a`` = row means of ``Y``, ``b = c = 1/p``, ``k = gamma = 0``.
        """
        kind = ModelKind.parse(kind)
        p, n = len(ages), len(years)
        a = np.asarray(Y, dtype=float).mean(axis=1)
        kw = dict(a=a, b=np.full(p, 1.0 / p), k=np.zeros(n))
        if kind.has_cohort:
            kw.update(c=np.full(p, 1.0 / p), gamma=np.zeros(n + p - 1))
        return cls(kind, ages, years, **kw)


def _eta(a, b, k, c, gamma):
    eta = a[:, None] + np.outer(b, k)
    if c.size:
        p, n = len(a), len(k)
        eta = eta + c[:, None] * gamma[cohort_index(p, n)]
    return eta


def fitted_log_rates(params, ages=None, years=None):
    """``p x n`` matrix of ``a_x + b_x k_t + c_x gamma_{t-x}``."""
    if ages is not None and not np.array_equal(np.asarray(ages), params.ages):
        raise ValueError("ages do not match the parameter bundle")
    if years is not None and not np.array_equal(np.asarray(years), params.years):
        raise ValueError("years do not match the parameter bundle")
    return _eta(params.a, params.b, params.k, params.c, params.gamma)


def l2_error(Y, params):
    """Sum of squared log-rate residuals over every cell."""
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (params.p, params.n):
        raise ValueError(f"data shape {Y.shape} does not match ({params.p}, {params.n})")
    r = Y - fitted_log_rates(params)
    return float(np.sum(r * r))


def poisson_loglik(surface, params, include_constant=True):
    """Poisson log-likelihood of death counts given fitted log rates.

    Without the constant this is ``sum(D * eta - N * exp(eta))``; with it the
    value is the full log-likelihood, adding ``sum(D log N - log D!)``.
    """
    if getattr(surface, "rate_only", False):
        raise CapabilityError(
            "surface holds rates only; Poisson likelihood needs deaths and exposures"
        )
    D, N = surface.deaths, surface.exposures
    if D.shape != (params.p, params.n):
        raise ValueError(f"surface shape {D.shape} does not match ({params.p}, {params.n})")
    eta = fitted_log_rates(params)
    ll = float(np.sum(D * eta - N * np.exp(eta)))
    if include_constant:
        ll += float(np.sum(D * np.log(N) - gammaln(D + 1.0)))
    return ll


def _centered_cohorts(m):
    s = np.arange(m, dtype=float)
    return s - s.mean()


def hv_statistic(params):
    """``sum_s (s - s_bar) gamma_s``; zero when the cohort index is trendless."""
    if not params.kind.has_cohort:
        return 0.0
    return float(_centered_cohorts(params.gamma.size) @ params.gamma)


def remove_apc_trend(params):
    """Move any linear trend in gamma into k and a (exact for APC).

    Adding ``g (s - s_bar)`` to gamma, ``-g (t - t_bar)`` to k and
    ``(g/p)(x - x_bar)`` to a leaves every APC fitted rate unchanged, so APC
    parameters are only unique once that trend is fixed.
    """
    if params.kind is not ModelKind.APC:
        raise ValueError("the exact trend transformation applies to APC only")
    sc = _centered_cohorts(params.gamma.size)
    g = -float(sc @ params.gamma) / float(sc @ sc)
    if g == 0.0:
        return params
    p = params.p
    xc = np.arange(p) - (p - 1) / 2.0
    tc = np.arange(params.n) - (params.n - 1) / 2.0
    return params.with_values(
        a=params.a + (g / p) * xc,
        k=params.k - g * tc,
        gamma=params.gamma + g * sc,
    )


def apply_identifiability(params):
    """Equivalent bundle with ``sum b = 1``, ``sum k = 0`` (and ``sum c = 1``,
    ``sum gamma = 0`` when there is a cohort term).

    Means of k and gamma move into a; scale moves between b and k, and
    between c and gamma.  Pinned loadings (b for APC, c for H1/APC) are left
    bit-for-bit untouched.  APC bundles also have their gamma trend removed
    (see :func:`remove_apc_trend`); without it APC is not identified.
    """
    kind = params.kind
    a = np.array(params.a)
    b = np.array(params.b)
    k = np.array(params.k)
    c = np.array(params.c)
    gamma = np.array(params.gamma)

    kbar = k.mean()
    a += b * kbar
    k -= kbar
    if not kind.fixed_b:
        sb = b.sum()
        if abs(sb) < _DEGENERATE_SUM:
            raise DegenerateNormalizationError(f"sum(b) = {sb:.3e}")
        if sb != 1.0:
            b /= sb
            k *= sb

    if kind.has_cohort:
        gbar = gamma.mean()
        a += c * gbar
        gamma -= gbar
        if not kind.fixed_c:
            sc = c.sum()
            if abs(sc) < _DEGENERATE_SUM:
                raise DegenerateNormalizationError(f"sum(c) = {sc:.3e}")
            if sc != 1.0:
                c /= sc
                gamma *= sc

    out = params.with_values(a=a, b=b, k=k, c=c, gamma=gamma)
    if kind is ModelKind.APC:
        out = remove_apc_trend(out)
    return out


# ---------------------------------------------------------------------------
# serialization

def format_float(x):
    """17 significant digits; round-trips every finite double."""
    return f"{float(x):.17g}"


def _float_list(arr):
    return "[" + ", ".join(format_float(v) for v in arr) + "]"


def params_to_json(params, extra=None):
    """JSON text for a bundle.  ``extra`` is a dict of additional top-level
    keys (already JSON-serializable), written after the parameters."""
    parts = [
        f'"kind": {json.dumps(params.kind.value)}',
        '"ages": [' + ", ".join(str(int(x)) for x in params.ages) + "]",
        '"years": [' + ", ".join(str(int(t)) for t in params.years) + "]",
        f'"a": {_float_list(params.a)}',
        f'"b": {_float_list(params.b)}',
        f'"k": {_float_list(params.k)}',
        f'"c": {_float_list(params.c)}',
        f'"gamma": {_float_list(params.gamma)}',
        f'"hv_constrained": {json.dumps(bool(params.hv_constrained))}',
    ]
    for key, value in (extra or {}).items():
        parts.append(f"{json.dumps(key)}: {_dump_extra(value)}")
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def _dump_extra(value):
    if isinstance(value, float):
        return format_float(value) if math.isfinite(value) else "null"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_dump_extra(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_dump_extra(v) for v in value) + "]"
    return json.dumps(value)


def params_from_json(text):
    """Inverse of :func:`params_to_json`; unknown keys are ignored."""
    d = json.loads(text) if isinstance(text, str) else text
    try:
        return ModelParams(
            kind=d["kind"],
            ages=d["ages"],
            years=d["years"],
            a=d["a"],
            b=d["b"],
            k=d["k"],
            c=d.get("c", []),
            gamma=d.get("gamma", []),
            hv_constrained=bool(d.get("hv_constrained", False)),
        )
    except KeyError as exc:
        raise ValueError(f"parameter bundle is missing key {exc.args[0]!r}") from None


def params_to_csv(params):
    """Long-format ``series,index,value`` rows for plotting.

    The index is the age for a, b and c, the calendar year for k and the
    year of birth for gamma.
    """
    lines = ["series,index,value"]
    for name, index in (
        ("a", params.ages),
        ("b", params.ages),
        ("k", params.years),
        ("c", params.ages if params.kind.has_cohort else ()),
        ("gamma", params.cohorts if params.kind.has_cohort else ()),
    ):
        values = getattr(params, name)
        for i, v in zip(index, values):
            lines.append(f"{name},{int(i)},{format_float(v)}")
    return "\n".join(lines) + "\n"
