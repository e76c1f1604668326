"""Mortality surfaces: HMD ingestion, synthetic generation and CSV I/O."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .models import (
    ModelKind,
    ModelParams,
    apply_identifiability,
    cohort_years,
    fitted_log_rates,
    format_float,
)

__all__ = [
    "HmdTable",
    "MortalitySurface",
    "parse_hmd_table",
    "read_hmd_table",
    "build_surface",
    "build_rate_surface",
    "synthesize_surface",
    "default_generator",
    "random_generator",
    "surface_to_csv",
    "surface_from_csv",
]

HMD_COLUMNS = ("Female", "Male", "Total")


@dataclass(frozen=True, eq=False)
class HmdTable:
    """Dense age x year table parsed from an HMD 1x1 file.

    ``values[i, j]`` belongs to ``(ages[i], years[j])``; missing cells
    (``"."`` in the source, or combinations absent from it) are NaN.
    """

    ages: np.ndarray
    years: np.ndarray
    values: np.ndarray

    def missing(self):
        return np.isnan(self.values)

    def get(self, age, year):
        i = int(age) - int(self.ages[0])
        j = int(year) - int(self.years[0])
        if not (0 <= i < len(self.ages) and 0 <= j < len(self.years)):
            raise KeyError((age, year))
        return self.values[i, j]


def _parse_age(token):
    return int(token[:-1]) if token.endswith("+") else int(token)


def parse_hmd_table(text, value_column="Total"):
    """Parse the HMD 1x1 text layout (``Year Age Female Male Total``).

    Lines before the ``Year Age ...`` header are skipped.  The open age
    group ``110+`` is keyed as 110 and ``"."`` marks a missing value.

    Raises
    ------
    ParseError
        Wrong column count or an unparseable field (message carries the line).
    DataError
        The same (age, year) appears twice.
    """
    label = str(value_column).capitalize()
    if label not in HMD_COLUMNS:
        raise ValueError(f"value_column must be one of {HMD_COLUMNS}, got {value_column!r}")
    col = 2 + HMD_COLUMNS.index(label)

    if not isinstance(text, str):
        text = text.read()

    cells = {}
    seen_header = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if not seen_header:
            if tokens[:2] == ["Year", "Age"]:
                if tokens[2:] != list(HMD_COLUMNS):
                    raise ParseError(f"unexpected header columns {tokens}", lineno)
                seen_header = True
            continue
        if len(tokens) != 5:
            raise ParseError(f"expected 5 columns, found {len(tokens)}", lineno)
        try:
            year = int(tokens[0])
            age = _parse_age(tokens[1])
            raw = tokens[col]
            value = math.nan if raw == "." else float(raw)
        except ValueError:
            raise ParseError(f"cannot parse row {line.strip()!r}", lineno) from None
        # validate the other value columns too, so corrupt rows never pass
        for other in tokens[2:]:
            if other != ".":
                try:
                    float(other)
                except ValueError:
                    raise ParseError(f"cannot parse value {other!r}", lineno) from None
        key = (age, year)
        if key in cells:
            raise DataError(f"duplicate entry for age {age}, year {year} (line {lineno})")
        cells[key] = value

    if not seen_header:
        raise ParseError("no 'Year Age Female Male Total' header found")
    if not cells:
        raise ParseError("table has no data rows")

    ages = np.arange(min(a for a, _ in cells), max(a for a, _ in cells) + 1)
    years = np.arange(min(y for _, y in cells), max(y for _, y in cells) + 1)
    values = np.full((len(ages), len(years)), np.nan)
    for (age, year), v in cells.items():
        values[age - ages[0], year - years[0]] = v
    return HmdTable(ages, years, values)


def read_hmd_table(path, value_column="Total"):
    with open(path, encoding="utf-8") as fh:
        return parse_hmd_table(fh.read(), value_column)


def _check_counts(ages, years, deaths, exposures):
    for mask, what in ((exposures <= 0, "exposure <= 0"), (deaths <= 0, "zero deaths")):
        if np.any(mask):
            i, j = np.argwhere(mask)[0]
            raise DataError(f"{what} at age {ages[i]}, year {years[j]}")


@dataclass(frozen=True, eq=False)
class MortalitySurface:
    """Rectangular ``p x n`` grid of deaths, exposures and log death rates.

    Construct through :meth:`from_counts`, :func:`build_surface` or the
    synthetic generator; all arrays are read-only afterwards.  A
    ``rate_only`` surface was built from central rates alone (exposures are
    1 and deaths equal the rate), so it cannot feed a Poisson likelihood.
    """

    ages: np.ndarray
    years: np.ndarray
    deaths: np.ndarray
    exposures: np.ndarray
    log_rates: np.ndarray
    rate_only: bool = False

    def __post_init__(self):
        for name in ("ages", "years"):
            arr = np.array(getattr(self, name), dtype=int)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        p, n = len(self.ages), len(self.years)
        if p < 1 or n < 1:
            raise DataError("surface needs at least one age and one year")
        if np.any(np.diff(self.ages) != 1) or np.any(np.diff(self.years) != 1):
            raise DataError("ages and years must be consecutive increasing integers")
        for name in ("deaths", "exposures", "log_rates"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (p, n):
                raise DataError(f"{name} has shape {arr.shape}, expected ({p}, {n})")
            if not np.all(np.isfinite(arr)):
                i, j = np.argwhere(~np.isfinite(arr))[0]
                raise DataError(
                    f"{name} is not finite at age {self.ages[i]}, year {self.years[j]}"
                )
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        _check_counts(self.ages, self.years, self.deaths, self.exposures)
        expected = self.exposures * np.exp(self.log_rates)
        bad = np.abs(expected - self.deaths) > 1e-10 * self.deaths
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"log rate inconsistent with deaths/exposure at age {self.ages[i]}, "
                f"year {self.years[j]}"
            )

    @classmethod
    def from_counts(cls, ages, years, deaths, exposures):
        deaths = np.asarray(deaths, dtype=float)
        exposures = np.asarray(exposures, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_rates = np.log(deaths / exposures)
        if deaths.shape == exposures.shape == (len(ages), len(years)):
            # name the offending cell before log(0) trips the finiteness check
            _check_counts(ages, years, deaths, exposures)
        return cls(ages, years, deaths, exposures, log_rates)

    @property
    def shape(self):
        return self.deaths.shape

    @property
    def p(self):
        return len(self.ages)

    @property
    def n(self):
        return len(self.years)

    @property
    def cohorts(self):
        return cohort_years(self.ages, self.years)

    def window(self, age_lo, age_hi, year_lo, year_hi):
        i0, i1 = age_lo - self.ages[0], age_hi - self.ages[0] + 1
        j0, j1 = year_lo - self.years[0], year_hi - self.years[0] + 1
        if i0 < 0 or j0 < 0 or i1 > self.p or j1 > self.n or i1 <= i0 or j1 <= j0:
            raise DataError(
                f"window {age_lo}-{age_hi} x {year_lo}-{year_hi} is outside the surface "
                f"({self.ages[0]}-{self.ages[-1]} x {self.years[0]}-{self.years[-1]})"
            )
        sl = (slice(i0, i1), slice(j0, j1))
        return MortalitySurface(
            self.ages[i0:i1], self.years[j0:j1],
            self.deaths[sl], self.exposures[sl], self.log_rates[sl], self.rate_only,
        )


def _select(table, what, age_lo, age_hi, year_lo, year_hi):
    if age_lo > age_hi or year_lo > year_hi:
        raise DataError(f"empty window {age_lo}:{age_hi} x {year_lo}:{year_hi}")
    ages = np.arange(age_lo, age_hi + 1)
    years = np.arange(year_lo, year_hi + 1)
    out = np.empty((len(ages), len(years)))
    for i, age in enumerate(ages):
        for j, year in enumerate(years):
            try:
                v = table.get(age, year)
            except KeyError:
                v = math.nan
            if math.isnan(v):
                raise DataError(f"{what} missing for age {age}, year {year}")
            out[i, j] = v
    return ages, years, out


def build_surface(deaths_table, exposures_table, age_lo, age_hi, year_lo, year_hi):
    """Cut the requested window out of a deaths/exposures table pair.

    Raises
    ------
    DataError
        A requested cell is missing, has non-positive exposure or zero deaths.
    """
    ages, years, D = _select(deaths_table, "deaths", age_lo, age_hi, year_lo, year_hi)
    _, _, N = _select(exposures_table, "exposure", age_lo, age_hi, year_lo, year_hi)
    return MortalitySurface.from_counts(ages, years, D, N)


def build_rate_surface(rates_table, age_lo, age_hi, year_lo, year_hi):
    """Surface from central death rates alone (HMD ``Mx`` tables).

    Exposures are set to 1 and deaths to the rate; the result is flagged
    ``rate_only`` so that likelihood-based methods refuse it.
    """
    ages, years, m = _select(rates_table, "rate", age_lo, age_hi, year_lo, year_hi)
    bad = m <= 0
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise DataError(f"non-positive rate at age {ages[i]}, year {years[j]}")
    return MortalitySurface(ages, years, m, np.ones_like(m), np.log(m), rate_only=True)


def synthesize_surface(params, base_exposure=1e5, noise_sd=0.0, seed=0, poisson=False):
    """Synthetic surface generated from a parameter bundle.

    By default log rates are the model's fitted values plus i.i.d. Gaussian
    noise with standard deviation ``noise_sd`` and deaths are
    ``exposure * exp(log_rate)``.  With ``poisson=True`` deaths are instead
    drawn as ``Poisson(exposure * m)`` and log rates recomputed from them;
    ``noise_sd`` is then ignored.
    """
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be non-negative, got {noise_sd}")
    if base_exposure <= 0:
        raise ValueError(f"base_exposure must be positive, got {base_exposure}")
    rng = np.random.default_rng(seed)
    eta = fitted_log_rates(params)
    N = np.full(eta.shape, float(base_exposure))
    if poisson:
        D = rng.poisson(N * np.exp(eta)).astype(float)
        if np.any(D == 0):
            i, j = np.argwhere(D == 0)[0]
            raise DataError(
                f"Poisson draw produced zero deaths at age {params.ages[i]}, "
                f"year {params.years[j]}; raise base_exposure"
            )
        return MortalitySurface(params.ages, params.years, D, N, np.log(D / N))
    log_rates = eta + noise_sd * rng.standard_normal(eta.shape) if noise_sd > 0 else eta
    D = N * np.exp(log_rates)
    return MortalitySurface(params.ages, params.years, D, N, log_rates)


def default_generator(kind="RH", ages=range(60, 90), years=range(1950, 2020), seed=0):
    """Plausible old-age parameters used when no generator is supplied.

    The shapes are loosely modelled on national male populations: a Gompertz
    age profile, a declining period index with curvature, and a cohort index
    with a mid-century wave.  Seeded year-to-year shocks are added to the
    period and cohort indices (and small ones to the age profiles), so that
    different seeds give distinct surfaces.  Without the shocks the period
    and cohort indices are both smooth and the alternating estimators crawl
    along the near-flat direction between them.
    """
    kind = ModelKind.parse(kind)
    ages = np.asarray(list(ages))
    years = np.asarray(list(years))
    p, n = len(ages), len(years)
    rng = np.random.default_rng(seed)

    x = (ages - ages.mean()) / max(p - 1, 1)
    tt = (years - years.mean()) / max(n - 1, 1)
    m = n + p - 1
    ss = np.linspace(-1.0, 1.0, m)
    a = -3.2 + 3.0 * x + 0.05 * rng.standard_normal(p)
    b = (1.4 - x - 0.5 * x**2 + 0.1 * rng.standard_normal(p)) / p
    k = -22.0 * tt - 9.0 * tt**2 + 3.0 * np.sin(5.0 * tt) + 2.0 * rng.standard_normal(n)
    c = (1.2 - 0.8 * x + 0.6 * x**2 + 0.1 * rng.standard_normal(p)) / p
    gamma = 2.5 * np.sin(3.0 * ss) * np.exp(-(ss**2)) + 0.8 * ss**2 + 0.8 * rng.standard_normal(m)

    kw = dict(a=a, b=b, k=k)
    if kind is ModelKind.APC:
        kw["b"] = np.full(p, 1.0 / p)
    if kind.has_cohort:
        kw["c"] = c if kind is ModelKind.RH else np.full(p, 1.0 / p)
        kw["gamma"] = gamma
    return apply_identifiability(ModelParams(kind, ages, years, **kw))


def random_generator(kind="RH", ages=range(60, 70), years=range(1990, 2006), seed=0, trend=0.0):
    """Seeded generator with rough, unstructured period and cohort indices.

    Age profiles are drawn uniformly from [0.5, 1.5] and the indices are
    i.i.d. normal, so period and cohort effects are far from interchangeable
    and every estimator converges quickly.  ``trend`` adds a linear decline
    from ``+trend`` to ``-trend`` to k, which the cohort-trend projection
    needs.  Intended for tests.
    """
    kind = ModelKind.parse(kind)
    ages = np.asarray(list(ages))
    years = np.asarray(list(years))
    p, n = len(ages), len(years)
    rng = np.random.default_rng(seed)
    a = np.linspace(-5.0, -2.5, p) + 0.05 * rng.standard_normal(p)
    b = rng.uniform(0.5, 1.5, p)
    k = trend * np.linspace(1.0, -1.0, n) + 0.6 * rng.standard_normal(n)
    c = rng.uniform(0.5, 1.5, p)
    gamma = 0.4 * rng.standard_normal(n + p - 1)
    kw = dict(a=a, b=b, k=k)
    if kind is ModelKind.APC:
        kw["b"] = np.full(p, 1.0 / p)
    if kind.has_cohort:
        kw["c"] = c if kind is ModelKind.RH else np.full(p, 1.0 / p)
        kw["gamma"] = gamma
    return apply_identifiability(ModelParams(kind, ages, years, **kw))


# ---------------------------------------------------------------------------
# CSV

_CSV_HEADER = "age,year,deaths,exposure,log_rate"


def surface_to_csv(surface):
    """Long-format CSV, one row per cell, ages varying slowest."""
    lines = [_CSV_HEADER]
    for i, age in enumerate(surface.ages):
        for j, year in enumerate(surface.years):
            lines.append(
                f"{int(age)},{int(year)},{format_float(surface.deaths[i, j])},"
                f"{format_float(surface.exposures[i, j])},"
                f"{format_float(surface.log_rates[i, j])}"
            )
    return "\n".join(lines) + "\n"


def surface_from_csv(text):
    """Inverse of :func:`surface_to_csv`; rows may come in any order."""
    if not isinstance(text, str):
        text = text.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty surface file") from None
    if ",".join(h.strip() for h in header) != _CSV_HEADER:
        raise ParseError(f"expected header {_CSV_HEADER!r}, got {','.join(header)!r}", 1)
    rows = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, found {len(row)}", lineno)
        try:
            age, year = int(row[0]), int(row[1])
            vals = tuple(float(v) for v in row[2:])
        except ValueError:
            raise ParseError(f"cannot parse row {row!r}", lineno) from None
        if (age, year) in rows:
            raise DataError(f"duplicate entry for age {age}, year {year} (line {lineno})")
        rows[(age, year)] = vals
    if not rows:
        raise ParseError("surface file has no data rows")
    ages = np.arange(min(a for a, _ in rows), max(a for a, _ in rows) + 1)
    years = np.arange(min(y for _, y in rows), max(y for _, y in rows) + 1)
    grid = np.empty((3, len(ages), len(years)))
    for i, age in enumerate(ages):
        for j, year in enumerate(years):
            try:
                grid[:, i, j] = rows[(int(age), int(year))]
            except KeyError:
                raise DataError(f"surface file lacks age {age}, year {year}") from None
    return MortalitySurface(ages, years, grid[0], grid[1], grid[2])
