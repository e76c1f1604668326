import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import poisson

from mortfit.data import MortalitySurface, build_rate_surface, parse_hmd_table, random_generator
from mortfit.errors import CapabilityError, DegenerateNormalizationError
from mortfit.models import (
    ModelKind,
    ModelParams,
    apply_identifiability,
    cohort_index,
    fitted_log_rates,
    hv_statistic,
    l2_error,
    params_from_json,
    params_to_csv,
    params_to_json,
    poisson_loglik,
    remove_apc_trend,
)

from conftest import hmd_text


def _random_params(kind, seed, p=5, n=7):
    rng = np.random.default_rng(seed)
    kw = dict(a=rng.normal(-4, 1, p), b=rng.uniform(0.2, 2, p), k=rng.normal(0, 3, n))
    kind = ModelKind.parse(kind)
    if kind.has_cohort:
        kw.update(c=rng.uniform(0.2, 2, p), gamma=rng.normal(0, 2, n + p - 1))
    if kind.fixed_b:
        kw["b"] = np.full(p, 1.0 / p)
    if kind.fixed_c:
        kw["c"] = np.full(p, 1.0 / p)
    return ModelParams(kind, np.arange(60, 60 + p), np.arange(2000, 2000 + n), **kw)


def test_cohort_index_layout():
    idx = cohort_index(2, 2)
    assert idx.tolist() == [[1, 2], [0, 1]]


def test_fitted_rates_by_hand():
    P = ModelParams("RH", [60, 61], [2000, 2001], a=[1, 2], b=[0.5, 0.5], k=[-1, 1],
                    c=[0.25, 0.75], gamma=[10, 20, 30])
    # cell (61, 2000) is the oldest cohort, gamma[0]
    expected = np.array([[1 - 0.5 + 0.25 * 20, 1 + 0.5 + 0.25 * 30],
                         [2 - 0.5 + 0.75 * 10, 2 + 0.5 + 0.75 * 20]])
    assert np.allclose(fitted_log_rates(P), expected)


def test_l2_error_examples():
    P = ModelParams("LC", [60], [2000], a=[0.5], b=[1.0], k=[0.0])
    assert l2_error([[1.0]], P) == 0.25
    assert l2_error(fitted_log_rates(_random_params("RH", 1)), _random_params("RH", 1)) == 0.0


def test_shape_validation():
    with pytest.raises(ValueError, match="gamma"):
        ModelParams("RH", [60, 61], [2000, 2001], a=[0, 0], b=[1, 0], k=[0, 0], c=[1, 0], gamma=[0, 0])


def test_loglik_single_cell():
    s = MortalitySurface.from_counts([60], [2000], [[2.0]], [[1.0]])
    P = ModelParams("LC", [60], [2000], a=[0.0], b=[1.0], k=[0.0])
    assert poisson_loglik(s, P, include_constant=False) == -1.0


def test_loglik_constant_matches_scipy():
    g = random_generator("RH", seed=1)
    from mortfit.data import synthesize_surface

    s = synthesize_surface(g, base_exposure=1e5, seed=2, poisson=True)
    mu = s.exposures * np.exp(fitted_log_rates(g))
    oracle = float(np.sum(poisson.logpmf(s.deaths, mu)))
    assert abs(poisson_loglik(s, g, include_constant=True) - oracle) < 1e-6 * abs(oracle)


def test_loglik_saturated_is_maximal():
    g = random_generator("H1", seed=3)
    from mortfit.data import synthesize_surface

    s = synthesize_surface(g, base_exposure=1e4)
    top = poisson_loglik(s, g)
    for shift in (1e-3, -1e-3):
        assert poisson_loglik(s, g.with_values(a=g.a + shift)) < top


def test_loglik_refuses_rate_only():
    ages, years = np.arange(60, 62), np.arange(2000, 2002)
    s = build_rate_surface(parse_hmd_table(hmd_text(ages, years, np.full((2, 2), 0.01))), 60, 61, 2000, 2001)
    with pytest.raises(CapabilityError):
        poisson_loglik(s, ModelParams("LC", ages, years, a=[0, 0], b=[0.5, 0.5], k=[0, 0]))


@pytest.mark.parametrize("kind", ["LC", "RH", "H1", "APC"])
def test_identifiability_constraints_and_invariance(kind):
    P = _random_params(kind, 4)
    Q = apply_identifiability(P)
    assert abs(Q.b.sum() - 1) < 1e-12
    assert abs(Q.k.sum()) < 1e-10
    if Q.kind.has_cohort:
        assert abs(Q.c.sum() - 1) < 1e-12
        assert abs(Q.gamma.sum()) < 1e-10
    assert np.abs(fitted_log_rates(Q) - fitted_log_rates(P)).max() < 1e-12
    assert abs(l2_error(fitted_log_rates(P) + 0.1, Q) - l2_error(fitted_log_rates(P) + 0.1, P)) < 1e-12
    R = apply_identifiability(Q)
    assert np.abs(R.vector() - Q.vector()).max() < 1e-12


def test_identifiability_undoes_k_shift():
    Q = apply_identifiability(_random_params("RH", 5))
    shifted = Q.with_values(k=Q.k + 5, a=Q.a - 5 * Q.b)
    assert np.abs(apply_identifiability(shifted).vector() - Q.vector()).max() < 1e-12


def test_identifiability_degenerate():
    P = _random_params("RH", 6)
    with pytest.raises(DegenerateNormalizationError):
        apply_identifiability(P.with_values(b=P.b - P.b.mean()))


def test_apc_trend_is_exact_and_removed():
    P = _random_params("APC", 7)
    Q = remove_apc_trend(P)
    assert abs(hv_statistic(Q)) < 1e-10
    assert np.abs(fitted_log_rates(Q) - fitted_log_rates(P)).max() < 1e-12
    assert abs(hv_statistic(apply_identifiability(P))) < 1e-10


kinds = st.sampled_from(["LC", "RH", "H1", "APC"])


@settings(max_examples=80, deadline=None)
@given(kinds, st.integers(0, 10_000), st.integers(2, 8), st.integers(2, 9))
def test_normalization_invariance_property(kind, seed, p, n):
    P = _random_params(kind, seed, p, n)
    Q = apply_identifiability(P)
    assert np.abs(fitted_log_rates(Q) - fitted_log_rates(P)).max() < 1e-12
    assert np.abs(apply_identifiability(Q).vector() - Q.vector()).max() < 1e-12


@pytest.mark.parametrize("kind", ["LC", "RH"])
def test_json_round_trip(kind):
    P = apply_identifiability(_random_params(kind, 8)).with_values(
        hv_constrained=False
    )
    text = params_to_json(P)
    d = json.loads(text)
    assert set(d) == {"kind", "ages", "years", "a", "b", "k", "c", "gamma", "hv_constrained"}
    Q = params_from_json(text)
    assert np.array_equal(Q.vector(), P.vector())
    assert Q.kind is P.kind


def test_json_extra_keys_ignored():
    P = _random_params("H1", 9)
    Q = params_from_json(params_to_json(P, extra={"report": {"iterations": 3}}))
    assert np.array_equal(Q.vector(), P.vector())


def test_csv_series_indices():
    P = _random_params("RH", 10, p=3, n=4)
    rows = [line.split(",") for line in params_to_csv(P).splitlines()[1:]]
    gamma_index = [int(r[1]) for r in rows if r[0] == "gamma"]
    assert gamma_index == list(range(2000 - 62, 2003 - 60 + 1))
    assert len(rows) == 3 + 3 + 4 + 3 + 6
