import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixhazard.core import SpellData
from mixhazard.propensity import (
    CovariateSpec,
    SeparationError,
    balance_report,
    fit_propensity,
    ipw_weights,
    trim_by_score,
)


def spells(notice, X=None, names=(), labels=("S", "L")):
    n = len(notice)
    return SpellData(notice=notice, duration=np.ones(n, int), censored=np.zeros(n, bool), notice_labels=labels,
                     covariates=X, covariate_names=names)


def logit_sample(n, seed, b0=0.5, b1=1.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    p = 1 / (1 + np.exp(-(b0 + b1 * x)))
    return spells((rng.random(n) < p).astype(int), x[:, None], ("x",))


def test_intercept_only_is_sample_share():
    data = spells(np.array([1] * 60 + [0] * 40))
    m = fit_propensity(data)
    np.testing.assert_allclose(m.predict_proba(data)[:, 1], 0.6, atol=1e-12)
    assert m.converged and m.link == "binary-logit"


def test_logit_recovers_coefficients():
    data = logit_sample(50_000, 3)
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    np.testing.assert_allclose(m.coefficients[0], [0.5, 1.0], atol=0.05)


def test_coefficients_match_scipy_optimum():
    from scipy import optimize

    data = logit_sample(3000, 11)
    x, y = data.covariate("x"), data.notice

    def nll(b):
        eta = b[0] + b[1] * x
        return np.sum(np.logaddexp(0, eta) - y * eta)

    ref = optimize.minimize(nll, np.zeros(2), method="BFGS", options={"gtol": 1e-10}).x
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    np.testing.assert_allclose(m.coefficients[0], ref, atol=1e-5)


def test_separation_detected():
    x = np.r_[np.zeros(50), np.ones(50)]
    data = spells(x.astype(int), x[:, None], ("x",))
    with pytest.raises(SeparationError):
        fit_propensity(data, CovariateSpec(numeric=("x",)))


def test_collinear_column_dropped_with_warning():
    data = logit_sample(2000, 5)
    X = np.column_stack([data.covariates[:, 0], 2 * data.covariates[:, 0]])
    d2 = spells(data.notice, X, ("x", "x2"))
    with pytest.warns(RuntimeWarning, match="collinear"):
        m = fit_propensity(d2, CovariateSpec(numeric=("x", "x2")))
    assert m.column_names == ["intercept", "x"]


def test_categorical_encoding_uses_first_level_as_reference():
    rng = np.random.default_rng(0)
    g = rng.integers(0, 3, 3000).astype(float)
    p = np.array([0.3, 0.5, 0.7])[g.astype(int)]
    data = spells((rng.random(3000) < p).astype(int), g[:, None], ("g",))
    m = fit_propensity(data, CovariateSpec(categorical=("g",)))
    assert m.column_names == ["intercept", "g[1]", "g[2]"]
    # saturated model reproduces cell shares
    fitted = m.predict_proba(data)[:, 1]
    for lev in range(3):
        sel = g == lev
        assert fitted[sel][0] == pytest.approx(data.notice[sel].mean(), abs=1e-8)


def test_multinomial_probabilities_sum_to_one():
    rng = np.random.default_rng(2)
    x = rng.normal(size=4000)
    eta = np.column_stack([np.zeros(4000), 0.2 + 0.7 * x, -0.3 - 0.5 * x])
    p = np.exp(eta) / np.exp(eta).sum(1, keepdims=True)
    notice = (rng.random(4000)[:, None] > np.cumsum(p, 1)).sum(1)
    data = spells(notice, x[:, None], ("x",), ("a", "b", "c"))
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    assert m.link == "multinomial-logit"
    np.testing.assert_allclose(m.predict_proba(data).sum(1), 1.0, atol=1e-12)
    np.testing.assert_allclose(m.coefficients, [[0.2, 0.7], [-0.3, -0.5]], atol=0.15)


@settings(max_examples=60)
@given(st.floats(0.1, 100.0), st.floats(-5.0, 5.0))
def test_affine_rescaling_invariance(scale, shift):
    data = logit_sample(400, 9)
    base = fit_propensity(data, CovariateSpec(numeric=("x",)))
    moved = spells(data.notice, data.covariates * scale + shift, ("x",))
    m = fit_propensity(moved, CovariateSpec(numeric=("x",)))
    assert m.coefficients[0, 1] * scale == pytest.approx(base.coefficients[0, 1], abs=1e-6)
    np.testing.assert_allclose(m.predict_proba(moved), base.predict_proba(data), atol=1e-6)


def test_ipw_weights_definition():
    data = spells(np.array([0, 1] * 50))
    m = fit_propensity(data)
    np.testing.assert_allclose(ipw_weights(m, data), 2.0)
    # binary case: 1/p for the long group, 1/(1-p) for the short group
    data = logit_sample(500, 1)
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    p = m.predict_proba(data)[:, 1]
    w = ipw_weights(m, data)
    np.testing.assert_allclose(w, np.where(data.notice == 1, 1 / p, 1 / (1 - p)))


def test_trim_by_score_counts():
    data = spells(np.array([0, 1, 1]))
    kept, dropped = trim_by_score(data, np.array([0.05, 0.5, 0.95]))
    assert dropped == 2 and len(kept) == 1
    assert trim_by_score(data, np.full(3, 0.5))[1] == 0
    with pytest.raises(ValueError):
        trim_by_score(data, np.full(3, 0.01))


def test_trim_matches_brute_force_three_categories():
    rng = np.random.default_rng(4)
    x = 2.0 * rng.standard_normal(5000)
    eta = np.column_stack([np.zeros(5000), 0.8 * x, -0.8 * x])
    p = np.exp(eta) / np.exp(eta).sum(1, keepdims=True)
    notice = (rng.random(5000)[:, None] > np.cumsum(p, 1)).sum(1)
    data = spells(notice, x[:, None], ("x",), ("a", "b", "c"))
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    probs = m.predict_proba(data)
    count = sum(1 for i in range(len(data)) if not 0.1 <= probs[i, data.notice[i]] <= 0.9)
    assert trim_by_score(data, m)[1] == count > 0


def test_balance_unit_weights_and_duplicates():
    data = logit_sample(1000, 8)
    rep = balance_report(data, np.ones(len(data)))
    r = rep.rows[0]
    assert r["mean_group_weighted"] == r["mean_group_unweighted"]
    x = np.r_[np.arange(10.0), np.arange(10.0)]
    dup = spells(np.r_[np.zeros(10, int), np.ones(10, int)], x[:, None], ("x",))
    assert balance_report(dup, np.ones(20)).rows[0]["diff_weighted"] == 0.0


def test_weighting_balances_covariates():
    data = logit_sample(50_000, 12)
    m = fit_propensity(data, CovariateSpec(numeric=("x",)))
    w = ipw_weights(m, data)
    rep = balance_report(data, w, m.predict_proba(data))
    assert abs(rep.rows[0]["norm_diff_unweighted"]) > 0.3
    assert rep.max_abs_normalized_diff() < 0.05
    assert set(rep.overlap) == {"S", "L"}
    # weighted group means both estimate the pooled mean
    x = data.covariate("x")
    se = x.std() / np.sqrt(len(x))
    for l in (0, 1):
        sel = data.notice == l
        assert abs(np.average(x[sel], weights=w[sel]) - x.mean()) < 2 * se * np.sqrt(1 / sel.mean()) * 2
