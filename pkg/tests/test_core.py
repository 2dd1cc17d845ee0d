import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixhazard.core import (
    DurationRecord,
    LogLogistic,
    ModelParams,
    SpellData,
    TypeDistribution,
    average_type,
    average_type_paths,
    empirical_exit_rates,
    hankel_diagnostic,
    log_logistic_hazard,
    log_logistic_mode,
    model_exit_rate,
    model_exit_rates,
    shift_moments,
    type_polynomial,
)
from mixhazard.simlab import exact_exit_rates, simulate, three_point_dgp


# independent oracle: enumerate types and exit times directly
def enumerate_hazard(psi, points, weights, d):
    surv = [w * np.prod([1 - p * v for p in psi[: d - 1]]) for v, w in zip(points, weights)]
    exit_ = [s * psi[d - 1] * v for s, v in zip(surv, points)]
    return sum(exit_) / sum(surv)


def discrete_params(psi1, tail, points, weights, labels=None):
    """Parameters in units where the type has mean one."""
    pts = np.asarray(points, float)
    w = np.asarray(weights, float)
    c = w @ pts
    mom = [(w @ pts**k) / c**k for k in range(1, len(tail) + 2)]
    return ModelParams(psi1=np.asarray(psi1) * c, tail=np.asarray(tail) * c, moments=mom, notice_labels=labels)


# -- log-logistic -------------------------------------------------------------


def test_log_logistic_unit_ratios():
    assert log_logistic_hazard(2, 2, 2) == pytest.approx(0.5, abs=1e-15)


def test_log_logistic_mode_matches_grid_argmax():
    d = np.linspace(1, 20, 190_001)
    h = log_logistic_hazard(3.0, 2.0, d)
    assert d[np.argmax(h)] == pytest.approx(3.0, abs=1e-4)
    assert log_logistic_mode(3.0, 2.0) == pytest.approx(3.0)


def test_log_logistic_decreasing_when_shape_below_one():
    h = log_logistic_hazard(1.0, 0.5, np.arange(1, 51))
    assert np.all(np.diff(h) < 0)
    assert log_logistic_mode(1.0, 0.5) is None


@pytest.mark.parametrize("a1,a2", [(0, 1), (1, 0), (-1, 2)])
def test_log_logistic_domain(a1, a2):
    with pytest.raises(ValueError):
        log_logistic_hazard(a1, a2, 1)
    with pytest.raises(ValueError):
        LogLogistic(a1, a2)


# -- polynomials --------------------------------------------------------------


def test_survival_polynomial_single_factor():
    np.testing.assert_allclose(type_polynomial([0.5], "survival"), [1.0, -0.5])


def test_density_polynomial_two_periods():
    np.testing.assert_allclose(type_polynomial([0.3, 0.2], "density"), [0.0, 0.2, -0.06], atol=1e-15)


psi_lists = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=8)


@given(psi_lists)
def test_density_leading_coefficient(psi):
    d = len(psi)
    c = type_polynomial(psi, "density")
    assert c[d] == pytest.approx((-1) ** (d - 1) * np.prod(psi), rel=1e-12, abs=1e-300)


@given(psi_lists, st.lists(st.floats(0.05, 1.0), min_size=1, max_size=5), st.data())
def test_polynomial_identity_against_direct_product(psi, points, data):
    w = np.array(data.draw(st.lists(st.floats(0.1, 1.0), min_size=len(points), max_size=len(points))))
    w /= w.sum()
    pts = np.array(points)
    c = type_polynomial(psi, "survival")
    mom = np.array([w @ pts**k for k in range(len(psi) + 1)])
    direct = sum(wj * np.prod([1 - p * v for p in psi]) for v, wj in zip(pts, w))
    assert c @ mom == pytest.approx(direct, abs=1e-12)


# -- exit rates and average types ---------------------------------------------


def test_degenerate_type_returns_structural_hazard():
    p = ModelParams(psi1=(0.1, 0.3), tail=(0.2, 0.4, 0.25), moments=(1, 1, 1, 1), notice_labels=("S", "L"))
    h = model_exit_rates(p)
    np.testing.assert_allclose(h, p.psi_matrix(), atol=1e-15)
    np.testing.assert_allclose(average_type_paths(p), 1.0, atol=1e-15)


def test_two_point_exit_rate_and_average_type():
    p = ModelParams(psi1=(0.2, 0.3), tail=(0.3,), moments=(1.0, 1.25), notice_labels=("S", "L"))
    want = enumerate_hazard([0.2, 0.3], [0.5, 1.5], [0.5, 0.5], 2)
    assert want == pytest.approx(0.28125, abs=1e-15)
    assert model_exit_rate(p, 0, 2) == pytest.approx(want, abs=1e-15)
    assert average_type(p, 0, 2) == pytest.approx(0.9375, abs=1e-15)
    assert average_type(p, 1, 1) == 1.0


def test_duration_out_of_range():
    p = ModelParams(psi1=(0.2, 0.3), tail=(0.3,), moments=(1.0, 1.25))
    with pytest.raises(ValueError):
        model_exit_rate(p, 0, 3)


admissible = st.tuples(
    st.lists(st.floats(0.05, 0.5), min_size=2, max_size=2),
    st.lists(st.floats(0.05, 0.5), min_size=1, max_size=5),
    st.lists(st.floats(0.1, 1.9), min_size=2, max_size=4, unique=True),
)


@given(admissible)
def test_exit_rates_match_enumeration(args):
    psi1, tail, points = args
    w = np.full(len(points), 1 / len(points))
    p = discrete_params(psi1, tail, points, w)
    h = model_exit_rates(p)
    for l in range(2):
        psi = [psi1[l]] + list(tail)
        for d in range(1, len(psi) + 1):
            assert h[l, d - 1] == pytest.approx(enumerate_hazard(psi, points, w, d), rel=1e-9)


@given(admissible)
def test_attenuation_and_cross_notice_ordering(args):
    psi1, tail, points = args
    w = np.full(len(points), 1 / len(points))
    p = discrete_params(psi1, tail, points, w)
    h = model_exit_rates(p)
    psi = p.psi_matrix()
    for l in range(2):
        assert h[l, 1] / h[l, 0] < psi[l, 1] / psi[l, 0] * (1 + 1e-12)
    hi, lo = (1, 0) if psi1[1] > psi1[0] else (0, 1)
    assert h[lo, 1] >= h[hi, 1] - 1e-14


@given(admissible)
def test_average_type_declines(args):
    psi1, tail, points = args
    w = np.full(len(points), 1 / len(points))
    avg = average_type_paths(discrete_params(psi1, tail, points, w))
    assert np.all(np.diff(avg, axis=1) < 0)


def test_shift_moments_brute_force():
    pts = np.array([0.1, 0.4, 0.9, 1.3, 2.0])
    w = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
    raw = np.array([w @ pts**k for k in range(5)])
    shifted = np.array([w @ (pts + 0.07) ** k for k in range(5)])
    np.testing.assert_allclose(shift_moments(raw, 0.07), shifted, rtol=1e-13)


def test_beta_mixture_moments_by_quadrature():
    from scipy import integrate, stats

    t = TypeDistribution.beta_mixture(((2.0, 3.0, 0.6), (0.5, 0.7, 0.4)))
    for k in range(1, 5):
        q = sum(p * integrate.quad(lambda x: x**k * stats.beta(a, b).pdf(x), 0, 1)[0] for a, b, p in t.components)
        assert t.raw_moments(k)[k] == pytest.approx(q, rel=1e-8)


def test_hankel_detects_impossible_moments():
    assert hankel_diagnostic([1.0, 1.25, 1.75, 2.6875], warn=False)["psd"]
    assert not hankel_diagnostic([1.0, 0.9], warn=False)["psd"]  # variance below zero


# -- empirical tables ---------------------------------------------------------


def _records(durs, cens=None):
    cens = cens or [False] * len(durs)
    recs = [DurationRecord(str(i), "S", d, c) for i, (d, c) in enumerate(zip(durs, cens))]
    return SpellData.from_records(recs + [DurationRecord("x", "L", 1)], ("S", "L"))


def test_empirical_counting():
    t = empirical_exit_rates(_records([1, 1, 2, 2]), Dbar=2)
    np.testing.assert_allclose(t.hazard[0], [0.5, 1.0])


def test_empirical_censored_exit_excluded_from_numerator():
    t = empirical_exit_rates(_records([1, 1, 2, 2], [False, False, False, True]), Dbar=2)
    np.testing.assert_allclose(t.hazard[0], [0.5, 0.5])
    assert t.at_risk[0, 1] == 2 and t.exits[0, 1] == 1


def test_empty_cells_flagged():
    with pytest.warns(RuntimeWarning):
        t = empirical_exit_rates(_records([1, 1]), Dbar=2)
    assert not t.estimable[0, 1]


def test_record_validation():
    with pytest.raises(ValueError):
        DurationRecord("a", "S", 0)
    with pytest.raises(ValueError):
        DurationRecord("a", "S", 1, weight=0)


def test_records_roundtrip():
    recs = [DurationRecord("a", "S", 2, False, {"x": 1.0}), DurationRecord("b", "L", 3, True, {"x": 0.0})]
    data = SpellData.from_records(recs)
    assert data.to_records() == recs


def test_empirical_converges_to_population():
    dgp = three_point_dgp()
    data = simulate(dgp, 1_000_000, seed=7)
    emp = empirical_exit_rates(data, Dbar=dgp.Dbar).hazard
    exact = exact_exit_rates(dgp).hazard
    assert np.max(np.abs(emp - exact)) < 0.005


def test_weighted_table_with_all_weights_scaled():
    data = simulate(three_point_dgp(), 2000, seed=1)
    a = empirical_exit_rates(data, Dbar=4)
    b = empirical_exit_rates(data, np.full(len(data), 3.0), Dbar=4)
    np.testing.assert_allclose(a.hazard, b.hazard, rtol=1e-13)
    for combo in itertools.product([0, 1], range(4)):
        assert b.numerator[combo] == pytest.approx(3 * a.numerator[combo])
