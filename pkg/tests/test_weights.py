import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import _oracles as O
from seqmv.model import KernelSpec, kernel_convolve_measure
from seqmv.weights import (
    WeightScheme,
    limit_first_weight,
    theta_and_neff,
    threshold_diagnostics,
    weights_for,
)

schemes = st.one_of(
    st.just(WeightScheme.uniform()),
    st.builds(WeightScheme.power, st.floats(0.1, 2.5), st.floats(0.05, 3.0)),
    st.lists(st.floats(0.01, 1.0), min_size=1, max_size=60).map(lambda a: WeightScheme.custom([1.0] + a)),
)


def test_uniform_example():
    assert weights_for(WeightScheme.uniform(), 3).weights.tolist() == [1 / 3] * 3


@given(schemes)
def test_first_index_is_a_point_mass(scheme):
    assert weights_for(scheme, 1).weights.tolist() == [1.0]
    assert theta_and_neff(scheme, 1) == (1.0, 1.0)


def test_power_half_example():
    t = weights_for(WeightScheme.power(0.5, 1.0), 3)
    # frozen from _oracles.weights_direct
    assert np.allclose(t.weights, [0.12379124008768971, 0.29885849072268456, 0.5773502691896257], rtol=0, atol=1e-15)
    assert t.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert t.theta == pytest.approx(0.43797400193282227, abs=1e-14)
    assert t.n_eff == pytest.approx(2.2832405475825093, abs=1e-13)


def test_uniform_theta():
    assert theta_and_neff(WeightScheme.uniform(), 4) == (0.25, 4.0)
    for i in (1, 7, 100, 10_000):
        th, ne = theta_and_neff(WeightScheme.uniform(), i)
        assert th == 1.0 / i and ne == i


@given(schemes, st.integers(1, 60))
def test_probability_vector(scheme, i):
    if scheme.max_index is not None:
        i = min(i, scheme.max_index)
    t = weights_for(scheme, i)
    assert np.all(t.weights >= 0)
    assert abs(t.weights.sum() - 1.0) <= 1e-12
    assert 0 < t.theta <= 1 and t.n_eff >= 1
    assert t.weights[-1] == scheme.alphas(i)[-1]


@pytest.mark.parametrize("scheme", [WeightScheme.uniform(), WeightScheme.power(0.5), WeightScheme.power(1.5, 0.4),
                                    WeightScheme.power(0.8, 2.5)], ids=str)
def test_probability_vector_up_to_ten_thousand(scheme):
    for i in (10, 999, 10_000):
        w = weights_for(scheme, i).weights
        assert w.min() >= 0 and abs(w.sum() - 1.0) <= 1e-12


@given(schemes, st.integers(1, 25))
def test_backward_recurrence_matches_direct_products(scheme, i):
    if scheme.max_index is not None:
        i = min(i, scheme.max_index)
    al = scheme.alphas(i)
    assert np.allclose(weights_for(scheme, i).weights, O.weights_direct(al, i), rtol=1e-13, atol=1e-15)


@given(schemes, st.integers(0, 2**32 - 1))
def test_recursion_consistency_on_atoms(scheme, seed):
    # mu_i = (1 - alpha_i) mu_{i-1} + alpha_i delta_{X_i}, applied through K * mu at a probe point
    n = min(20, scheme.max_index or 20)
    rng = np.random.default_rng(seed)
    atoms = rng.normal(size=n)
    k = KernelSpec.cosine_diff(1.0, 1.0)
    al = scheme.alphas(n)
    x = 0.37
    rec = 0.0
    for i in range(1, n + 1):
        rec = (1 - al[i - 1]) * rec + al[i - 1] * math.cos(x - atoms[i - 1])
        tab = kernel_convolve_measure(k, (atoms[:i], weights_for(scheme, i).weights), x)
        assert abs(rec - tab) <= 1e-12


def test_power_one_equals_uniform():
    p = WeightScheme.power(1.0, 1.0)
    assert np.allclose(p.alphas(500), 1.0 / np.arange(1, 501), rtol=0, atol=1e-15)
    for i in (1, 5, 64, 500):
        assert np.allclose(weights_for(p, i).weights, weights_for(WeightScheme.uniform(), i).weights, rtol=0, atol=1e-15)


def test_power_clamps_and_records():
    s = WeightScheme.power(0.5, 3.0)
    al = s.alphas(20)
    assert al.max() <= 1.0 and np.all(np.diff(al) <= 0)
    assert s.clamped == tuple(range(2, 10))


def test_invalid_schemes():
    with pytest.raises(ValueError):
        WeightScheme.custom([0.5, 0.2])
    with pytest.raises(ValueError):
        WeightScheme.custom([1.0, 1.5])
    with pytest.raises(ValueError):
        WeightScheme.power(-1.0)
    with pytest.raises(ValueError):
        weights_for(WeightScheme.uniform(), 0)
    with pytest.raises(ValueError):
        weights_for(WeightScheme.custom([1.0, 0.5]), 3)


def test_uniform_threshold_series():
    d = threshold_diagnostics(WeightScheme.uniform(), 1000)
    assert np.array_equal(d["first_weight"], 1.0 / np.arange(1, 1001))
    assert np.array_equal(d["n_eff"], np.arange(1, 1001, dtype=float))


@pytest.mark.parametrize("r", [0.5, 0.75, 1.0])
def test_forgetting_regime(r):
    d = threshold_diagnostics(WeightScheme.power(r), 100_000)
    fw, ne = d["first_weight"], d["n_eff"]
    assert np.all(np.diff(fw[1:]) <= 0) and fw[-1] < 1e-2
    assert ne[-1] > 50 * ne[9]


def test_power_half_neff_grows_like_sqrt():
    d = threshold_diagnostics(WeightScheme.power(0.5), 100_000)
    i = np.arange(100, 100_001)
    ratio = d["n_eff"][i - 1] / i**0.5
    assert 0.2 <= ratio.min() and ratio.max() <= 5


def test_diagnostic_recursions_match_tables():
    s = WeightScheme.power(0.7, 1.3)
    d = threshold_diagnostics(s, 300)
    for i in (1, 2, 17, 300):
        t = weights_for(s, i)
        assert d["first_weight"][i - 1] == pytest.approx(t.first_weight, rel=1e-12)
        assert d["theta"][i - 1] == pytest.approx(t.theta, rel=1e-12)


@pytest.mark.parametrize("c, frozen", [(1.0, 0.17593854745634627), (0.25, 0.66384193117446572)])
def test_memory_constant(c, frozen):
    # frozen values: mpmath Euler-Maclaurin sum of log(1 - c j^-1.5) (tests/freeze_oracles.py)
    s = WeightScheme.power(1.5, c)
    assert limit_first_weight(s) == pytest.approx(frozen, rel=1e-12)
    d = threshold_diagnostics(s, 1_000_000)
    fw, th = d["first_weight"], d["theta"]
    assert np.all(np.diff(fw[1:]) <= 0) and fw[-1] > frozen
    assert np.all(th >= fw**2 * (1 - 1e-12)) and th.min() > 0.02
    # the partial product approaches c* at the rate of its tail, ~ 2c i^-1/2 relative
    for i in (10**4, 10**5, 10**6):
        gap = fw[i - 1] / frozen - 1.0
        assert 0.8 * 2 * c / math.sqrt(i) < gap < 1.2 * 2 * c / math.sqrt(i)


def test_memory_constant_is_zero_without_summability():
    assert limit_first_weight(WeightScheme.power(1.0)) == 0.0
    assert limit_first_weight(WeightScheme.power(0.5)) == 0.0
    with pytest.raises(ValueError):
        limit_first_weight(WeightScheme.uniform())
