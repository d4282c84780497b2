import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import _oracles as O
from seqmv.fluctuation import (
    TestFunction,
    _cov_with_se,
    closed_moment_oracle,
    coefficient_sum,
    eta0_covariance,
    fluctuation_discrimination,
    particle_trig_covariance,
    project_fluctuation,
    sample_eta0,
    simulate_limit_spde,
    z_distance,
)
from seqmv.model import Config, InitialLaw, KernelSpec
from seqmv.particles import simulate_sequential
from seqmv.pde import solve_nfp
from seqmv.rng import RngContract

COS_SIN = [TestFunction.cos(), TestFunction.sin()]


@pytest.fixture(scope="module")
def cy():
    cfg = Config.simple(KernelSpec.cosine_y(1.0), n_steps=100, seed=9)
    return cfg, solve_nfp(cfg)


def test_coefficient_sum_values():
    # frozen from an independent float sum
    assert coefficient_sum(4) == pytest.approx(1.1422285251880866, rel=1e-14)
    assert coefficient_sum(100) == pytest.approx(1.8489603824784155, rel=1e-14)
    assert coefficient_sum(10**6) == pytest.approx(1.9985391454911487, rel=1e-12)
    assert coefficient_sum(1) == 0.0
    assert coefficient_sum(2) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ValueError):
        coefficient_sum(0)


@given(n=st.integers(2, 5000))
@settings(max_examples=40)
def test_coefficient_sum_is_increasing_and_below_two(n):
    assert coefficient_sum(n) < coefficient_sum(n + 1) < 2.0


@pytest.mark.parametrize("phi", [TestFunction.cos(), TestFunction.sin(), TestFunction.one(),
                                 TestFunction.gauss_bump(0.3, 0.7)], ids=lambda p: p.kind)
def test_test_function_derivatives(phi):
    x = np.linspace(-4, 4, 81)
    h = 1e-5
    assert np.allclose(phi.d1(x), (phi(x + h) - phi(x - h)) / (2 * h), atol=1e-8)
    assert np.allclose(phi.d2(x), (phi.d1(x + h) - phi.d1(x - h)) / (2 * h), atol=1e-8)
    grid = np.linspace(-10, 10, 200_001)
    b0, b1, b2 = phi.bounds
    assert np.max(np.abs(phi(grid))) == pytest.approx(b0, abs=1e-8)
    assert np.max(np.abs(phi.d1(grid))) == pytest.approx(b1, abs=1e-8)
    assert np.max(np.abs(phi.d2(grid))) == pytest.approx(b2, abs=1e-8)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunction("tan")
    with pytest.raises(ValueError):
        TestFunction.gauss_bump(width=0.0)


def test_projection(cy):
    cfg, sol = cy
    s = simulate_sequential(cfg, N=50, replica=1)
    phis = [TestFunction.one(), TestFunction.cos(), TestFunction.gauss_bump()]
    out = project_fluctuation(s, sol, phis, 40)
    x = s.positions[:, 40, 0]
    assert out.values[0] == 0.0
    assert out.values[1] == pytest.approx(math.sqrt(50) * (np.mean(np.cos(x)) - sol.moment(40, np.cos)), rel=1e-12)
    assert out.N == 50 and out.replica == 1 and out.k == 40


def test_eta0_covariance_for_a_standard_gaussian(cy):
    _, sol = cy
    C = eta0_covariance(sol, COS_SIN)
    ec, _, ecc, ess, _ = O.gaussian_trig(1.0)
    assert C[0, 0] == pytest.approx(0.19978820044686407, abs=1e-4)
    assert C[0, 0] == pytest.approx(ecc - ec * ec, abs=1e-4)
    assert C[1, 1] == pytest.approx(ess, abs=1e-4)
    assert C[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_eta0_samples(cy):
    _, sol = cy
    phis = [TestFunction.one(), TestFunction.cos(), TestFunction.sin()]
    z = sample_eta0(sol, phis, RngContract(3), 20_000)
    assert np.all(np.abs(z[:, 0]) < 1e-12)
    C = eta0_covariance(sol, phis)
    assert np.allclose(np.cov(z.T), C, atol=0.02)
    assert np.array_equal(sample_eta0(sol, phis, RngContract(3), 5, replica0=7), z[7:12])


def test_frozen_environment_oracle_is_the_marginal_covariance(cy):
    _, sol = cy
    o = closed_moment_oracle(sol, 0)
    assert o.shape == (101, 2, 2)
    for k in (0, 25, 50, 100):
        assert np.max(np.abs(o[k] - eta0_covariance(sol, [np.cos, np.sin], k))) < 2e-3


@pytest.mark.parametrize("factor", [0, 1, 2])
def test_oracle_is_symmetric_psd(cy, factor):
    _, sol = cy
    o = closed_moment_oracle(sol, factor)
    assert np.allclose(o, np.transpose(o, (0, 2, 1)), atol=1e-15)
    assert np.all(np.linalg.eigvalsh(o) > 0)


def test_oracle_factors_are_separated(cy):
    _, sol = cy
    T = {F: closed_moment_oracle(sol, F)[-1] for F in (0, 1, 2)}
    # var_cos shrinks and var_sin grows with the feedback factor
    assert T[0][0, 0] > T[1][0, 0] > T[2][0, 0]
    assert T[0][1, 1] < T[1][1, 1] < T[2][1, 1]
    assert T[1][0, 0] == pytest.approx(0.326, abs=2e-3)
    assert T[2][0, 0] == pytest.approx(0.272, abs=2e-3)


def test_oracle_needs_cosine_y():
    cfg = Config.simple(KernelSpec.cosine_diff(1, 1), n_steps=10)
    with pytest.raises(ValueError):
        closed_moment_oracle(solve_nfp(cfg), 1)


@pytest.mark.parametrize("factor", [0, 2])
def test_spde_against_the_oracle(cy, factor):
    _, sol = cy
    res = simulate_limit_spde(sol, None, COS_SIN, factor, 1500, RngContract(77))
    pred = closed_moment_oracle(sol, factor)[-1]
    cov, se = _cov_with_se(res.projections[:, -1, :])
    assert z_distance(cov, se, pred) < 4.0
    assert res.mass_drift < 1e-12
    assert res.cov.shape == (101, 2, 2)
    assert np.allclose(res.at(0), eta0_covariance(sol, [np.cos, np.sin]), atol=0.05)


def test_spde_replica_batches_compose(cy):
    _, sol = cy
    a = simulate_limit_spde(sol, None, COS_SIN, 1, 6, RngContract(5))
    b = simulate_limit_spde(sol, None, COS_SIN, 1, 3, RngContract(5), first_replica=3)
    assert np.array_equal(a.projections[3:], b.projections)
    with pytest.raises(ValueError, match="factor"):
        simulate_limit_spde(sol, None, COS_SIN, 3, 2, RngContract(5))


def test_spde_zero_kernel_is_frozen_environment():
    cfg = Config.simple(KernelSpec.zero(), n_steps=40, initial=InitialLaw.gaussian(0, 0.5))
    sol = solve_nfp(cfg)
    res = simulate_limit_spde(sol, None, COS_SIN, 2, 2000, RngContract(2))
    cov, se = _cov_with_se(res.projections[:, -1, :])
    pred = eta0_covariance(sol, [np.cos, np.sin], 40)
    assert z_distance(cov, se, pred) < 4.0


def test_iid_particles_match_factor_zero(cy):
    cfg, sol = cy
    eta = particle_trig_covariance(cfg, sol, "iid", [256], 1500)[256]
    cov, se = _cov_with_se(eta)
    assert z_distance(cov, se, closed_moment_oracle(sol, 0)[-1]) < 4.0


def test_particle_projection_matches_stored_paths(cy):
    cfg, sol = cy
    out = particle_trig_covariance(cfg, sol, "sequential", [8, 32], 3)
    for r in range(3):
        x = simulate_sequential(cfg, N=32, replica=r).positions[:, -1, 0]
        for n in (8, 32):
            ref = math.sqrt(n) * (np.mean(np.cos(x[:n])) - sol.moment(100, np.cos))
            assert out[n][r, 0] == pytest.approx(ref, abs=1e-11)


def test_particle_covariance_checks(cy):
    cfg, sol = cy
    with pytest.raises(ValueError, match="system"):
        particle_trig_covariance(cfg, sol, "other", [4], 2)
    with pytest.raises(ValueError, match="cosine_y"):
        c2 = Config.simple(KernelSpec.zero(), n_steps=10)
        fluctuation_discrimination(c2, solve_nfp(c2), [4], 2)


def test_covariance_standard_errors():
    rng = np.random.default_rng(0)
    x = rng.multivariate_normal([0, 0], [[1.0, 0.3], [0.3, 2.0]], size=200_000)
    cov, se = _cov_with_se(x)
    assert np.allclose(cov, [[1.0, 0.3], [0.3, 2.0]], atol=0.02)
    # Gaussian fourth moments: Var(x^2) = 2 s^4, Var(xy) = s_x^2 s_y^2 + c^2
    expect = np.sqrt(np.array([2.0, 8.0, 2.0 + 0.09]) / x.shape[0])
    assert np.allclose(se, expect, rtol=0.02)
    assert z_distance(cov, se, cov) == 0.0


def test_discrimination_report(cy):
    cfg, sol = cy
    rep = fluctuation_discrimination(cfg, sol, [64], 200, systems=("iid",))
    s = rep["systems"]["iid"]
    assert rep["N"] == 64 and s["expected"] == 0 and set(s["z"]) == {0, 1, 2}
    assert isinstance(s["pass"], bool)
