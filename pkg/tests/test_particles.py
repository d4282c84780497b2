import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import _oracles as O
from seqmv.model import Config, ConfigError, DiffusionSpec, InitialLaw, KernelSpec, TimeGrid
from seqmv.particles import (
    SimulationError,
    TrajectoryStore,
    drift_mismatch,
    extend_particles,
    simulate_classical,
    simulate_iid_limit,
    simulate_sequential,
)
from seqmv.pde import Grid1D, solve_nfp
from seqmv.rng import RngContract, Tag
from seqmv.weights import WeightScheme

GENERIC_KERNELS = [KernelSpec.tanh_attract(1.0), KernelSpec.bounded_gauss(2.0), KernelSpec.cosine_diff(1.2, 0.8),
                   KernelSpec.cosine_y(0.9), KernelSpec.zero()]


def _cfg(kernel, **kw):
    kw.setdefault("n_steps", 40)
    return Config.simple(kernel, **kw)


def test_zero_kernel_gives_brownian_paths():
    cfg = _cfg(KernelSpec.zero(), initial=InitialLaw.point(0.0), n_steps=10)
    xs = np.concatenate([simulate_sequential(cfg, N=500, replica=r).positions[:, -1, 0] for r in range(20)])
    assert abs(xs.mean()) < 3 * xs.std(ddof=1) / math.sqrt(xs.size)
    assert xs.var(ddof=1) == pytest.approx(1.0, rel=0.05)


def test_zero_kernel_path_is_the_normal_stream():
    cfg = _cfg(KernelSpec.zero(), initial=InitialLaw.point(0.5), n_steps=8, seed=4)
    x = simulate_sequential(cfg, N=3, replica=2).path(3)[:, 0]
    z = O.normals(4, int(Tag.BM), 2, 2, 8)
    assert np.allclose(x, 0.5 + np.concatenate([[0.0], np.cumsum(z * math.sqrt(cfg.dt))]), rtol=0, atol=1e-14)


@pytest.mark.parametrize("kernel", [KernelSpec.zero(), KernelSpec.tanh_attract(1), KernelSpec.bounded_gauss(1)],
                         ids=lambda k: k.kind)
def test_single_particle_sequential_equals_classical(kernel):
    cfg = _cfg(kernel, seed=8)
    a = simulate_sequential(cfg, N=1, replica=3).positions
    b = simulate_classical(cfg, 1, replica=3).positions
    assert np.array_equal(a, b)


def test_single_particle_classical_cosine_feels_its_own_constant_drift():
    cfg = _cfg(KernelSpec.cosine_diff(1, 1), seed=8, initial=InitialLaw.point(0.0), n_steps=20)
    xs = np.array([simulate_classical(cfg, 1, replica=r).positions[0, -1, 0] for r in range(3000)])
    se = xs.std(ddof=1) / math.sqrt(xs.size)
    assert abs(xs.mean() - 1.0) < 3 * se
    seq = simulate_sequential(cfg, N=1, replica=0).positions
    cls = simulate_classical(cfg, 1, replica=0).positions
    assert np.allclose(cls - seq, cfg.time.times[None, :, None], rtol=0, atol=1e-12)


def test_two_particle_tanh_against_hand_stepper():
    cfg = Config.simple(KernelSpec.tanh_attract(1.0), n_steps=5, t_end=0.05, seed=123)
    store = simulate_sequential(cfg, N=2, replica=7, fast=False)
    x0 = [O.normals(123, int(Tag.INIT), 7, p, 1)[0] for p in (0, 1)]
    z = np.stack([O.normals(123, int(Tag.BM), 7, p, 5) for p in (0, 1)])
    ref = O.sequential_paths(lambda x, y: math.tanh(y - x), 2, 5, cfg.dt, 1.0, x0, z, np.array([1.0, 0.5]))
    assert np.allclose(store.positions[:, :, 0], ref, rtol=0, atol=1e-14)
    # particle 2 drift at each step is tanh(X1 - X2)
    X = store.positions[:, :, 0]
    incr = X[1, 1:] - X[1, :-1] - math.sqrt(cfg.dt) * z[1]
    assert np.allclose(incr / cfg.dt, np.tanh(X[0, :-1] - X[1, :-1]), rtol=0, atol=1e-11)


@pytest.mark.parametrize("scheme", [WeightScheme.uniform(), WeightScheme.power(0.6, 0.9)], ids=str)
def test_generic_loop_matches_literal_reference(scheme):
    cfg = Config.simple(KernelSpec.bounded_gauss(1.5), n_steps=12, seed=31)
    store = simulate_sequential(cfg, scheme, 6, replica=1, fast=False)
    x0 = [O.normals(31, int(Tag.INIT), 1, p, 1)[0] for p in range(6)]
    z = np.stack([O.normals(31, int(Tag.BM), 1, p, 12) for p in range(6)])
    kfn = lambda x, y: 1.5 * (y - x) * math.exp(-0.5 * (y - x) ** 2)  # noqa: E731
    ref = O.sequential_paths(kfn, 6, 12, cfg.dt, 1.0, x0, z, scheme.alphas(6))
    assert np.allclose(store.positions[:, :, 0], ref, rtol=0, atol=1e-13)


@pytest.mark.parametrize("n0, dn", [(4, 4), (8, 8), (16, 16), (5, 0), (1, 9)])
@pytest.mark.parametrize("kernel", [KernelSpec.cosine_diff(1, 1), KernelSpec.tanh_attract(1)], ids=lambda k: k.kind)
@pytest.mark.parametrize("fast", [True, False])
def test_extension_is_bit_identical(n0, dn, kernel, fast):
    cfg = _cfg(kernel, seed=77)
    sch = WeightScheme.power(0.7)
    base = simulate_sequential(cfg, sch, n0, replica=2, fast=fast)
    before = base.positions.copy()
    ext = extend_particles(base, cfg, sch, dn, fast=fast)
    full = simulate_sequential(cfg, sch, n0 + dn, replica=2, fast=fast)
    assert np.array_equal(ext.positions, full.positions)
    assert np.array_equal(base.positions, before)


def test_extension_by_zero_is_identity():
    cfg = _cfg(KernelSpec.cosine_diff(1, 1))
    s = simulate_sequential(cfg, N=6)
    assert np.array_equal(extend_particles(s, cfg, None, 0).positions, s.positions)


def test_extension_rejects_mismatches():
    cfg = _cfg(KernelSpec.cosine_diff(1, 1))
    s = simulate_sequential(cfg, WeightScheme.uniform(), 4)
    with pytest.raises(ValueError, match="scheme"):
        extend_particles(s, cfg, WeightScheme.power(0.5), 2)
    with pytest.raises(ValueError, match="config"):
        extend_particles(s, cfg.with_(kernel=KernelSpec.cosine_diff(2, 1)), WeightScheme.uniform(), 2)
    with pytest.raises(ValueError, match="config or rng"):
        extend_particles(s, cfg, WeightScheme.uniform(), 2, rng=RngContract(99))
    with pytest.raises(ValueError):
        extend_particles(simulate_classical(cfg, 3), cfg, WeightScheme.uniform(), 1)


def test_extension_cost_is_linear():
    cfg = _cfg(KernelSpec.tanh_attract(1), n_steps=10)
    s = simulate_sequential(cfg, N=64, fast=False)
    assert s.kernel_evals == 10 * 64 * 63 // 2
    assert extend_particles(s, cfg, None, 1, fast=False).kernel_evals == 64 * 10


@pytest.mark.parametrize("kernel", [KernelSpec.cosine_diff(1.3, 0.7), KernelSpec.cosine_y(0.8)], ids=lambda k: k.kind)
@pytest.mark.parametrize("scheme", [WeightScheme.uniform(), WeightScheme.power(0.5, 1.0)], ids=str)
def test_trig_fast_path_matches_generic(kernel, scheme):
    cfg = _cfg(kernel, seed=5)
    a = simulate_sequential(cfg, scheme, 40, replica=4, fast=True).positions
    b = simulate_sequential(cfg, scheme, 40, replica=4, fast=False).positions
    assert np.max(np.abs(a - b)) <= 1e-12
    c = simulate_classical(cfg, 40, replica=4, fast=True).positions
    d = simulate_classical(cfg, 40, replica=4, fast=False).positions
    assert np.max(np.abs(c - d)) <= 1e-12


def test_replay_is_bit_exact():
    cfg = _cfg(KernelSpec.tanh_attract(1), seed=2**63 + 11)
    assert np.array_equal(simulate_sequential(cfg, N=12, replica=5).positions,
                          simulate_sequential(cfg, N=12, replica=5).positions)
    assert not np.array_equal(simulate_sequential(cfg, N=12, replica=5).positions,
                              simulate_sequential(cfg, N=12, replica=6).positions)


def test_classical_zero_kernel_variance():
    cfg = _cfg(KernelSpec.zero(), n_steps=10)
    xs = np.concatenate([simulate_classical(cfg, 1000, replica=r).positions[:, -1, 0] for r in range(10)])
    n = xs.size
    v = xs.var(ddof=1)
    se = math.sqrt(np.var((xs - xs.mean()) ** 2, ddof=1) / n)
    assert abs(v - 2.0) < 3 * se


@given(perm=st.permutations(list(range(6))))
@settings(max_examples=15)
def test_classical_exchangeability(perm):
    cfg = _cfg(KernelSpec.tanh_attract(1.0), n_steps=10, seed=3)
    base = simulate_classical(cfg, 6, particle_order=np.arange(6)).positions
    permuted = simulate_classical(cfg, 6, particle_order=np.array(perm)).positions
    assert np.allclose(permuted, base[list(perm)], rtol=0, atol=1e-13)


@pytest.mark.parametrize("kernel", GENERIC_KERNELS, ids=lambda k: k.kind)
def test_classical_compiled_matches_numpy_reference(kernel):
    cfg = _cfg(kernel, n_steps=15, seed=19)
    a = simulate_classical(cfg, 7, replica=2, fast=False).positions
    b = simulate_classical(cfg, 7, replica=2, particle_order=np.arange(7)).positions
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_two_dimensional_systems():
    sig = np.array([[1.0, 0.2], [0.0, 0.8]])
    cfg = Config(TimeGrid(1.0, 20), DiffusionSpec(sig), KernelSpec.bounded_gauss(1.0))
    a = simulate_classical(cfg, 5, replica=1).positions
    b = simulate_classical(cfg, 5, replica=1, particle_order=np.arange(5)).positions
    assert a.shape == (5, 21, 2) and np.allclose(a, b, rtol=0, atol=1e-12)
    s = simulate_sequential(cfg, N=6)
    assert np.array_equal(extend_particles(simulate_sequential(cfg, N=3), cfg, None, 3).positions, s.positions)
    one_seq = simulate_sequential(cfg, N=1, replica=4).positions
    one_cls = simulate_classical(cfg, 1, replica=4).positions
    assert np.array_equal(one_seq, one_cls)


def test_iid_zero_kernel_matches_classical_in_law():
    cfg = _cfg(KernelSpec.zero(), n_steps=20)
    sol = solve_nfp(cfg)
    iid = simulate_iid_limit(cfg, sol, 20_000).positions[:, -1, 0]
    assert abs(iid.mean()) < 3 * math.sqrt(2 / iid.size)
    assert iid.var(ddof=1) == pytest.approx(2.0, rel=0.04)


def test_iid_cosine_y_field_is_constant_in_x():
    cfg = _cfg(KernelSpec.cosine_y(1.0))
    sol = solve_nfp(cfg)
    xs = np.linspace(-5, 5, 41)
    for k in (0, 20, 40):
        v = sol.velocity_at(cfg.time.times[k], xs, k=k)
        assert np.ptp(v) <= 1e-12


def test_iid_marginal_matches_pde():
    cfg = Config.simple(KernelSpec.tanh_attract(1.0), n_steps=100, initial=InitialLaw.gaussian(0.5, 0.5))
    sol = solve_nfp(cfg)
    st_ = simulate_iid_limit(cfg, sol, 10_000)
    xs = np.sort(st_.positions[:, -1, 0])
    cdf = sol.cdf(cfg.time.n_steps, xs)
    emp = np.arange(1, xs.size + 1) / xs.size
    ks = max(np.max(emp - cdf), np.max(cdf - emp + 1 / xs.size))
    assert ks < 0.02
    assert st_.clamp_count == 0


def test_iid_clamps_are_counted():
    cfg = Config.simple(KernelSpec.tanh_attract(1.0), n_steps=20, initial=InitialLaw.gaussian(0.0, 0.01))
    with pytest.raises(ConfigError):
        solve_nfp(cfg.with_(pde=cfg.pde.__class__(n_cells=10, x_min=-0.1, x_max=0.1)))
    grid = Grid1D(-1.0, 1.0, 40)
    sol = solve_nfp(cfg, grid=grid)
    st_ = simulate_iid_limit(cfg, sol, 4000)
    x = np.abs(st_.positions[:, :-1, 0])
    # lookups past the outer cell centre are clamped
    assert np.sum(x > 1.0) <= st_.clamp_count <= np.sum(x > 1.0 - grid.dx / 2)
    assert st_.clamp_count > 0


def test_drift_mismatch_examples():
    cfg = _cfg(KernelSpec.cosine_diff(1, 1), seed=6)
    sol = solve_nfp(cfg)
    s = simulate_sequential(cfg, N=5)
    X = s.positions[:, :, 0]
    for k in (0, 17, 40):
        t = cfg.time.times[k]
        v = lambda x: math.cos(x) * sol.trig_c[k] + math.sin(x) * sol.trig_s[k]  # noqa: E731
        assert drift_mismatch(s, WeightScheme.uniform(), sol, 1, k).delta[0] == pytest.approx(-v(X[0, k]), abs=1e-14)
        d2 = drift_mismatch(s, WeightScheme.uniform(), sol, 2, k).delta[0]
        assert d2 == pytest.approx(math.cos(X[1, k] - X[0, k]) - v(X[1, k]), abs=1e-14)
        for i in range(1, 6):
            assert abs(drift_mismatch(s, WeightScheme.uniform(), sol, i, k).delta[0]) <= 2.0
        assert sol.velocity_at(t, X[0, k], k=k) == pytest.approx(v(X[0, k]), abs=1e-14)
    with pytest.raises(IndexError):
        drift_mismatch(s, WeightScheme.uniform(), sol, 6, 0)
    with pytest.raises(IndexError):
        drift_mismatch(s, WeightScheme.uniform(), sol, 1, 41)


def test_drift_mismatch_zero_kernel():
    cfg = _cfg(KernelSpec.zero())
    sol = solve_nfp(cfg)
    s = simulate_sequential(cfg, N=4)
    assert all(drift_mismatch(s, WeightScheme.uniform(), sol, i, k).delta[0] == 0.0
               for i in range(1, 5) for k in (0, 10, 40))


@pytest.mark.parametrize("kernel", [KernelSpec.tanh_attract(1.5), KernelSpec.bounded_gauss(1.0)], ids=lambda k: k.kind)
def test_interaction_drift_is_bounded(kernel):
    cfg = _cfg(kernel, n_steps=30)
    s = simulate_sequential(cfg, WeightScheme.power(0.5), 30, fast=False)
    X = s.positions[:, :, 0]
    dW = np.stack([O.normals(0, int(Tag.BM), 0, p, 30) for p in range(30)]) * math.sqrt(cfg.dt)
    drift = (X[:, 1:] - X[:, :-1] - dW) / cfg.dt
    assert np.max(np.abs(drift)) <= kernel.sup_norm() + 1e-9


def test_sequential_mean_tracks_pde_mean():
    cfg = Config.simple(KernelSpec.tanh_attract(1.0), n_steps=50, initial=InitialLaw.gaussian(0.3, 1.0))
    sol = solve_nfp(cfg)
    m = sol.mean(cfg.time.n_steps)
    xs = np.concatenate([simulate_sequential(cfg, N=512, replica=r).positions[:, -1, 0] for r in range(8)])
    assert abs(xs.mean() - m) < 3 * xs.std(ddof=1) / math.sqrt(xs.size)


def test_explosion_is_reported():
    from seqmv.model import DriftSpec

    big = DriftSpec("tabulated", [0.0, 5.0], [-1.0, 1.0], [[1.7e308, 1.7e308], [1.7e308, 1.7e308]], 1.7e308)
    cfg = _cfg(KernelSpec.zero(), n_steps=5, t_end=5.0).with_(drift=big)
    with pytest.raises(SimulationError, match="explosion"):
        simulate_sequential(cfg, N=2)


def test_dump_roundtrip_and_csv(tmp_path):
    cfg = _cfg(KernelSpec.cosine_diff(1, 1), n_steps=6, seed=2**64 - 1)
    s = simulate_sequential(cfg, N=3)
    s.dump(tmp_path / "t.bin")
    head, arr = TrajectoryStore.load_array(tmp_path / "t.bin")
    assert head == {"N": 3, "M": 6, "d": 1, "seed": 2**64 - 1}
    assert np.array_equal(arr, s.positions)
    raw = (tmp_path / "t.bin").read_bytes()
    assert raw[:4] == b"SQMV" and len(raw) == 4 + 32 + 8 * 3 * 7
    s.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "particle,k,t,x0" and len(lines) == 1 + 3 * 7
    assert float(lines[-1].split(",")[-1]) == s.positions[2, 6, 0]
