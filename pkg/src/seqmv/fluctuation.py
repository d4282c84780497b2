"""Fluctuation fields eta^N = sqrt(N) (mu^N - rho), the limiting linear SPDE
with a switchable feedback factor, and a closed moment oracle for CosineY.

Feedback factors: 0 = frozen environment (i.i.d. copies), 1 = classical
mean-field system, 2 = sequential system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from . import _sim
from .model import Config, kernel_eval
from .particles import SimulationError, field_args, sim_args
from .pde import Grid1D
from .rng import RngContract, Tag, stream_normals

__all__ = [
    "TestFunction",
    "FluctuationSample",
    "SpdeResult",
    "project_fluctuation",
    "coefficient_sum",
    "eta0_covariance",
    "sample_eta0",
    "simulate_limit_spde",
    "closed_moment_oracle",
    "particle_trig_covariance",
    "fluctuation_discrimination",
    "z_distance",
]

_TEST_KINDS = ("one", "cos", "sin", "gauss_bump")


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    kind: str
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in _TEST_KINDS:
            raise ValueError(f"test function kind must be one of {list(_TEST_KINDS)}")
        if self.kind == "gauss_bump" and not self.width > 0:
            raise ValueError("gauss_bump width must be > 0")

    @classmethod
    def cos(cls):
        return cls("cos")

    @classmethod
    def sin(cls):
        return cls("sin")

    @classmethod
    def one(cls):
        return cls("one")

    @classmethod
    def gauss_bump(cls, center=0.0, width=1.0):
        return cls("gauss_bump", float(center), float(width))

    def __call__(self, x):
        x = np.asarray(x, float)
        if self.kind == "one":
            return np.ones_like(x)
        if self.kind == "cos":
            return np.cos(x)
        if self.kind == "sin":
            return np.sin(x)
        z = (x - self.center) / self.width
        return np.exp(-0.5 * z * z)

    def d1(self, x):
        x = np.asarray(x, float)
        if self.kind == "one":
            return np.zeros_like(x)
        if self.kind == "cos":
            return -np.sin(x)
        if self.kind == "sin":
            return np.cos(x)
        z = (x - self.center) / self.width
        return -z / self.width * np.exp(-0.5 * z * z)

    def d2(self, x):
        x = np.asarray(x, float)
        if self.kind == "one":
            return np.zeros_like(x)
        if self.kind == "cos":
            return -np.cos(x)
        if self.kind == "sin":
            return -np.sin(x)
        z = (x - self.center) / self.width
        return (z * z - 1.0) / self.width**2 * np.exp(-0.5 * z * z)

    @property
    def bounds(self) -> tuple[float, float, float]:
        """Sup norms of the function and its first two derivatives."""
        if self.kind == "one":
            return 1.0, 0.0, 0.0
        if self.kind in ("cos", "sin"):
            return 1.0, 1.0, 1.0
        return 1.0, math.exp(-0.5) / self.width, 1.0 / self.width**2


@dataclass(frozen=True)
class FluctuationSample:
    k: int
    values: np.ndarray
    N: int
    replica: int


def project_fluctuation(store, meanfield, phi_list, k: int) -> FluctuationSample:
    """<eta^N_{t_k}, phi> = sqrt(N) (mean phi(X^i_{t_k}) - <rho_{t_k}, phi>)."""
    N = store.n_particles
    x = store.positions[:, k, 0]
    vals = []
    for phi in phi_list:
        if phi.kind == "one":
            vals.append(0.0)  # both measures are probabilities
            continue
        vals.append(math.sqrt(N) * (float(np.mean(phi(x))) - meanfield.moment(k, phi)))
    return FluctuationSample(k, np.array(vals), N, store.replica)


def coefficient_sum(N: int) -> float:
    """(1/sqrt N) sum_{i=2}^N (i-1)^{-1/2}."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == 1:
        return 0.0
    return math.fsum(np.arange(1, N, dtype=float) ** -0.5) / math.sqrt(N)


def eta0_covariance(meanfield, phi_list, k: int = 0) -> np.ndarray:
    """Cov_{rho_k}(phi_a, phi_b) by quadrature on the PDE grid."""
    x = meanfield.grid.centers
    p = meanfield.density[k] * meanfield.grid.dx
    p = p / p.sum()
    F = np.stack([phi(x) for phi in phi_list])
    m = F @ p
    return (F * p) @ F.T - np.outer(m, m)


def _psd_factor(C: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (C + C.T))
    scale = max(1.0, float(np.max(np.abs(lam))))
    if lam.min() < -tol * scale * 1e3:
        raise ValueError(f"covariance not positive semidefinite (eigenvalue {lam.min():.3e})")
    lam = np.where(lam < tol * scale, 0.0, lam)
    return V * np.sqrt(lam)


def sample_eta0(meanfield, phi_list, rng: RngContract, n: int = 1, *, replica0: int = 0) -> np.ndarray:
    """``n`` draws of (<eta_0, phi>)_phi, shape (n, len(phi_list)).

    Eigenvalues below 1e-12 (relative) are treated as zero, so degenerate
    directions such as phi = 1 give exactly 0.
    """
    L = _psd_factor(eta0_covariance(meanfield, phi_list))
    P = len(phi_list)
    z = np.empty((n, P))
    for r in range(n):
        z[r] = rng.normals(replica0 + r, 0, Tag.ETA0, P)
    return z @ L.T


# ----------------------------------------------------------------- SPDE


@njit(cache=True)
def _spde_replica(seed, replica, M, sub, dt, dx, sigma, factor, code, a, rho, vfield, kmat,
                  cosx, proj, sqp, out, mass):
    """One replica of the grid SPDE; writes projections at each slice to out[k, :]."""
    n = rho.shape[1]
    P = proj.shape[0]
    e = np.empty(n)
    z = np.empty(n)
    stream_normals(seed, np.uint64(replica), np.uint64(0), np.uint64(7), 0, z)
    # multinomial-Gaussian initial field with p_j = rho_j dx
    s = 0.0
    for j in range(n):
        s += sqp[j] * z[j]
    for j in range(n):
        e[j] = (sqp[j] * z[j] - sqp[j] * sqp[j] * s) / dx
    flux = np.zeros(n + 1)
    xi = np.empty(n - 1)
    D = 0.5 * sigma * sigma
    ds = dt / sub
    lam = ds / dx
    nscale = sigma * math.sqrt(ds / dx)
    draw = 0
    for k in range(M + 1):
        tot = 0.0
        for j in range(n):
            tot += e[j]
        mass[k] = max(mass[k], abs(tot * dx))
        for q in range(P):
            acc = 0.0
            for j in range(n):
                acc += proj[q, j] * e[j]
            out[k, q] = acc * dx
        if k == M:
            break
        for _ in range(sub):
            # K * eta at faces
            keta = 0.0
            if code == 4:
                for j in range(n):
                    keta += cosx[j] * e[j]
                keta *= a * dx
            stream_normals(seed, np.uint64(replica), np.uint64(1), np.uint64(8), draw, xi)
            draw += n - 1
            for j in range(n - 1):
                rf = 0.5 * (rho[k, j] + rho[k, j + 1])
                u = 0.5 * (vfield[k, j] + vfield[k, j + 1])
                kf = keta
                if code != 4 and code != 0:
                    kf = 0.0
                    for i in range(n):
                        kf += kmat[j, i] * e[i]
                f = u * 0.5 * (e[j] + e[j + 1]) - D * (e[j + 1] - e[j]) / dx + factor * rf * kf
                flux[j + 1] = f * ds + nscale * math.sqrt(max(rf, 0.0)) * xi[j]
            for j in range(n):
                e[j] -= (flux[j + 1] - flux[j]) / dx
    return 0


@njit(cache=True, parallel=True)
def _spde_mc(seed, rep0, n_rep, M, sub, dt, dx, sigma, factor, code, a, rho, vfield, kmat, cosx,
             proj, sqp, out, mass):
    for r in prange(n_rep):
        _spde_replica(seed, rep0 + r, M, sub, dt, dx, sigma, factor, code, a, rho, vfield, kmat,
                      cosx, proj, sqp, out[r], mass[r])


@dataclass(frozen=True)
class SpdeResult:
    times: np.ndarray
    cov: np.ndarray  # (M+1, P, P)
    projections: np.ndarray  # (n_rep, M+1, P) at slice times
    factor: float
    mass_drift: float
    substeps: int

    def at(self, k: int = -1) -> np.ndarray:
        return self.cov[k]


def _coarse_density(meanfield, grid: Grid1D) -> np.ndarray:
    """Exact cell averages of the piecewise-constant PDE density on ``grid``."""
    M1 = meanfield.density.shape[0]
    out = np.empty((M1, grid.n_cells))
    for k in range(M1):
        cdf = meanfield.cdf(k, grid.edges)
        out[k] = np.diff(cdf) / grid.dx
    return out


def spde_grid(meanfield, dx: float = 0.1) -> Grid1D:
    g = meanfield.grid
    n = max(8, int(round((g.x_max - g.x_min) / dx)))
    return Grid1D(g.x_min, g.x_max, n)


def simulate_limit_spde(meanfield, grid: Grid1D | None, phi_list, factor: float, n_replicas: int,
                        rng: RngContract, *, substeps: int | None = None, first_replica: int = 0) -> SpdeResult:
    """Monte Carlo of the linear fluctuation SPDE on a cell grid.

    Fluxes at faces: diffusion, central transport by v, ``factor`` times
    rho (K * eta), and the conservative noise sigma sqrt(rho dt/dx) xi.
    ``eta_0`` is the grid Gaussian with the multinomial covariance of rho_0.
    """
    if factor not in (0, 1, 2):
        raise ValueError("feedback factor must be 0, 1 or 2")
    grid = grid or spde_grid(meanfield)
    kern = meanfield.kernel
    sigma = meanfield.sigma
    dx = grid.dx
    dt = meanfield.time.dt
    M = meanfield.time.n_steps
    rho = _coarse_density(meanfield, grid)
    xc = grid.centers
    vmax = kern.sup_norm()
    lim = min(0.4 * dx * dx / sigma**2, 0.4 * dx / vmax if vmax > 0 else math.inf)
    sub = substeps or max(1, int(math.ceil(dt / lim * (1 + 1e-12))))
    if dt / sub > lim * (1 + 1e-12):
        raise ValueError("SPDE CFL violated; increase substeps or coarsen the grid")
    if kern.is_trig and kern.kind == "cosine_y":
        vfield = np.repeat((kern.a * (rho @ np.cos(xc) * dx))[:, None], grid.n_cells, axis=1)
        kmat = np.zeros((1, 1))
    else:
        if kern.kind == "zero":
            kmat = np.zeros((1, 1))
            vfield = np.zeros_like(rho)
        else:
            faces = grid.edges[1:-1]
            kmat = np.ascontiguousarray(np.asarray(kernel_eval(kern, faces[:, None], xc[None, :])) * dx)
            km_c = np.asarray(kernel_eval(kern, xc[:, None], xc[None, :])) * dx
            vfield = rho @ km_c.T
    p = rho[0] * dx
    p = p / p.sum()
    sqp = np.sqrt(p)
    proj = np.ascontiguousarray(np.stack([phi(xc) for phi in phi_list]))
    P = proj.shape[0]
    out = np.zeros((n_replicas, M + 1, P))
    mass = np.zeros((n_replicas, M + 1))
    _spde_mc(rng.key, first_replica, n_replicas, M, sub, dt, dx, sigma, float(factor), kern.code,
             float(kern.a), np.ascontiguousarray(rho), np.ascontiguousarray(vfield), kmat,
             np.cos(xc), proj, sqp, out, mass)
    c = out - out.mean(axis=0)
    cov = np.einsum("rkp,rkq->kpq", c, c) / max(n_replicas - 1, 1)
    return SpdeResult(meanfield.times, cov, out, float(factor), float(mass.max()), sub)


def closed_moment_oracle(meanfield, factor: float) -> np.ndarray:
    """Covariance of (<eta,cos>, <eta,sin>) at every slice for CosineY(a).

    Testing the SPDE against cos and sin gives the closed linear system
    ``d m = A(t) m dt + dM`` with
    ``A = [[-s2/2 - F a S, -v], [v + F a C, -s2/2]]``, ``v = a C``,
    ``C = <rho,cos>``, ``S = <rho,sin>`` and noise covariance
    ``s2 [[<rho,sin^2>, -<rho,sin cos>], [-<rho,sin cos>, <rho,cos^2>]]``.
    The Lyapunov ODE is stepped with RK4, coefficients linear in time
    between slices.
    """
    kern = meanfield.kernel
    if kern.kind != "cosine_y":
        raise ValueError("the closed moment oracle needs the cosine_y kernel")
    a = kern.a
    s2 = meanfield.sigma**2
    C = meanfield.moments(np.cos)
    S = meanfield.moments(np.sin)
    ss = meanfield.moments(lambda x: np.sin(x) ** 2)
    cc = meanfield.moments(lambda x: np.cos(x) ** 2)
    sc = meanfield.moments(lambda x: np.sin(x) * np.cos(x))
    dt = meanfield.time.dt
    M = meanfield.time.n_steps

    def coeffs(k, lam):
        def lerp(arr):
            return arr[k] if lam == 0.0 else (1 - lam) * arr[k] + lam * arr[k + 1]

        c, s = lerp(C), lerp(S)
        v = a * c
        A = np.array([[-0.5 * s2 - factor * a * s, -v], [v + factor * a * c, -0.5 * s2]])
        Q = s2 * np.array([[lerp(ss), -lerp(sc)], [-lerp(sc), lerp(cc)]])
        return A, Q

    def rhs(k, lam, X):
        A, Q = coeffs(k, lam)
        return A @ X + X @ A.T + Q

    out = np.empty((M + 1, 2, 2))
    X = eta0_covariance(meanfield, [np.cos, np.sin])
    out[0] = X
    for k in range(M):
        k1 = rhs(k, 0.0, X)
        k2 = rhs(k, 0.5, X + 0.5 * dt * k1)
        k3 = rhs(k, 0.5, X + 0.5 * dt * k2)
        k4 = rhs(k, 1.0, X + dt * k3)
        X = X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = X
    return out


# ------------------------------------------------------------ discrimination


def _cov_with_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample covariance of (x, y) and delta-method SEs of (var_x, var_y, cov)."""
    n = samples.shape[0]
    c = samples - samples.mean(axis=0)
    prods = np.stack([c[:, 0] ** 2, c[:, 1] ** 2, c[:, 0] * c[:, 1]], axis=1)
    est = prods.sum(axis=0) / (n - 1)
    se = prods.std(axis=0, ddof=1) / math.sqrt(n)
    cov = np.array([[est[0], est[2]], [est[2], est[1]]])
    return cov, se


def z_distance(cov: np.ndarray, se: np.ndarray, pred: np.ndarray) -> float:
    """sqrt of the summed squared z-scores over (var_cos, var_sin, cov)."""
    d = np.array([cov[0, 0] - pred[0, 0], cov[1, 1] - pred[1, 1], cov[0, 1] - pred[0, 1]])
    return float(np.sqrt(np.sum((d / se) ** 2)))


def particle_trig_covariance(config: Config, meanfield, system: str, N_list, n_replicas: int,
                             rng: RngContract | None = None, *, k=None,
                             first_replica: int = 0, scheme=None) -> dict:
    """Per N: samples of (<eta^N_t, cos>, <eta^N_t, sin>).

    ``k`` is one slice index (default T), giving arrays of shape
    (n_replicas, 2), or a sequence of indices, giving (n_replicas, len(k), 2)
    from the same runs.
    """
    systems = {"sequential": 0, "classical": 1, "iid": 2}
    if system not in systems:
        raise ValueError(f"system must be one of {list(systems)}")
    if config.dim != 1:
        raise ValueError("fluctuation experiments are one-dimensional")
    rng = rng or config.rng
    cfg = config.with_(rng=rng)
    scheme = scheme or cfg.scheme
    a = sim_args(cfg)
    f = field_args(meanfield, cfg)
    n_list = np.asarray(sorted(int(n) for n in N_list), dtype=np.int64)
    single = k is None or np.ndim(k) == 0
    cols = np.atleast_1d(np.asarray(a["M"] if k is None else k, dtype=np.int64))
    if cols.min() < 0 or cols.max() > a["M"]:
        raise IndexError(f"slice indices must lie in 0..{a['M']}")
    out = np.zeros((n_replicas, n_list.size, cols.size, 2))
    status = np.full(n_replicas, -1, dtype=np.int64)
    clamps = np.zeros(n_replicas, dtype=np.int64)
    alpha = np.ascontiguousarray(scheme.alphas(int(n_list[-1])))
    _sim.mc_trig_projections(
        systems[system], n_replicas, first_replica, n_list, a["seed"], a["M"], a["dt"],
        float(cfg.diffusion.sigma[0, 0]), a["code"], a["a"], a["w"], cfg.kernel.is_trig, alpha,
        a["bm_sub"], a["law"], a["lp"], a["has_b"], a["bx"], a["bvals"], f["fmode"], f["fc"], f["fs"],
        f["vel"], f["fx0"], f["fdx"], f["flo"], f["fhi"], cols, out, status, clamps,
    )
    if np.any(status >= 0):
        raise SimulationError(f"non-finite position (explosion) in {system} replicas")
    means = np.array([[meanfield.moment(int(c), np.cos), meanfield.moment(int(c), np.sin)] for c in cols])
    res = {}
    for q, n in enumerate(n_list):
        eta = np.sqrt(n) * (out[:, q] / n - means)
        res[int(n)] = eta[:, 0] if single else eta
    return res


def fluctuation_discrimination(config: Config, meanfield, N_list, n_replicas: int,
                               rng: RngContract | None = None, *, systems=("sequential", "classical", "iid"),
                               oracle: dict | None = None, ladder=None) -> dict:
    """Compare particle covariances at T (largest N) with the factor 0/1/2 oracles.

    ``ladder`` adds slice indices at which each system's covariance is also
    recorded (same runs), as rows (t, var_cos, var_sin, cov, and their SEs).
    """
    if config.kernel.kind != "cosine_y":
        raise ValueError("discrimination needs the cosine_y kernel")
    oracle = oracle or {F: closed_moment_oracle(meanfield, F)[-1] for F in (0, 1, 2)}
    n_max = max(int(n) for n in N_list)
    M = config.time.n_steps
    cols = sorted({int(c) for c in (ladder or ())} | {M})
    times = meanfield.times
    expected = {"sequential": 2, "classical": 1, "iid": 0}
    report = {"N": n_max, "n_replicas": n_replicas,
              "oracle": {F: oracle[F].tolist() for F in oracle}, "systems": {}}
    for name in systems:
        eta = particle_trig_covariance(config, meanfield, name, [n_max], n_replicas, rng, k=cols)[n_max]
        path = []
        for c, k in enumerate(cols):
            cv, sv = _cov_with_se(eta[:, c])
            path.append([float(times[k]), cv[0, 0], cv[1, 1], cv[0, 1], *map(float, sv)])
        cov, se = _cov_with_se(eta[:, -1])
        z = {F: z_distance(cov, se, oracle[F]) for F in oracle}
        closest = min(z, key=z.get)
        others = [z[F] for F in z if F != expected[name]]
        report["systems"][name] = {
            "cov": cov.tolist(), "se": se.tolist(), "z": z, "closest": closest,
            "expected": expected[name], "pass": bool(z[expected[name]] < min(others)), "path": path,
        }
    return report
