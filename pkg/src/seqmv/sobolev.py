"""Bessel-potential kernels and H^-beta quadratic forms.

With the Fourier convention ``G(x) = (2 pi)^-d int G^(xi) e^{i x xi} dxi`` and
``G^(xi) = (1 + |xi|^2)^-beta``, the squared H^-beta norm of a signed measure
nu is ``<nu, G * nu>``.  In d = 1, ``G_3(0) = 3/16``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.linalg import toeplitz
from scipy.special import jn_zeros, j0

from . import _sim
from .model import Config
from .particles import SimulationError, field_args, sim_args
from .rng import RngContract
from .weights import WeightScheme, weights_for

__all__ = [
    "BesselTable",
    "SignedMeasureRep",
    "tabulate_bessel",
    "matern_poly",
    "hminus_norm_sq",
    "density_convolution",
    "initial_self_energy",
    "initial_formula_check",
    "empirical_rate_experiment",
    "NormError",
]

_CLAMP_TOL = 1e-10


class NormError(ArithmeticError):
    pass


# ----------------------------------------------------------------- tabulation


def _g1(beta: float, r: float, epsabs: float, limit: int) -> float:
    f = lambda xi: (1.0 + xi * xi) ** (-beta)  # noqa: E731
    if r == 0.0:
        val, _ = integrate.quad(f, 0.0, np.inf, epsabs=epsabs, epsrel=0.0, limit=limit)
    else:
        val, _ = integrate.quad(f, 0.0, np.inf, weight="cos", wvar=r, epsabs=epsabs, limlst=limit)
    return val / math.pi


def _g2(beta: float, r: float, epsabs: float, n_zeros: int) -> float:
    # (1/2pi) int_0^inf (1+xi^2)^-beta J0(xi r) xi dxi, split at the zeros of J0
    f = lambda xi: (1.0 + xi * xi) ** (-beta) * j0(xi * r) * xi  # noqa: E731
    if r == 0.0:
        val, _ = integrate.quad(lambda xi: (1.0 + xi * xi) ** (-beta) * xi, 0.0, np.inf, epsabs=epsabs)
        return val / (2 * math.pi)
    # the alternating tail past the last zero X is bounded by the envelope
    # (1+X^2)^-beta sqrt(2X / (pi r)) times the half period pi / r
    tail = lambda X: (1.0 + X * X) ** (-beta) * math.sqrt(2 * X / (math.pi * r)) * math.pi / r  # noqa: E731
    n = n_zeros
    while tail(jn_zeros(0, n)[-1] / r) > epsabs:
        if n > 1 << 16:
            raise ArithmeticError(f"Hankel quadrature tail exceeds {epsabs:.1e} at r = {r}")
        n *= 2
    pts = np.concatenate([[0.0], jn_zeros(0, n) / r])
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        total += integrate.quad(f, lo, hi, epsabs=epsabs * 1e-3, epsrel=1e-13)[0]
    return total / (2 * math.pi)


def _tabulate(beta, dim, r, epsabs, level):
    # quad's roundoff warnings fire near the 1e-15 floor; accuracy is certified
    # by the two-level comparison in tabulate_bessel instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if dim == 1:
            return np.array([_g1(beta, float(x), epsabs, 50 * level) for x in r])
        return np.array([_g2(beta, float(x), epsabs, 200 * level) for x in r])


@dataclass(frozen=True)
class BesselTable:
    beta: float
    dim: int
    r: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    g0: float
    quad_error: float
    _spline: CubicSpline = field(repr=False, compare=False, default=None)

    @property
    def r_max(self) -> float:
        return float(self.r[-1])

    @property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0])

    def __call__(self, x) -> np.ndarray:
        """G(|x|); zero beyond r_max (where the kernel is below 1e-12)."""
        rr = np.abs(np.asarray(x, float))
        out = self._spline(np.minimum(rr, self.r_max))
        return np.where(rr > self.r_max, 0.0, out)

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.r, self.values]), delimiter=",",
                   header="r,G", comments="", fmt="%.17g")

    @property
    def is_integer_matern(self) -> bool:
        return self.dim == 1 and float(self.beta).is_integer()


def tabulate_bessel(beta: float, dim: int = 1, r_max: float = 40.0, n_points: int = 4001,
                    *, tol: float = 1e-8) -> BesselTable:
    """Radial table of G_beta on ``n_points`` equispaced radii in [0, r_max].

    Every value is computed twice, the second time with a tolerance 100x
    tighter and twice the subdivision budget; the largest disagreement is
    kept as ``quad_error`` and must stay below ``tol`` relative to G(0).
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if not beta > dim / 2 + 2:
        raise ValueError(f"beta must exceed d/2 + 2 = {dim / 2 + 2}")
    if r_max < 20:
        raise ValueError("r_max must be >= 20")
    r = np.linspace(0.0, r_max, n_points)
    coarse = _tabulate(beta, dim, r, 1e-13, 1)
    fine = _tabulate(beta, dim, r, 1e-15, 2)
    err = float(np.max(np.abs(fine - coarse)))
    if err > tol * fine[0]:
        raise ArithmeticError(f"quadrature did not converge (doubling changed values by {err:.2e})")
    spline = CubicSpline(r, fine, bc_type=((1, 0.0), "not-a-knot"))
    return BesselTable(float(beta), dim, r, fine, float(fine[0]), err, spline)


def matern_poly(beta: int) -> np.ndarray:
    """p with G_beta(r) = exp(-r) sum_m p[m] r^m in d = 1 (integer beta)."""
    b = int(beta)
    if b != beta or b < 1:
        raise ValueError("integer beta required")
    pre = 1.0 / (2.0 ** (2 * b - 1) * math.gamma(b))
    p = np.zeros(b)
    for k in range(b):
        m = b - 1 - k
        p[m] = pre * math.factorial(b - 1 + k) / (math.factorial(k) * math.factorial(b - 1 - k)) * 2.0**m
    return p


# ------------------------------------------------------------ compiled pieces


@njit(cache=True)
def _pair_sum_sorted(x, w, poly):
    """sum_{i,j} w_i w_j G(x_i - x_j) for sorted x, G(r) = e^-r P(r)."""
    n = x.shape[0]
    B = poly.shape[0]
    binom = np.zeros((B, B))
    for m in range(B):
        binom[m, 0] = 1.0
        for q in range(1, m + 1):
            binom[m, q] = binom[m - 1, q - 1] + (binom[m - 1, q] if q < m else 0.0)
    T = np.zeros(B)
    U = np.zeros(B)
    dp = np.empty(B)
    off = 0.0
    diag = 0.0
    for j in range(n):
        diag += w[j] * w[j]
        if j == 0:
            continue
        d = x[j] - x[j - 1]
        e = math.exp(-d)
        for q in range(B):
            U[q] = T[q]
        U[0] += w[j - 1]
        dp[0] = 1.0
        for q in range(1, B):
            dp[q] = dp[q - 1] * d
        acc = 0.0
        for m in range(B):
            s = 0.0
            for q in range(m + 1):
                s += binom[m, q] * dp[m - q] * U[q]
            T[m] = e * s
            acc += poly[m] * T[m]
        off += w[j] * acc
    return diag * poly[0] + 2.0 * off


@njit(cache=True)
def _cubic_interp(g, x0, dx, x):
    """4-point Lagrange interpolation on a uniform grid; clamps outside."""
    n = g.shape[0]
    s = (x - x0) / dx
    if s <= 0.0:
        return g[0], 1 if s < -0.5 else 0
    if s >= n - 1:
        return g[n - 1], 1 if s > n - 0.5 else 0
    j = int(s)
    if j < 1:
        j = 1
    if j > n - 3:
        j = n - 3
    t = s - j
    l0 = -t * (t - 1.0) * (t - 2.0) / 6.0
    l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    l2 = -(t + 1.0) * t * (t - 2.0) / 2.0
    l3 = (t + 1.0) * t * (t - 1.0) / 6.0
    return l0 * g[j - 1] + l1 * g[j] + l2 * g[j + 1] + l3 * g[j + 2], 0


@njit(cache=True)
def _interp_many(g, x0, dx, xs):
    s = 0.0
    for i in range(xs.shape[0]):
        v, _ = _cubic_interp(g, x0, dx, xs[i])
        s += v
    return s


@njit(cache=True)
def _sample_initial(seed, law, lp, out):
    buf = np.empty(1)
    for r in range(out.shape[0]):
        for i in range(out.shape[1]):
            _sim.init_position(seed, r, i, _sim.TAG_INIT, law, lp, 1, buf)
            out[r, i] = buf[0]


@njit(cache=True)
def _norm_slice(xs, ws, poly, gk, x0, dx, ak):
    """||sum w delta_x - rho_k||^2 with (G * rho_k) on the grid in gk."""
    order = np.argsort(xs)
    xo = xs[order]
    wo = ws[order]
    pair = _pair_sum_sorted(xo, wo, poly)
    cross = 0.0
    clamp = 0
    for i in range(xs.shape[0]):
        v, c = _cubic_interp(gk, x0, dx, xs[i])
        cross += ws[i] * v
        clamp += c
    return pair - 2.0 * cross + ak, clamp


@njit(cache=True, parallel=True)
def _mc_empirical(
    n_rep, rep0, n_list, W, seed, M, dt, sig, code, a, w, use_trig, alpha, bm_sub, law, lp,
    has_b, bx, bvals, poly, G, x0, dx, A, sup_out, min_out, clamp_out, status,
):
    n_max = n_list[n_list.shape[0] - 1]
    for r in prange(n_rep):
        paths = np.empty((n_max, M + 1))
        mc = np.zeros(M + 1)
        ms = np.zeros(M + 1)
        erow = np.zeros(n_max)
        cnt = np.zeros(1, dtype=np.int64)
        cl = np.zeros(1, dtype=np.int64)
        e1 = np.zeros(1)
        e2 = np.zeros((1, 2))
        status[r] = _sim.run_sequential_1d(
            0, n_max, rep0 + r, seed, _sim.TAG_INIT, _sim.TAG_BM, M, dt, sig, code, a, w, use_trig,
            alpha, paths, mc, ms, bm_sub, law, lp, has_b, bx, bvals,
            0, e1, e1, e2, 0.0, 1.0, 0.0, 0.0, cl, erow, cnt,
        )
        nclamp = 0
        for q in range(n_list.shape[0]):
            n = n_list[q]
            best = -np.inf
            low = np.inf
            for k in range(M + 1):
                val, c = _norm_slice(paths[:n, k].copy(), W[q, :n], poly, G[k], x0, dx, A[k])
                nclamp += c
                if val > best:
                    best = val
                if val < low:
                    low = val
            sup_out[r, q] = best
            min_out[r, q] = low
        clamp_out[r] = nclamp


# ----------------------------------------------------------- measure and norm


@dataclass
class SignedMeasureRep:
    """sum_i w_i delta_{x_i} plus ``density_weight`` times the slice ``k`` of a
    mean-field solution (if given)."""

    points: np.ndarray
    weights: np.ndarray
    meanfield: object = None
    k: int | None = None
    density_weight: float = -1.0
    t: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        self.weights = np.asarray(self.weights, float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        if self.weights.shape != (self.points.shape[0],):
            raise ValueError("one weight per atom required")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.points)):
            raise ValueError("atoms must be finite")
        if self.meanfield is not None and self.t is None:
            self.t = float(self.meanfield.times[self.k])

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def total_mass(self) -> float:
        m = float(self.weights.sum())
        if self.meanfield is not None:
            m += self.density_weight * float(self.meanfield.density[self.k].sum() * self.meanfield.grid.dx)
        return m

    @classmethod
    def empirical_minus_density(cls, points, meanfield, k, weights=None) -> "SignedMeasureRep":
        pts = np.asarray(points, float)
        n = pts.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
        rep = cls(pts, w, meanfield, k)
        if abs(rep.total_mass) > 1e-10:
            raise ValueError(f"signed mass {rep.total_mass:.2e} is not zero")
        return rep


def density_convolution(meanfield, table: BesselTable) -> tuple[np.ndarray, np.ndarray]:
    """(G * rho_k) at cell centres for every slice, and A_k = <rho_k, G * rho_k>."""
    g = meanfield.grid
    col = table(np.arange(g.n_cells) * g.dx)
    Gm = toeplitz(col) * g.dx
    conv = meanfield.density @ Gm  # Gm is symmetric
    A = np.einsum("kj,kj->k", conv, meanfield.density) * g.dx
    return np.ascontiguousarray(conv), A


def _finish(val: float, tol: float = _CLAMP_TOL) -> float:
    if val < 0.0:
        if val < -tol:
            raise NormError(f"negative H^-beta norm {val:.3e}; quadrature inconsistency")
        warnings.warn(f"clamping H^-beta norm {val:.2e} to 0", RuntimeWarning, stacklevel=3)
        return 0.0
    return val


def hminus_norm_sq(rep: SignedMeasureRep, table: BesselTable, *, fast: bool = False,
                   _conv: tuple | None = None) -> float:
    """sum_ij w_i w_j G(x_i - x_j) - 2 sum_i w_i (G * rho)(x_i) + <rho, G * rho>.

    The density part uses midpoint quadrature on the PDE grid.  ``fast`` uses
    the O(N log N) exact sorted recursion (integer beta, d = 1) for the
    atom-atom term instead of table lookups.
    """
    if rep.dim != table.dim:
        raise ValueError("measure and table dimensions differ")
    x, w = rep.points, rep.weights
    if fast and table.is_integer_matern:
        pair = _pair_sum_sorted(np.sort(x[:, 0]), w[np.argsort(x[:, 0])], matern_poly(int(table.beta)))
    else:
        diff = x[:, None, :] - x[None, :, :]
        rr = np.sqrt(np.sum(diff * diff, axis=-1))
        pair = float(w @ table(rr) @ w)
    if rep.meanfield is None:
        return _finish(float(pair))
    if rep.dim != 1:
        raise ValueError("density parts are one-dimensional")
    mf = rep.meanfield
    conv, A = _conv if _conv is not None else density_convolution(mf, table)
    g = mf.grid
    cross = 0.0
    for xi, wi in zip(x[:, 0], w):
        v, _ = _cubic_interp(conv[rep.k], g.centers[0], g.dx, float(xi))
        cross += wi * v
    c = rep.density_weight
    return _finish(float(pair + 2.0 * c * cross + c * c * A[rep.k]))


# ----------------------------------------------------------------- experiments


def initial_self_energy(config: Config, table: BesselTable, h: float = 0.02, width_sd: float = 12.0) -> float:
    """A = int int G(x - y) rho_0(x) rho_0(y) dx dy by the product trapezoid rule.

    The diagonal x = y falls on grid nodes, where G is smooth enough that the
    rule converges rapidly; see ``initial_formula_check`` for the doubling test.
    """
    law = config.initial.surrogate_for_grid(h)
    c, s = law.center, max(law.std, 1e-12)
    if law.kind == "uniform":
        xs = np.arange(law.lo, law.hi + h / 2, h)
        f = np.full(xs.size, 1.0 / (law.hi - law.lo))
        f[0] *= 0.5
        f[-1] *= 0.5
    else:
        n = int(math.ceil(width_sd * s / h))
        xs = c + h * np.arange(-n, n + 1)
        f = law.density(xs)
    ac = np.correlate(f, f, mode="full")  # lag -(n-1)..(n-1)
    lags = (np.arange(ac.size) - (f.size - 1)) * h
    return float(h * h * np.dot(ac, table(lags)))


def initial_formula_check(config: Config, table: BesselTable, N: int, n_replicas: int,
                          rng: RngContract | None = None) -> dict:
    """Monte Carlo of ||mu^N_0 - rho_0||^2 against (G(0) - A) / N."""
    rng = rng or config.rng
    A = initial_self_energy(config, table, 0.02)
    A2 = initial_self_energy(config, table, 0.01)
    law = config.initial
    if law.kind == "point":
        raise ValueError("initial_formula_check needs a law with a density")
    pts = np.empty((n_replicas, N))
    _sample_initial(rng.key, law.code, law.params, pts)
    poly = matern_poly(int(table.beta)) if table.is_integer_matern else None
    # G * rho_0 at the atoms by quadrature on a fine grid
    h = 0.01
    c, s = law.center, law.std
    lo = min(pts.min(), c - 12 * s) - 1
    hi = max(pts.max(), c + 12 * s) + 1
    xs = np.arange(lo, hi + h, h)
    dens = law.density(xs)
    wq = np.full(xs.size, h)
    wq[0] = wq[-1] = h / 2
    gconv = toeplitz(table(np.arange(xs.size) * h)) @ (dens * wq)
    vals = np.empty(n_replicas)
    wts = np.full(N, 1.0 / N)
    for r in range(n_replicas):
        x = pts[r]
        if poly is not None:
            pair = _pair_sum_sorted(np.sort(x), wts, poly)
        else:
            pair = float(wts @ table(x[:, None] - x[None, :]) @ wts)
        cross = _interp_many(gconv, xs[0], h, x) / N
        vals[r] = pair - 2 * cross + A2
    mc = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_replicas))
    exact = (table.g0 - A2) / N
    return {"mc_estimate": mc, "std_err": se, "exact_value": exact, "A": A2,
            "A_doubling_change": abs(A2 - A), "N": N, "n_replicas": n_replicas}


def empirical_rate_experiment(config: Config, scheme: WeightScheme, meanfield, table: BesselTable,
                              N_list, n_replicas: int, rng: RngContract | None = None,
                              *, bm_substeps: int = 1, fast: bool = True) -> dict:
    """E[sup_k ||mu^N_{t_k} - rho_{t_k}||^2] for each N (prefixes of one run)."""
    from .entropy import fit_rate

    if not config.drift.is_zero:
        raise ValueError("the empirical-rate experiment requires b = 0")
    if not table.is_integer_matern:
        raise ValueError("the experiment engine needs an integer-beta table in d = 1")
    rng = rng or config.rng
    cfg = config.with_(rng=rng)
    n_list = np.asarray(sorted(int(n) for n in N_list), dtype=np.int64)
    n_max = int(n_list[-1])
    W = np.zeros((n_list.size, n_max))
    for q, n in enumerate(n_list):
        W[q, :n] = weights_for(scheme, int(n)).weights
    a = sim_args(cfg, bm_substeps)
    field_args(meanfield, cfg)
    conv, A = density_convolution(meanfield, table)
    g = meanfield.grid
    sup = np.zeros((n_replicas, n_list.size))
    low = np.zeros((n_replicas, n_list.size))
    clamps = np.zeros(n_replicas, dtype=np.int64)
    status = np.full(n_replicas, -1, dtype=np.int64)
    _mc_empirical(
        n_replicas, 0, n_list, W, a["seed"], a["M"], a["dt"], float(cfg.diffusion.sigma[0, 0]),
        a["code"], a["a"], a["w"], fast and cfg.kernel.is_trig, np.ascontiguousarray(scheme.alphas(n_max)),
        a["bm_sub"], a["law"], a["lp"], a["has_b"], a["bx"], a["bvals"], matern_poly(int(table.beta)),
        conv, float(g.centers[0]), float(g.dx), A, sup, low, clamps, status,
    )
    if np.any(status >= 0):
        raise SimulationError("non-finite position (explosion) in the empirical-rate experiment")
    lookups = n_replicas * int(n_list.sum()) * (a["M"] + 1)
    if clamps.sum() > 1e-3 * lookups:
        raise SimulationError(f"{clamps.sum()} atom lookups fell outside the PDE grid")
    if low.min() < -_CLAMP_TOL:
        raise NormError(f"negative H^-beta norm {low.min():.3e} encountered")
    means = sup.mean(axis=0)
    ses = sup.std(axis=0, ddof=1) / math.sqrt(n_replicas) if n_replicas > 1 else np.zeros_like(means)
    series = [(int(n), float(m), float(s)) for n, m, s in zip(n_list, means, ses)]
    fit = fit_rate([(n, m) for n, m, _ in series]) if n_list.size >= 3 else None
    return {"series": series, "fit": fit, "clamped_lookups": int(clamps.sum())}
