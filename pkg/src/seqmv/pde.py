"""Explicit finite-volume solver for the one-dimensional nonlinear Fokker-Planck
equation ``d_t rho = (sigma^2 / 2) rho'' - (rho (b + K * rho))'``.

Cell averages live on a uniform grid with no-flux walls.  Diffusion uses the
central difference, advection the first-order upwind flux with face velocity
equal to the mean of the two neighbouring cell-centre velocities.  The solver
substeps internally and keeps slices on the simulators' time grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _kernels as K
from .model import Config, ConfigError, KernelSpec, PdeOptions, TimeGrid, kernel_eval

__all__ = [
    "CflError",
    "Grid1D",
    "MeanFieldSolution",
    "solve_nfp",
    "density_at",
    "velocity_at",
    "velocity_regularity",
    "choose_substeps",
]

# positivity margin: sigma^2 dt/dx^2 + 2 U dt/dx must stay below this
_POSITIVITY = 0.9


class CflError(ConfigError):
    pass


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.n_cells >= 2):
            raise ConfigError("grid needs x_max > x_min and at least 2 cells")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.dx

    @staticmethod
    def required_halfwidth(config: Config, coverage_sd: float = 8.0) -> tuple[float, float]:
        """Centre and half-width that cover ``coverage_sd`` standard deviations at T."""
        T = config.time.t_end
        sig = config.diffusion.scalar
        law = config.initial
        sd_T = math.sqrt(law.std**2 + sig**2 * T)
        shift = (config.kernel.sup_norm() + config.drift.sup_norm) * T
        return law.center, coverage_sd * sd_T + shift

    @classmethod
    def for_config(cls, config: Config, options: PdeOptions | None = None) -> "Grid1D":
        opt = options or config.pde
        c, hw = cls.required_halfwidth(config, opt.coverage_sd)
        lo = c - hw if opt.x_min is None else opt.x_min
        hi = c + hw if opt.x_max is None else opt.x_max
        n = opt.n_cells or max(2, int(math.ceil((hi - lo) / opt.dx)))
        g = cls(float(lo), float(hi), int(n))
        g.validate_for(config, opt.coverage_sd)
        return g

    def validate_for(self, config: Config, coverage_sd: float = 8.0) -> None:
        c, _ = self.required_halfwidth(config, 0.0)
        T = config.time.t_end
        sd_T = math.sqrt(config.initial.std**2 + config.diffusion.scalar**2 * T)
        if self.x_min > c - coverage_sd * sd_T or self.x_max < c + coverage_sd * sd_T:
            raise ConfigError(
                f"PDE grid [{self.x_min}, {self.x_max}] covers fewer than {coverage_sd} "
                f"standard deviations ({sd_T:.4g}) around {c}"
            )


def choose_substeps(dt: float, dx: float, sigma: float, speed: float) -> int:
    """Smallest substep count meeting the CFL and positivity limits."""
    lim = min(0.4 * dx * dx / sigma**2 if sigma > 0 else math.inf,
              0.4 * dx / speed if speed > 0 else math.inf,
              _POSITIVITY / (sigma**2 / dx**2 + 2.0 * speed / dx))
    return max(1, int(math.ceil(dt / lim * (1.0 + 1e-12))))


def _check_cfl(dt_sub, dx, sigma, speed, n_steps, n_cells):
    ok_diff = dt_sub <= 0.4 * dx * dx / sigma**2
    ok_adv = speed == 0 or dt_sub <= 0.4 * dx / speed
    ok_pos = sigma**2 * dt_sub / dx**2 + 2 * speed * dt_sub / dx <= _POSITIVITY
    if not (ok_diff and ok_adv and ok_pos):
        need = choose_substeps(dt_sub, dx, sigma, speed)
        raise CflError(
            f"CFL violated (dt={dt_sub:.3g}, dx={dx:.3g}); use at least {need}x more time steps "
            f"(n_steps >= {n_steps * need}) or fewer cells (n_cells <= {int(n_cells / math.sqrt(need))})"
        )


@njit(cache=True)
def _velocity(code, a, w, rho, dx, cosx, sinx, kmat, out):
    """v at cell centres; returns the trig moments (C, S) when applicable."""
    n = rho.shape[0]
    C = 0.0
    S = 0.0
    if code == K.COSINE_DIFF or code == K.COSINE_Y:
        for j in range(n):
            C += cosx[j] * rho[j]
            S += sinx[j] * rho[j]
        C *= dx
        S *= dx
        if code == K.COSINE_Y:
            for j in range(n):
                out[j] = a * C
        else:
            for j in range(n):
                out[j] = a * (cosx[j] * C + sinx[j] * S)
    elif code == K.ZERO:
        out[:] = 0.0
    else:
        out[:] = np.dot(kmat, rho)
    return C, S


@njit(cache=True)
def _solve(rho0, M, sub, dt_sub, sigma, dx, code, a, w, cosx, sinx, kmat, bc,
           dens, vel, tc, ts, mass_err):
    n = rho0.shape[0]
    rho = rho0.copy()
    v = np.empty(n)
    flux = np.zeros(n + 1)
    D = 0.5 * sigma * sigma
    lam = dt_sub / dx
    for k in range(M + 1):
        C, S = _velocity(code, a, w, rho, dx, cosx, sinx, kmat, v)
        dens[k] = rho
        vel[k] = v
        tc[k] = C
        ts[k] = S
        m = 0.0
        for j in range(n):
            m += rho[j]
        mass_err[k] = abs(m * dx - 1.0)
        if k == M:
            break
        for s in range(sub):
            if s > 0:
                _velocity(code, a, w, rho, dx, cosx, sinx, kmat, v)
            for j in range(n - 1):
                u = 0.5 * (v[j] + v[j + 1]) + 0.5 * (bc[k, j] + bc[k, j + 1])
                adv = u * rho[j] if u > 0.0 else u * rho[j + 1]
                flux[j + 1] = adv - D * (rho[j + 1] - rho[j]) / dx
            for j in range(n):
                rho[j] -= lam * (flux[j + 1] - flux[j])
            for j in range(n):
                if rho[j] < 0.0:
                    return k
    return -1


@dataclass
class MeanFieldSolution:
    """Gridded rho(t_k, x_j) (cell averages) and v(t_k, x_j) = (K * rho)(x_j).

    ``trig_c``/``trig_s`` hold ``<rho_t, cos(w x)>`` and ``<rho_t, sin(w x)>``
    by midpoint quadrature (zero for non-trigonometric kernels).
    """

    grid: Grid1D
    time: TimeGrid
    kernel: KernelSpec
    sigma: float
    density: np.ndarray
    velocity: np.ndarray
    trig_c: np.ndarray
    trig_s: np.ndarray
    substeps: int
    mass_error: np.ndarray
    violations: int = field(default=0, compare=False)

    @property
    def times(self) -> np.ndarray:
        return self.time.times

    def slice_index(self, t: float) -> tuple[int, float]:
        M = self.time.n_steps
        s = min(max(t / self.time.dt, 0.0), M)
        r = round(s)
        if abs(s - r) < 1e-9:
            return int(r), 0.0
        k = min(int(s), M - 1)
        return k, s - k

    def density_at(self, t: float, x) -> np.ndarray:
        return density_at(self, t, x)

    def velocity_at(self, t: float, x, k: int | None = None) -> np.ndarray:
        return velocity_at(self, t, x, k)

    def moment(self, k: int, f) -> float:
        """Midpoint quadrature of ``f`` against the slice ``k``."""
        x = self.grid.centers
        return float(np.sum(f(x) * self.density[k]) * self.grid.dx)

    def moments(self, f) -> np.ndarray:
        fx = f(self.grid.centers)
        return self.density @ fx * self.grid.dx

    def mean(self, k: int) -> float:
        return self.moment(k, lambda x: x)

    def cdf(self, k: int, x) -> np.ndarray:
        """CDF of the piecewise-constant density of slice ``k``."""
        g = self.grid
        cm = np.concatenate([[0.0], np.cumsum(self.density[k]) * g.dx])
        return np.interp(np.asarray(x, float), g.edges, cm, left=0.0, right=cm[-1])

    def to_csv(self, path) -> None:
        x = self.grid.centers
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "rho", "v"])
            for k, t in enumerate(self.times):
                for j in range(x.size):
                    w.writerow([repr(float(t)), repr(float(x[j])), repr(float(self.density[k, j])),
                                repr(float(self.velocity[k, j]))])


def solve_nfp(config: Config, grid: Grid1D | None = None, *, substeps: int | None = None,
              fast: bool = True) -> MeanFieldSolution:
    """Solve on the config's time grid; slices are stored at every t_k.

    ``substeps`` defaults to the smallest count meeting the CFL limits
    (``dt <= 0.4 dx^2/sigma^2``, ``dt <= 0.4 dx/(|K| + |b|)`` and the
    positivity bound).  An explicit value that violates them raises
    ``CflError``.  ``fast=False`` forces the quadrature path for the
    trigonometric kernels.
    """
    if config.dim != 1:
        raise ConfigError("the mean-field solver is one-dimensional")
    grid = grid or Grid1D.for_config(config)
    sigma = config.diffusion.scalar
    if sigma <= 0:
        raise ConfigError("the solver needs sigma > 0")
    dx = grid.dx
    M = config.time.n_steps
    dt = config.time.dt
    speed = config.kernel.sup_norm() + config.drift.sup_norm
    sub = substeps if substeps is not None else config.pde.substeps
    if sub is None:
        sub = choose_substeps(dt, dx, sigma, speed)
    _check_cfl(dt / sub, dx, sigma, speed, M, grid.n_cells)

    xc = grid.centers
    rho0 = config.initial.cell_averages(grid.edges)
    kern = config.kernel
    code = kern.code
    w = float(kern.freq)
    if fast and kern.is_trig:
        kmat = np.zeros((1, 1))
    elif code == K.ZERO:
        kmat = np.zeros((1, 1))
    else:
        kmat = np.ascontiguousarray(np.asarray(kernel_eval(kern, xc[:, None], xc[None, :])) * dx)
        code = -1  # matrix path
    cosx = np.cos(w * xc)
    sinx = np.sin(w * xc)
    bc = config.drift.on_grid(config.time.times, xc)
    n = grid.n_cells
    dens = np.empty((M + 1, n))
    vel = np.empty((M + 1, n))
    tc = np.zeros(M + 1)
    ts = np.zeros(M + 1)
    merr = np.empty(M + 1)
    bad = _solve(rho0, M, sub, dt / sub, sigma, dx, code, float(kern.a), w,
                 cosx, sinx, kmat, bc, dens, vel, tc, ts, merr)
    if bad >= 0:
        raise CflError(f"negative density after step {bad}; the CFL guard failed")
    if kern.is_trig and not fast:
        tc = dens @ cosx * dx
        ts = dens @ sinx * dx
    return MeanFieldSolution(grid, config.time, kern, sigma, dens, vel, tc, ts, sub, merr)


def density_at(sol: MeanFieldSolution, t: float, x) -> np.ndarray:
    """Linear in t between slices and in x between cell centres; 0 off-grid."""
    x = np.asarray(x, float)
    k, lam = sol.slice_index(t)
    g = sol.grid
    row = (1 - lam) * sol.density[k] + lam * sol.density[k + 1] if lam else sol.density[k]
    val = np.interp(x, g.centers, row)
    return np.where((x < g.x_min) | (x > g.x_max), 0.0, val)


def velocity_at(sol: MeanFieldSolution, t: float, x, k: int | None = None) -> np.ndarray:
    """v_t(x).  Trigonometric kernels are evaluated from the stored moments,
    which is exact in x; others interpolate the grid and clamp off-grid
    queries to the edge value, counting each in ``sol.violations``."""
    x = np.asarray(x, float)
    if k is None:
        k, lam = sol.slice_index(t)
    else:
        lam = 0.0
    kern = sol.kernel
    g = sol.grid
    if kern.is_trig:
        C = sol.trig_c[k] if not lam else (1 - lam) * sol.trig_c[k] + lam * sol.trig_c[k + 1]
        if kern.kind == "cosine_y":
            return kern.a * C + 0.0 * x
        S = sol.trig_s[k] if not lam else (1 - lam) * sol.trig_s[k] + lam * sol.trig_s[k + 1]
        w = kern.freq
        return kern.a * (np.cos(w * x) * C + np.sin(w * x) * S)
    row = (1 - lam) * sol.velocity[k] + lam * sol.velocity[k + 1] if lam else sol.velocity[k]
    sol.violations += int(np.count_nonzero((x < g.x_min) | (x > g.x_max)))
    return np.interp(x, g.centers, row)


def velocity_regularity(sol: MeanFieldSolution, m: int) -> float:
    """max over orders 0..m of sup_{t,x} |d^j v / dx^j| by finite differences."""
    if not 0 <= m <= 4:
        raise ValueError("m must be in 0..4")
    v = sol.velocity
    best = float(np.max(np.abs(v)))
    for j in range(1, m + 1):
        d = np.diff(v, n=j, axis=1) / sol.grid.dx**j
        best = max(best, float(np.max(np.abs(d))))
    return best
