"""Incremental relative entropies from the Girsanov energy identity.

For particle ``i`` the estimator is ``1/2 E sum_k |sigma^-1 Delta_i(t_k)|^2 dt``
with the left-endpoint sum that matches the Euler step, so it is the exact
relative entropy of the discretised chain.  Initial laws are i.i.d., so the
time-zero term vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _sim
from .model import Config
from .particles import SimulationError, field_args, sim_args
from .rng import RngContract, Tag
from .weights import WeightScheme

__all__ = [
    "EnergyEstimate",
    "RateFit",
    "IidBenchmark",
    "energy_matrix",
    "estimate_Ri",
    "estimate_R1",
    "estimate_global_entropy",
    "estimate_tail_entropy",
    "iid_benchmark",
    "cosine_y_variance_integral",
    "r1_quadrature",
    "fit_rate",
    "fit_linear",
]


@dataclass(frozen=True)
class EnergyEstimate:
    i: int
    estimate: float
    std_err: float
    n_replicas: int


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    x: tuple = field(default=(), repr=False)
    y: tuple = field(default=(), repr=False)

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "x": list(self.x), "y": list(self.y)}


@dataclass(frozen=True)
class IidBenchmark:
    estimates: list
    variance_integral: EnergyEstimate

    def scaled(self) -> list[tuple[int, float, float]]:
        """(i, (i-1) R_iid(i), its standard error)."""
        return [(e.i, (e.i - 1) * e.estimate, (e.i - 1) * e.std_err) for e in self.estimates]


def _mean_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.shape[0]
    m = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return m, se


def _require_1d(config: Config):
    if config.dim != 1:
        raise ValueError("energy estimators are implemented for d = 1")
    return float(config.diffusion.sigma[0, 0])


def energy_matrix(
    config: Config,
    scheme: WeightScheme,
    meanfield,
    N: int,
    n_replicas: int,
    rng: RngContract | None = None,
    *,
    bm_substeps: int = 1,
    first_replica: int = 0,
    fast: bool = True,
) -> np.ndarray:
    """Per-replica energies, shape (n_replicas, N); column i-1 is particle i."""
    sig = _require_1d(config)
    rng = rng or config.rng
    cfg = config.with_(rng=rng)
    a = sim_args(cfg, bm_substeps)
    f = field_args(meanfield, cfg)
    alpha = np.ascontiguousarray(scheme.alphas(N))
    energy = np.zeros((n_replicas, N))
    status = np.full(n_replicas, -1, dtype=np.int64)
    clamps = np.zeros(n_replicas, dtype=np.int64)
    _sim.mc_sequential_energy(
        n_replicas, first_replica, N, a["seed"], a["M"], a["dt"], sig, a["code"], a["a"], a["w"],
        fast and cfg.kernel.is_trig, alpha, a["bm_sub"], a["law"], a["lp"], a["has_b"], a["bx"],
        a["bvals"], f["fmode"], f["fc"], f["fs"], f["vel"], f["fx0"], f["fdx"], f["flo"], f["fhi"],
        energy, status, clamps,
    )
    if np.any(status >= 0):
        r = int(np.argmax(status >= 0))
        raise SimulationError(f"non-finite position (explosion) in replica {first_replica + r}")
    _check_clamps(clamps.sum(), n_replicas * N * a["M"], f)
    return energy


def _check_clamps(n_clamped: int, n_lookups: int, f: dict, limit: float = 1e-3):
    if f["fmode"] == _sim.FIELD_GRID and n_lookups and n_clamped > limit * n_lookups:
        raise SimulationError(
            f"{n_clamped} of {n_lookups} velocity lookups fell outside the PDE grid; widen the grid"
        )


def _check_meanfield(config: Config, meanfield):
    if meanfield is None:
        raise ValueError("a mean-field solution is required")
    field_args(meanfield, config)
    if not math.isclose(meanfield.sigma, float(config.diffusion.sigma[0, 0]), rel_tol=0, abs_tol=0):
        raise ValueError("meanfield was solved with a different sigma")


def estimate_Ri(config, scheme, meanfield, i_list, n_replicas, rng=None, *, bm_substeps=1,
                energies: np.ndarray | None = None) -> list[EnergyEstimate]:
    """Mean and standard error of the energy of each particle in ``i_list``.

    One simulation per replica serves every ``i`` (common random numbers).
    """
    i_list = [int(i) for i in i_list]
    if min(i_list) < 1:
        raise ValueError("particle indices start at 1")
    _check_meanfield(config, meanfield)
    if energies is None:
        energies = energy_matrix(config, scheme, meanfield, max(i_list), n_replicas, rng,
                                 bm_substeps=bm_substeps)
    out = []
    for i in i_list:
        m, se = _mean_se(energies[:, i - 1])
        out.append(EnergyEstimate(i, m, se, energies.shape[0]))
    return out


def estimate_R1(config, meanfield, n_replicas, rng=None) -> EnergyEstimate:
    """Particle 1 feels no interaction, so Delta_1 = -v(X^1)."""
    return estimate_Ri(config, WeightScheme.uniform(), meanfield, [1], n_replicas, rng)[0]


def r1_quadrature(meanfield, config: Config) -> float:
    """1/2 sum_k v_k^2 dt / sigma^2 for a CosineY field (x-independent)."""
    if config.kernel.kind != "cosine_y":
        raise ValueError("closed R_1 value needs the cosine_y kernel")
    sig = float(config.diffusion.sigma[0, 0])
    v = config.kernel.a * meanfield.trig_c[:-1]
    return float(0.5 * np.sum(v * v) * config.time.dt / sig**2)


def estimate_global_entropy(config, scheme, meanfield, N, n_replicas, rng=None, *, ladder=None,
                            energies: np.ndarray | None = None) -> dict:
    """S_N = sum_{i<=N} R_i with shared replicas, plus the (N, S_N) ladder."""
    _check_meanfield(config, meanfield)
    if energies is None:
        energies = energy_matrix(config, scheme, meanfield, N, n_replicas, rng)
    per = [EnergyEstimate(i + 1, *_mean_se(energies[:, i]), energies.shape[0]) for i in range(N)]
    cum = np.cumsum(energies, axis=1)
    if ladder is None:
        ladder = [n for n in (2**j for j in range(1, 40)) if n <= N]
    series = []
    for n in ladder:
        m, se = _mean_se(cum[:, n - 1])
        series.append((int(n), m, se))
    S, S_se = _mean_se(cum[:, N - 1])
    return {"N": N, "S_N": S, "std_err": S_se, "per_increment": per, "ladder": series}


def estimate_tail_entropy(per_increment, N: int, m: int) -> float:
    """sum_{j=0}^{m-1} R_{N-j}; ``per_increment`` holds R_1..R_N (estimates or numbers)."""
    if not 0 <= m <= N:
        raise ValueError("need 0 <= m <= N")
    vals = [p.estimate if isinstance(p, EnergyEstimate) else float(p) for p in per_increment]
    if len(vals) < N:
        raise ValueError("per-increment list shorter than N")
    return float(sum(vals[N - 1 - j] for j in range(m)))


def iid_benchmark(config, meanfield, i_list, n_replicas, rng=None, *, bm_substeps=1) -> IidBenchmark:
    """Sampling-barrier benchmark on i.i.d. limit copies.

    For each replica, ``max(i_list)`` independent copies are simulated; the
    last one is evaluated against the empirical field of the first ``i-1``.
    The variance integral V is estimated from a separate independent pair, so
    ``(i-1) R_iid(i)`` and V are independent estimates of the same number.
    """
    sig = _require_1d(config)
    _check_meanfield(config, meanfield)
    i_arr = np.asarray(sorted(int(i) for i in i_list), dtype=np.int64)
    if i_arr[0] < 2:
        raise ValueError("benchmark indices must be >= 2")
    rng = rng or config.rng
    cfg = config.with_(rng=rng)
    a = sim_args(cfg, bm_substeps)
    f = field_args(meanfield, cfg)
    L = int(i_arr[-1])
    tags = np.array([Tag.INIT, Tag.BM, Tag.AUX_INIT, Tag.AUX_BM, Tag.AUX2_INIT, Tag.AUX2_BM], dtype=np.uint64)
    r_out = np.zeros((n_replicas, i_arr.size))
    v_out = np.zeros(n_replicas)
    status = np.full(n_replicas, -1, dtype=np.int64)
    clamps = np.zeros(n_replicas, dtype=np.int64)
    _sim.mc_iid_benchmark(
        n_replicas, 0, L, i_arr, a["seed"], tags, a["M"], a["dt"], sig, a["code"], a["a"], a["w"],
        a["bm_sub"], a["law"], a["lp"], a["has_b"], a["bx"], a["bvals"], f["fmode"], f["fc"], f["fs"],
        f["vel"], f["fx0"], f["fdx"], f["flo"], f["fhi"], r_out, v_out, status, clamps,
    )
    if np.any(status >= 0):
        raise SimulationError("non-finite position (explosion) in the i.i.d. benchmark")
    _check_clamps(clamps.sum(), n_replicas * (L + 2) * a["M"] * 2, f)
    order = {int(i): q for q, i in enumerate(i_arr)}
    est = [EnergyEstimate(int(i), *_mean_se(r_out[:, order[int(i)]]), n_replicas) for i in i_list]
    V = EnergyEstimate(0, *_mean_se(v_out), n_replicas)
    return IidBenchmark(est, V)


def cosine_y_variance_integral(meanfield, config: Config) -> float:
    """1/2 sum_k a^2 Var_{rho_k}(cos) dt / sigma^2 (left-endpoint rule)."""
    if config.kernel.kind != "cosine_y":
        raise ValueError("closed variance integral needs the cosine_y kernel")
    sig = float(config.diffusion.sigma[0, 0])
    c = meanfield.trig_c[:-1]
    c2 = meanfield.moments(lambda x: np.cos(x) ** 2)[:-1]
    a = config.kernel.a
    return float(0.5 * a * a * np.sum(c2 - c * c) * config.time.dt / sig**2)


def fit_rate(pairs) -> RateFit:
    """Least squares of log y on log x."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise ValueError("fit_rate needs at least 3 pairs")
    x = np.array([p[0] for p in pairs], float)
    y = np.array([p[1] for p in pairs], float)
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("fit_rate needs strictly positive values")
    return _lsq(np.log(x), np.log(y), x, y)


def fit_linear(x, y) -> RateFit:
    """Ordinary least squares of y on x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return _lsq(x, y, x, y)


def _lsq(u, v, x, y) -> RateFit:
    A = np.vstack([u, np.ones_like(u)]).T
    (slope, icpt), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - (slope * u + icpt)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    r2 = min(1.0, max(0.0, r2))
    return RateFit(float(slope), float(icpt), r2, tuple(map(float, x)), tuple(map(float, y)))
