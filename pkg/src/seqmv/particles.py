"""Particle simulators: sequential, classical mean-field, and i.i.d. limit copies."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _sim
from .model import Config, kernel_eval
from .rng import RngContract, Tag
from .weights import WeightScheme, weights_for

__all__ = [
    "SimulationError",
    "TrajectoryStore",
    "MismatchSample",
    "simulate_sequential",
    "extend_particles",
    "simulate_classical",
    "simulate_iid_limit",
    "drift_mismatch",
    "sim_args",
    "field_args",
]

_MAGIC = b"SQMV"


class SimulationError(RuntimeError):
    pass


@dataclass
class TrajectoryStore:
    """Particle paths on a shared time grid, ``positions[i, k, c]``.

    Append-only: ``extend_particles`` returns a new store whose leading rows
    are copies of this one.
    """

    kind: str
    config: Config
    scheme_id: str
    seed_record: RngContract
    replica: int
    positions: np.ndarray
    bm_substeps: int = 1
    kernel_evals: int = 0
    clamp_count: int = 0
    lookups: int = 0
    _trig: tuple | None = field(default=None, repr=False)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]

    @property
    def grid(self):
        return self.config.time

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def path(self, i: int) -> np.ndarray:
        """Path of 1-based particle ``i`` (shape (M+1, d))."""
        return self.positions[i - 1]

    def dump(self, path) -> None:
        """Binary dump: 'SQMV', then N, M, d, seed as little-endian u64, then f64 data."""
        N, M1, d = self.positions.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<4Q", N, M1 - 1, d, int(self.seed_record.master_seed)))
            fh.write(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())

    @staticmethod
    def load_array(path) -> tuple[dict, np.ndarray]:
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("not a trajectory dump")
            N, M, d, seed = struct.unpack("<4Q", fh.read(32))
            data = np.frombuffer(fh.read(), dtype="<f8")
        return {"N": N, "M": M, "d": d, "seed": seed}, data.reshape(N, M + 1, d).copy()

    def to_csv(self, path) -> None:
        times = self.config.time.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["particle", "k", "t"] + [f"x{c}" for c in range(self.dim)])
            for i in range(self.n_particles):
                for k, t in enumerate(times):
                    w.writerow([i + 1, k, repr(float(t))] + [repr(float(v)) for v in self.positions[i, k]])


@dataclass(frozen=True)
class MismatchSample:
    i: int
    k: int
    delta: np.ndarray


def sim_args(config: Config, bm_substeps: int = 1) -> dict:
    """Scalar and array arguments shared by every compiled loop."""
    times = config.time.times
    drift = config.drift
    if drift.is_zero:
        bx = np.zeros(2)
        bvals = np.zeros((1, 2))
    else:
        bx = drift.xs
        bvals = drift.on_grid(times, bx)
    return dict(
        seed=config.rng.key,
        M=config.time.n_steps,
        dt=config.time.dt,
        code=config.kernel.code,
        a=float(config.kernel.a),
        w=float(config.kernel.freq),
        bm_sub=int(bm_substeps),
        law=config.initial.code,
        lp=config.initial.params,
        has_b=not drift.is_zero,
        bx=bx,
        bvals=bvals,
    )


_EMPTY1 = np.zeros(1)
_EMPTY2 = np.zeros((1, 2))


def field_args(meanfield, config: Config) -> dict:
    """Mean-field velocity in the form the compiled loops read."""
    if meanfield is None:
        return dict(fmode=_sim.FIELD_NONE, fc=_EMPTY1, fs=_EMPTY1, vel=_EMPTY2,
                    fx0=0.0, fdx=1.0, flo=0.0, fhi=0.0)
    if meanfield.time.n_steps != config.time.n_steps or meanfield.time.t_end != config.time.t_end:
        raise ValueError("meanfield time grid does not match the config")
    if meanfield.kernel != config.kernel:
        raise ValueError("meanfield was solved for a different kernel")
    g = meanfield.grid
    if config.kernel.is_trig:
        return dict(fmode=_sim.FIELD_TRIG, fc=meanfield.trig_c, fs=meanfield.trig_s, vel=_EMPTY2,
                    fx0=g.centers[0], fdx=g.dx, flo=g.x_min, fhi=g.x_max)
    return dict(fmode=_sim.FIELD_GRID, fc=_EMPTY1, fs=_EMPTY1, vel=meanfield.velocity,
                fx0=g.centers[0], fdx=g.dx, flo=g.x_min, fhi=g.x_max)


def _use_trig(config: Config, fast: bool) -> bool:
    return fast and config.kernel.is_trig


def _alpha(scheme: WeightScheme, n: int) -> np.ndarray:
    return np.ascontiguousarray(scheme.alphas(max(n, 1)))


def _check_1d_sigma(config: Config) -> float:
    return float(config.diffusion.sigma[0, 0])


def _run_seq(config, scheme, store_pos, p0, p1, replica, fast, bm_sub, meanfield, trig_state):
    a = sim_args(config, bm_sub)
    alpha = _alpha(scheme, p1)
    counts = np.zeros(1, dtype=np.int64)
    tag_i, tag_b = np.uint64(Tag.INIT), np.uint64(Tag.BM)
    if config.dim == 1:
        paths = store_pos[:, :, 0]
        use_trig = _use_trig(config, fast)
        mc, ms = trig_state
        f = field_args(meanfield, config)
        clamps = np.zeros(1, dtype=np.int64)
        energy = np.zeros(p1)
        bad = _sim.run_sequential_1d(
            p0, p1, replica, a["seed"], tag_i, tag_b, a["M"], a["dt"], _check_1d_sigma(config),
            a["code"], a["a"], a["w"], use_trig, alpha, paths, mc, ms, a["bm_sub"], a["law"], a["lp"],
            a["has_b"], a["bx"], a["bvals"], f["fmode"], f["fc"], f["fs"], f["vel"], f["fx0"], f["fdx"],
            f["flo"], f["fhi"], clamps, energy, counts,
        )
    else:
        if not config.drift.is_zero:
            raise ValueError("tabulated drift is only supported in d = 1")
        bad = _sim.run_sequential_nd(
            p0, p1, replica, a["seed"], tag_i, tag_b, a["M"], a["dt"], np.ascontiguousarray(config.diffusion.sigma),
            a["code"], a["a"], a["w"], alpha, store_pos, a["bm_sub"], a["law"], a["lp"], counts,
        )
    if bad >= 0:
        raise SimulationError(f"non-finite position (explosion) for particle {bad + 1}, replica {replica}")
    return int(counts[0])


def simulate_sequential(
    config: Config,
    scheme: WeightScheme | None = None,
    N: int = 1,
    rng: RngContract | None = None,
    *,
    replica: int = 0,
    fast: bool = True,
    bm_substeps: int = 1,
) -> TrajectoryStore:
    """Euler-Maruyama paths of the sequential system.

    Particle ``i`` feels ``sum_{j<i} w_{i-1,j} K(X^i, X^j)`` at the same time
    index; particle 1 feels the drift ``b`` only.  ``fast`` enables the O(N)
    trigonometric running-sum path for the cosine kernels.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    scheme = scheme or config.scheme
    rng = rng or config.rng
    config = config.with_(rng=rng)
    M = config.time.n_steps
    pos = np.empty((N, M + 1, config.dim))
    trig = (np.zeros(M + 1), np.zeros(M + 1))
    evals = _run_seq(config, scheme, pos, 0, N, replica, fast, bm_substeps, None, trig)
    return TrajectoryStore("sequential", config, scheme.scheme_id, rng, replica, pos,
                           bm_substeps, evals, _trig=trig if config.dim == 1 else None)


def extend_particles(
    store: TrajectoryStore,
    config: Config,
    scheme: WeightScheme | None,
    delta_N: int,
    rng: RngContract | None = None,
    *,
    fast: bool = True,
) -> TrajectoryStore:
    """Append ``delta_N`` particles; existing rows are copied unchanged."""
    scheme = scheme or config.scheme
    rng = rng or store.seed_record
    if store.kind != "sequential":
        raise ValueError("only sequential stores can be extended")
    if scheme.scheme_id != store.scheme_id:
        raise ValueError(f"scheme mismatch: store used {store.scheme_id}, got {scheme.scheme_id}")
    if config.with_(rng=rng).identity() != store.config.identity() or rng != store.seed_record:
        raise ValueError("config or rng does not match the one the store was generated with")
    if delta_N < 0:
        raise ValueError("delta_N must be >= 0")
    N0 = store.n_particles
    N1 = N0 + delta_N
    M = config.time.n_steps
    pos = np.empty((N1, M + 1, store.dim))
    pos[:N0] = store.positions
    if store.dim == 1:
        mc, ms = np.zeros(M + 1), np.zeros(M + 1)
        if _use_trig(config, fast):
            _sim.rebuild_trig(_alpha(scheme, N0), N0, float(config.kernel.freq), pos[:, :, 0], mc, ms)
        trig = (mc, ms)
    else:
        trig = None
    evals = 0
    if delta_N:
        evals = _run_seq(store.config, scheme, pos, N0, N1, store.replica, fast, store.bm_substeps, None, trig)
    return TrajectoryStore("sequential", store.config, store.scheme_id, rng, store.replica, pos,
                           store.bm_substeps, evals, _trig=trig)


def simulate_classical(
    config: Config,
    N: int,
    rng: RngContract | None = None,
    *,
    replica: int = 0,
    fast: bool = True,
    bm_substeps: int = 1,
    particle_order: np.ndarray | None = None,
) -> TrajectoryStore:
    """Fully coupled mean-field system; the drift of each particle uses mu^N
    over all N particles including itself.

    ``particle_order`` relabels streams: row ``p`` uses the streams of
    particle ``particle_order[p]`` (exchangeability checks).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = rng or config.rng
    config = config.with_(rng=rng)
    a = sim_args(config, bm_substeps)
    M = a["M"]
    counts = np.zeros(1, dtype=np.int64)
    tag_i, tag_b = np.uint64(Tag.INIT), np.uint64(Tag.BM)
    pos = np.empty((N, M + 1, config.dim))
    if particle_order is not None:
        order = np.asarray(particle_order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(N)):
            raise ValueError("particle_order must be a permutation of range(N)")
        return _classical_permuted(config, N, order, replica, fast, bm_substeps)
    if config.dim == 1:
        bad = _sim.run_classical_1d(
            N, replica, a["seed"], tag_i, tag_b, M, a["dt"], _check_1d_sigma(config), a["code"], a["a"],
            a["w"], _use_trig(config, fast), pos[:, :, 0], a["bm_sub"], a["law"], a["lp"],
            a["has_b"], a["bx"], a["bvals"], counts,
        )
    else:
        bad = _sim.run_classical_nd(
            N, replica, a["seed"], tag_i, tag_b, M, a["dt"], np.ascontiguousarray(config.diffusion.sigma),
            a["code"], a["a"], a["w"], pos, a["bm_sub"], a["law"], a["lp"], counts,
        )
    if bad >= 0:
        raise SimulationError(f"non-finite position (explosion) for particle {bad + 1}, replica {replica}")
    return TrajectoryStore("classical", config, "classical", rng, replica, pos, bm_substeps, int(counts[0]))


def _classical_permuted(config, N, order, replica, fast, bm_substeps):
    # Reference stepper in numpy: row p draws from the streams of order[p].
    rng = config.rng
    M = config.time.n_steps
    dt = config.time.dt
    sig = config.diffusion.sigma
    d = config.dim
    x = np.stack([config.initial.sample(rng, replica, int(q), d) for q in order])
    z = np.stack([rng.normals(replica, int(q), Tag.BM, M * bm_substeps * d) for q in order])
    z = z.reshape(N, M, bm_substeps, d).sum(axis=2) * np.sqrt(dt / bm_substeps)
    pos = np.empty((N, M + 1, d))
    pos[:, 0] = x
    for k in range(M):
        xs = pos[:, k]
        pair = kernel_eval(config.kernel, xs[:, 0, None] if d == 1 else xs[:, None, :],
                           xs[None, :, 0] if d == 1 else xs[None, :, :], d)
        inter = np.asarray(pair).mean(axis=1)
        if d == 1:
            inter = inter[:, None]
        b = config.drift.evaluate(config.time.times[k], xs[:, 0])[:, None] if d == 1 else 0.0
        pos[:, k + 1] = xs + (b + inter) * dt + z[:, k] @ sig.T
    return TrajectoryStore("classical", config, "classical", rng, replica, pos, bm_substeps)


def simulate_iid_limit(
    config: Config,
    meanfield,
    N: int,
    rng: RngContract | None = None,
    *,
    replica: int = 0,
    bm_substeps: int = 1,
    tags: tuple[int, int] = (Tag.INIT, Tag.BM),
) -> TrajectoryStore:
    """N independent copies of the limit diffusion in the frozen field v_t."""
    if config.dim != 1:
        raise ValueError("i.i.d. limit copies need the 1-D mean-field solver")
    rng = rng or config.rng
    config = config.with_(rng=rng)
    a = sim_args(config, bm_substeps)
    f = field_args(meanfield, config)
    pos = np.empty((N, a["M"] + 1, 1))
    clamps = np.zeros(1, dtype=np.int64)
    bad = _sim.run_iid_1d(
        0, N, replica, a["seed"], np.uint64(tags[0]), np.uint64(tags[1]), a["M"], a["dt"],
        _check_1d_sigma(config), a["code"], a["a"], a["w"], pos[:, :, 0], a["bm_sub"], a["law"], a["lp"],
        a["has_b"], a["bx"], a["bvals"], f["fmode"], f["fc"], f["fs"], f["vel"], f["fx0"], f["fdx"],
        f["flo"], f["fhi"], clamps,
    )
    if bad >= 0:
        raise SimulationError(f"non-finite position (explosion) for particle {bad + 1}, replica {replica}")
    lookups = N * a["M"] if f["fmode"] == _sim.FIELD_GRID else 0
    return TrajectoryStore("iid", config, "iid", rng, replica, pos, bm_substeps,
                           clamp_count=int(clamps[0]), lookups=lookups)


def drift_mismatch(store: TrajectoryStore, scheme: WeightScheme, meanfield, i: int, k: int) -> MismatchSample:
    """Delta_i(t_k) = (K * mu^{i-1})(X^i) - v_{t_k}(X^i); Delta_1 = -v(X^1)."""
    N, M1, _ = store.positions.shape
    if not (1 <= i <= N) or not (0 <= k < M1):
        raise IndexError(f"(i={i}, k={k}) outside store with N={N}, M={M1 - 1}")
    if store.dim != 1:
        raise ValueError("drift_mismatch needs d = 1")
    cfg = store.config
    x = float(store.positions[i - 1, k, 0])
    v = float(meanfield.velocity_at(cfg.time.times[k], x, k=k)) if meanfield is not None else 0.0
    inter = 0.0
    if i > 1:
        tab = weights_for(scheme, i - 1)
        ys = store.positions[: i - 1, k, 0]
        inter = float(np.dot(tab.weights, kernel_eval(cfg.kernel, x, ys)))
    return MismatchSample(i, k, np.array([inter - v]))

