"""Domain types shared by every simulator, and config validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Mapping

import numpy as np
from scipy.special import erf

from . import _kernels as _k
from .rng import RngContract, Tag, stream_normals, stream_uniforms
from .weights import WeightScheme

__all__ = [
    "ConfigError",
    "TimeGrid",
    "DiffusionSpec",
    "KernelSpec",
    "DriftSpec",
    "InitialLaw",
    "PdeOptions",
    "ExperimentParams",
    "Config",
    "kernel_eval",
    "kernel_convolve_measure",
    "validate_config",
]


class ConfigError(ValueError):
    """A configuration value violates a documented invariant."""


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ConfigError("time.t_end must be finite and > 0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError("time.n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.t_end
        return t

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_end, self.n_steps * factor)


@dataclass(frozen=True)
class DiffusionSpec:
    sigma: np.ndarray
    sigma_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if s.shape[0] != s.shape[1]:
            raise ConfigError("diffusion.sigma must be a square matrix")
        if not np.all(np.isfinite(s)):
            raise ConfigError("diffusion.sigma must be finite")
        if np.linalg.matrix_rank(s) < s.shape[0] or np.linalg.cond(s) > 1e12:
            raise ConfigError("sigma not invertible (condition number > 1e12)")
        inv = np.linalg.inv(s)
        if np.max(np.abs(s @ inv - np.eye(s.shape[0]))) > 1e-12:
            raise ConfigError("sigma not invertible to tolerance 1e-12")
        s.setflags(write=False)
        inv.setflags(write=False)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "sigma_inv", inv)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def inv_norm(self) -> float:
        return float(np.linalg.norm(self.sigma_inv, 2))

    @property
    def scalar(self) -> float:
        """sigma as a number; only meaningful for d = 1 or isotropic sigma."""
        s = self.sigma
        if not np.allclose(s, s[0, 0] * np.eye(s.shape[0]), rtol=0, atol=0):
            raise ConfigError("this operation needs an isotropic sigma")
        return float(s[0, 0])

    def kappa(self, kernel: "KernelSpec") -> float:
        return self.inv_norm**2 * kernel.sup_norm(self.dim) ** 2


_KERNEL_CODES = {
    "zero": _k.ZERO,
    "cosine_diff": _k.COSINE_DIFF,
    "tanh_attract": _k.TANH_ATTRACT,
    "bounded_gauss": _k.BOUNDED_GAUSS,
    "cosine_y": _k.COSINE_Y,
}


@dataclass(frozen=True)
class KernelSpec:
    """Bounded interaction kernel K(x, y).

    ``cosine_diff``: a cos(omega (x - y)); ``tanh_attract``: a tanh(y - x);
    ``bounded_gauss``: a (y - x) exp(-|y - x|^2 / 2); ``cosine_y``: a cos(y).
    """

    kind: str = "zero"
    a: float = 0.0
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in _KERNEL_CODES:
            raise ConfigError(
                f"kernel.kind {self.kind!r} is not valid; choose one of {sorted(_KERNEL_CODES)}"
            )
        if not (math.isfinite(self.a) and math.isfinite(self.omega)):
            raise ConfigError("kernel parameters must be finite")
        if self.kind == "zero":
            object.__setattr__(self, "a", 0.0)

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def cosine_diff(cls, a=1.0, omega=1.0):
        return cls("cosine_diff", float(a), float(omega))

    @classmethod
    def tanh_attract(cls, a=1.0):
        return cls("tanh_attract", float(a))

    @classmethod
    def bounded_gauss(cls, a=1.0):
        return cls("bounded_gauss", float(a))

    @classmethod
    def cosine_y(cls, a=1.0):
        return cls("cosine_y", float(a))

    @property
    def code(self) -> int:
        return _KERNEL_CODES[self.kind]

    @property
    def is_trig(self) -> bool:
        return self.code in _k.TRIG_CODES

    @property
    def freq(self) -> float:
        """Frequency of the trig fast path (cosine_y is fixed at 1)."""
        return 1.0 if self.kind == "cosine_y" else self.omega

    def sup_norm(self, dim: int = 1) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "bounded_gauss":
            return abs(self.a) * math.exp(-0.5)
        return abs(self.a) * math.sqrt(dim)


def kernel_eval(kernel: KernelSpec, x, y, dim: int = 1) -> np.ndarray | float:
    """K(x, y), broadcasting over leading axes.

    For ``dim > 1`` the last axis of ``x`` and ``y`` holds the components.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, kind = kernel.a, kernel.kind
    if kind == "zero":
        out = np.zeros(np.broadcast(x, y).shape)
    elif kind == "cosine_diff":
        out = a * np.cos(kernel.omega * (x - y))
    elif kind == "tanh_attract":
        out = a * np.tanh(y - x)
    elif kind == "cosine_y":
        out = a * np.cos(y) + 0.0 * x
    else:
        z = y - x
        r2 = np.sum(z * z, axis=-1, keepdims=True) if dim > 1 else z * z
        out = a * z * np.exp(-0.5 * r2)
    return float(out) if np.ndim(out) == 0 else out


def kernel_convolve_measure(kernel: KernelSpec, atoms, x, signed: bool = False, dim: int = 1):
    """(K * nu)(x) = sum_j w_j K(x, y_j) for nu = sum_j w_j delta_{y_j}.

    ``atoms`` is a sequence of ``(point, weight)`` pairs or a tuple
    ``(points, weights)`` of arrays.
    """
    if isinstance(atoms, tuple) and len(atoms) == 2 and np.ndim(atoms[1]) == 1:
        pts, w = np.asarray(atoms[0], float), np.asarray(atoms[1], float)
    else:
        pts = np.asarray([p for p, _ in atoms], float)
        w = np.asarray([wt for _, wt in atoms], float)
    if not np.all(np.isfinite(w)):
        raise ValueError("atom weights must be finite")
    if not signed and abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must sum to 1 (pass signed=True for signed measures)")
    vals = np.asarray(kernel_eval(kernel, np.asarray(x, float), pts, dim))
    if dim > 1:
        return np.tensordot(w, vals, axes=(0, 0))
    return float(np.dot(w, vals))


@dataclass(frozen=True)
class DriftSpec:
    """External drift b(t, x); ``tabulated`` is bilinear in (t, x), d = 1."""

    kind: str = "zero"
    times: np.ndarray | None = None
    xs: np.ndarray | None = None
    values: np.ndarray | None = None
    declared_sup: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "tabulated"):
            raise ConfigError("drift.kind must be one of ['tabulated', 'zero']")
        if self.kind == "tabulated":
            t = np.asarray(self.times, float)
            x = np.asarray(self.xs, float)
            v = np.asarray(self.values, float)
            if t.ndim != 1 or x.ndim != 1 or v.shape != (t.size, x.size):
                raise ConfigError("drift.values must have shape (len(times), len(x))")
            if t.size < 2 or x.size < 2 or np.any(np.diff(t) <= 0) or np.any(np.diff(x) <= 0):
                raise ConfigError("drift.times and drift.x must be strictly increasing (>= 2 points)")
            if not np.all(np.isfinite(v)):
                raise ConfigError("drift.values must be finite")
            if np.max(np.abs(v)) > self.declared_sup:
                raise ConfigError("drift.sup_norm must bound every tabulated value")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "xs", x)
            object.__setattr__(self, "values", v)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    @property
    def sup_norm(self) -> float:
        return 0.0 if self.is_zero else float(self.declared_sup)

    def evaluate(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.is_zero:
            return np.zeros_like(x)
        tt = np.clip(t, self.times[0], self.times[-1])
        j = int(np.clip(np.searchsorted(self.times, tt) - 1, 0, self.times.size - 2))
        lam = (tt - self.times[j]) / (self.times[j + 1] - self.times[j])
        row = (1 - lam) * self.values[j] + lam * self.values[j + 1]
        return np.interp(x, self.xs, row)

    def on_grid(self, times: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Table of b on a (time, x) grid; used by the compiled loops."""
        if self.is_zero:
            return np.zeros((len(times), len(xs)))
        return np.stack([self.evaluate(t, xs) for t in times])


_LAWS = ("gaussian", "uniform", "point")


@dataclass(frozen=True)
class InitialLaw:
    kind: str = "gaussian"
    mean: float = 0.0
    var: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in _LAWS:
            raise ConfigError(f"initial.kind must be one of {list(_LAWS)}")
        if self.kind == "gaussian" and not self.var > 0:
            raise ConfigError("initial.var must be > 0")
        if self.kind == "uniform" and not self.hi > self.lo:
            raise ConfigError("initial.hi must exceed initial.lo")

    @classmethod
    def gaussian(cls, mean=0.0, var=1.0):
        return cls("gaussian", mean=float(mean), var=float(var))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def point(cls, x0=0.0):
        return cls("point", x0=float(x0))

    @property
    def center(self) -> float:
        return {"gaussian": self.mean, "uniform": 0.5 * (self.lo + self.hi), "point": self.x0}[self.kind]

    @property
    def std(self) -> float:
        if self.kind == "gaussian":
            return math.sqrt(self.var)
        if self.kind == "uniform":
            return (self.hi - self.lo) / math.sqrt(12.0)
        return 0.0

    @property
    def code(self) -> int:
        return _LAWS.index(self.kind)

    @property
    def params(self) -> np.ndarray:
        if self.kind == "gaussian":
            return np.array([self.mean, math.sqrt(self.var)])
        if self.kind == "uniform":
            return np.array([self.lo, self.hi])
        return np.array([self.x0, 0.0])

    def sample(self, rng: RngContract, replica: int, particle: int, dim: int = 1) -> np.ndarray:
        """Initial position of one particle, drawn from stream (replica, particle, INIT)."""
        out = np.empty(dim)
        if self.kind == "gaussian":
            stream_normals(rng.key, np.uint64(replica), np.uint64(particle), np.uint64(Tag.INIT), 0, out)
            return self.mean + math.sqrt(self.var) * out
        if self.kind == "uniform":
            stream_uniforms(rng.key, np.uint64(replica), np.uint64(particle), np.uint64(Tag.INIT), 0, out)
            return self.lo + (self.hi - self.lo) * out
        return np.full(dim, self.x0)

    def cdf(self, x):
        x = np.asarray(x, float)
        if self.kind == "gaussian":
            return 0.5 * (1.0 + erf((x - self.mean) / math.sqrt(2.0 * self.var)))
        if self.kind == "uniform":
            return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return (x >= self.x0).astype(float)

    def density(self, x):
        x = np.asarray(x, float)
        if self.kind == "gaussian":
            return np.exp(-((x - self.mean) ** 2) / (2 * self.var)) / math.sqrt(2 * math.pi * self.var)
        if self.kind == "uniform":
            return np.where((x >= self.lo) & (x <= self.hi), 1.0 / (self.hi - self.lo), 0.0)
        raise ValueError("a point mass has no density; use surrogate_for_grid")

    def surrogate_for_grid(self, dx: float) -> "InitialLaw":
        """Point masses are replaced by Gaussian(x0, (3 dx)^2) on a grid."""
        if self.kind == "point":
            return InitialLaw.gaussian(self.x0, (3.0 * dx) ** 2)
        return self

    def cell_averages(self, edges: np.ndarray) -> np.ndarray:
        """Exact cell averages over the given edges, renormalised to mass 1."""
        law = self.surrogate_for_grid(edges[1] - edges[0])
        mass = np.diff(law.cdf(edges))
        total = mass.sum()
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(
                f"initial law loses mass {1 - total:.2e} outside the PDE grid; widen the grid"
            )
        return mass / total / np.diff(edges)


@dataclass(frozen=True)
class PdeOptions:
    dx: float = 0.02
    n_cells: int | None = None
    x_min: float | None = None
    x_max: float | None = None
    substeps: int | None = None
    coverage_sd: float = 8.0


@dataclass(frozen=True)
class ExperimentParams:
    """Per-experiment knobs; every field has a documented default."""

    n_replicas: int | None = None
    i_list: tuple | None = None
    N_list: tuple | None = None
    N: int | None = None
    beta: float = 3.0
    r_list: tuple | None = None
    tail_fraction: float = 0.5
    spde_replicas: int | None = None
    spde_dx: float = 0.1
    i_max: int | None = None
    check_dt_halving: bool = False


@dataclass(frozen=True)
class Config:
    time: TimeGrid
    diffusion: DiffusionSpec
    kernel: KernelSpec
    drift: DriftSpec = DriftSpec()
    initial: InitialLaw = InitialLaw()
    rng: RngContract = RngContract()
    scheme: WeightScheme = WeightScheme()
    pde: PdeOptions = PdeOptions()
    experiment: ExperimentParams = ExperimentParams()

    @property
    def dim(self) -> int:
        return self.diffusion.dim

    @property
    def dt(self) -> float:
        return self.time.dt

    @property
    def sigma_inv(self) -> np.ndarray:
        return self.diffusion.sigma_inv

    @property
    def kappa(self) -> float:
        return self.diffusion.kappa(self.kernel)

    def with_(self, **changes) -> "Config":
        return replace(self, **changes)

    def identity(self) -> tuple:
        """Fields that determine particle dynamics (used for compatibility checks)."""
        return (
            self.time,
            tuple(self.diffusion.sigma.ravel()),
            self.kernel,
            self.drift.kind,
            self.initial,
        )

    @classmethod
    def simple(
        cls,
        kernel: KernelSpec | None = None,
        *,
        sigma=1.0,
        t_end=1.0,
        n_steps=200,
        initial: InitialLaw | None = None,
        seed=0,
        scheme: WeightScheme | None = None,
        **kw,
    ) -> "Config":
        """One-dimensional config from keyword arguments (tests and scripts)."""
        return cls(
            time=TimeGrid(float(t_end), int(n_steps)),
            diffusion=DiffusionSpec(np.atleast_2d(sigma)),
            kernel=kernel or KernelSpec.zero(),
            initial=initial or InitialLaw.gaussian(0.0, 1.0),
            rng=RngContract(seed),
            scheme=scheme or WeightScheme.uniform(),
            **kw,
        )


# ---------------------------------------------------------------- validation

_SECTIONS = {
    "time": {"t_end", "n_steps"},
    "diffusion": {"dim", "sigma"},
    "kernel": {"kind", "a", "omega"},
    "drift": {"kind", "times", "x", "values", "sup_norm"},
    "initial": {"kind", "mean", "var", "lo", "hi", "x0"},
    "rng": {"seed"},
    "scheme": {"kind", "r", "c", "alpha"},
    "pde": {f.name for f in fields(PdeOptions)},
    "experiment": {f.name for f in fields(ExperimentParams)},
}


def _strict(section: str, table: Mapping[str, Any]):
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    unknown = set(table) - _SECTIONS[section]
    if unknown:
        raise ConfigError(
            f"unknown key(s) in [{section}]: {sorted(unknown)}; allowed: {sorted(_SECTIONS[section])}"
        )


def _req(table, section, key):
    if key not in table:
        raise ConfigError(f"{section}.{key} required")
    return table[key]


def validate_config(raw: Mapping[str, Any]) -> Config:
    """Check a parsed config mapping and build a :class:`Config`.

    Unknown sections or keys are errors.  Derived quantities (dt, sigma
    inverse, kappa) are available on the result.
    """
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}; allowed: {sorted(_SECTIONS)}")
    if "time" not in raw:
        raise ConfigError("time.t_end required")
    for name, table in raw.items():
        _strict(name, table)

    t = raw["time"]
    time = TimeGrid(float(_req(t, "time", "t_end")), int(_req(t, "time", "n_steps")))

    dsec = raw.get("diffusion", {})
    dim = int(dsec.get("dim", 1))
    if dim not in (1, 2):
        raise ConfigError("diffusion.dim must be 1 or 2")
    sig = dsec.get("sigma", 1.0)
    sig = np.asarray(sig, dtype=float)
    if sig.ndim == 0:
        sig = float(sig) * np.eye(dim)
    if sig.shape != (dim, dim):
        raise ConfigError(f"diffusion.sigma must be a scalar or a {dim}x{dim} matrix")
    diffusion = DiffusionSpec(sig)

    ksec = raw.get("kernel", {"kind": "zero"})
    kernel = KernelSpec(
        str(_req(ksec, "kernel", "kind")), float(ksec.get("a", 1.0)), float(ksec.get("omega", 1.0))
    )

    dr = raw.get("drift", {"kind": "zero"})
    dkind = str(dr.get("kind", "zero"))
    if dkind == "tabulated":
        if dim != 1:
            raise ConfigError("tabulated drift is only supported for dim = 1")
        drift = DriftSpec(
            "tabulated",
            _req(dr, "drift", "times"),
            _req(dr, "drift", "x"),
            _req(dr, "drift", "values"),
            float(_req(dr, "drift", "sup_norm")),
        )
    else:
        drift = DriftSpec(dkind)

    isec = raw.get("initial", {"kind": "gaussian"})
    ikind = str(isec.get("kind", "gaussian"))
    if ikind == "gaussian":
        initial = InitialLaw.gaussian(isec.get("mean", 0.0), isec.get("var", 1.0))
    elif ikind == "uniform":
        initial = InitialLaw.uniform(_req(isec, "initial", "lo"), _req(isec, "initial", "hi"))
    elif ikind == "point":
        initial = InitialLaw.point(isec.get("x0", 0.0))
    else:
        raise ConfigError(f"initial.kind must be one of {list(_LAWS)}")

    seed = int(raw.get("rng", {}).get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError("rng.seed must be an unsigned 64-bit integer")

    s = raw.get("scheme", {"kind": "uniform"})
    try:
        skind = str(s.get("kind", "uniform"))
        if skind == "power":
            scheme = WeightScheme.power(float(_req(s, "scheme", "r")), float(s.get("c", 1.0)))
        elif skind == "custom":
            scheme = WeightScheme.custom(_req(s, "scheme", "alpha"))
        else:
            scheme = WeightScheme(skind)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    pde = PdeOptions(**raw.get("pde", {}))
    if pde.n_cells is None and not pde.dx > 0:
        raise ConfigError("pde.dx must be > 0")
    ex = dict(raw.get("experiment", {}))
    for key in ("i_list", "N_list", "r_list"):
        if key in ex:
            ex[key] = tuple(ex[key])
    experiment = ExperimentParams(**ex)

    return Config(
        time=time,
        diffusion=diffusion,
        kernel=kernel,
        drift=drift,
        initial=initial,
        rng=RngContract(seed),
        scheme=scheme,
        pde=pde,
        experiment=experiment,
    )
