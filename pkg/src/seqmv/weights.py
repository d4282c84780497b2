"""Step-size schemes for the weighted sequential empirical measure.

The measure seen by particle ``i`` is built by the recursion
``mu^i = (1 - alpha_i) mu^{i-1} + alpha_i delta_{X^i}`` with ``alpha_1 = 1``.
Tables are stored at their own index: ``weights_for(scheme, i)`` describes
``mu^i``, so particle ``i`` reads the table at ``i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import zeta

__all__ = [
    "WeightScheme",
    "WeightTable",
    "weights_for",
    "theta_and_neff",
    "threshold_diagnostics",
    "limit_first_weight",
]

_KINDS = ("uniform", "power", "custom")


@dataclass(frozen=True)
class WeightScheme:
    kind: str = "uniform"
    r: float = 1.0
    c: float = 1.0
    alpha: tuple = ()
    max_index: int | None = None
    clamped: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"scheme.kind must be one of {list(_KINDS)}, got {self.kind!r}")
        if self.kind == "power":
            if not (self.r > 0 and self.c > 0):
                raise ValueError("power scheme needs r > 0 and c > 0")
            if self.c > 1:
                # indices whose raw step c*i^-r exceeds 1
                n = math.floor(self.c ** (1.0 / self.r))
                object.__setattr__(self, "clamped", tuple(range(2, n + 1)))
        if self.kind == "custom":
            al = tuple(float(v) for v in self.alpha)
            if not al or al[0] != 1.0:
                raise ValueError("custom scheme must start with alpha_1 = 1")
            if any(not (0.0 < v <= 1.0) for v in al):
                raise ValueError("custom alpha values must lie in (0, 1]")
            object.__setattr__(self, "alpha", al)
            if self.max_index is None or self.max_index > len(al):
                object.__setattr__(self, "max_index", len(al))

    @classmethod
    def uniform(cls) -> "WeightScheme":
        return cls("uniform")

    @classmethod
    def power(cls, r: float, c: float = 1.0) -> "WeightScheme":
        return cls("power", r=float(r), c=float(c))

    @classmethod
    def custom(cls, alpha) -> "WeightScheme":
        return cls("custom", alpha=tuple(alpha))

    @property
    def scheme_id(self) -> str:
        if self.kind == "uniform":
            return "uniform"
        if self.kind == "power":
            return f"power(r={self.r!r},c={self.c!r})"
        return f"custom(n={len(self.alpha)},h={hash(self.alpha) & 0xFFFFFFFF:08x})"

    def _check(self, i: int):
        if i < 1:
            raise ValueError(f"index must be >= 1, got {i}")
        if self.max_index is not None and i > self.max_index:
            raise ValueError(f"index {i} exceeds scheme max_index {self.max_index}")

    def alphas(self, n: int) -> np.ndarray:
        """alpha_1..alpha_n as an array (position k-1 holds alpha_k)."""
        self._check(max(n, 1))
        if self.kind == "uniform":
            a = 1.0 / np.arange(1, n + 1, dtype=float)
        elif self.kind == "power":
            k = np.arange(1, n + 1, dtype=float)
            a = np.minimum(1.0, self.c * k ** (-self.r))
        else:
            a = np.asarray(self.alpha[:n], dtype=float)
        if n:
            a[0] = 1.0
        return a


@dataclass(frozen=True)
class WeightTable:
    i: int
    weights: np.ndarray
    theta: float
    n_eff: float

    @property
    def first_weight(self) -> float:
        return float(self.weights[0])


def weights_for(scheme: WeightScheme, i: int) -> WeightTable:
    """Weights w_{i,k}, k = 1..i, of the measure mu^i."""
    scheme._check(i)
    if scheme.kind == "uniform":
        w = np.full(i, 1.0 / i)
        return WeightTable(i, w, 1.0 / i, float(i))
    alpha = scheme.alphas(i)
    w = np.empty(i)
    tail = 1.0
    for k in range(i - 1, -1, -1):
        w[k] = alpha[k] * tail
        tail *= 1.0 - alpha[k]
    theta = float(np.dot(w, w))
    return WeightTable(i, w, theta, 1.0 / theta)


def theta_and_neff(scheme: WeightScheme, i: int) -> tuple[float, float]:
    t = weights_for(scheme, i)
    return t.theta, t.n_eff


def threshold_diagnostics(scheme: WeightScheme, i_max: int) -> dict:
    """Series of first weight, theta and n_eff for i = 1..i_max.

    Uses the O(1) recursions ``w_{i,1} = (1 - alpha_i) w_{i-1,1}`` and
    ``theta_i = (1 - alpha_i)^2 theta_{i-1} + alpha_i^2``.
    """
    if i_max < 2:
        raise ValueError("i_max must be >= 2")
    alpha = scheme.alphas(i_max)
    one_minus = 1.0 - alpha
    one_minus[0] = 0.0
    first = np.cumprod(np.where(np.arange(i_max) == 0, 1.0, one_minus))
    theta = np.empty(i_max)
    th = 0.0
    for k in range(i_max):
        th = one_minus[k] ** 2 * th + alpha[k] ** 2
        theta[k] = th
    n_eff = 1.0 / theta
    if scheme.kind == "uniform":
        idx = np.arange(1, i_max + 1, dtype=float)
        first = 1.0 / idx
        theta = 1.0 / idx
        n_eff = idx
    return {
        "i": np.arange(1, i_max + 1),
        "first_weight": first,
        "theta": theta,
        "n_eff": n_eff,
    }


def limit_first_weight(scheme: WeightScheme, n_direct: int = 10_000) -> float:
    """c* = prod_{j>=2} (1 - alpha_j) for a power scheme.

    The product is taken directly up to ``n_direct``; the remaining tail of
    ``sum_j log(1 - c j^-r)`` is summed exactly as
    ``-sum_m c^m zeta(m r, n_direct + 1) / m``.  Returns 0 when r <= 1.
    """
    if scheme.kind != "power":
        raise ValueError("limit_first_weight needs a power scheme")
    if scheme.r <= 1.0:
        return 0.0
    alpha = scheme.alphas(n_direct)
    if np.any(alpha[1:] >= 1.0):
        return 0.0
    log_head = float(np.sum(np.log1p(-alpha[1:])))
    x = scheme.c * (n_direct + 1) ** (-scheme.r)
    if x >= 1.0:
        raise ValueError("n_direct too small for the tail series")
    log_tail = 0.0
    m = 1
    while True:
        term = scheme.c**m * zeta(m * scheme.r, n_direct + 1) / m
        log_tail -= term
        if term < 1e-18 * max(1.0, abs(log_head)) or m > 200:
            break
        m += 1
    return math.exp(log_head + log_tail)
