"""Numba-callable interaction kernels.

Kernels are identified by an integer code so that compiled loops can branch
on them without object dispatch.  Conventions for ``d > 1``: cosine, tanh
and cosine-y variants act componentwise, the Gaussian variant is radial.
"""

import math

from numba import njit

ZERO = 0
COSINE_DIFF = 1
TANH_ATTRACT = 2
BOUNDED_GAUSS = 3
COSINE_Y = 4

TRIG_CODES = (COSINE_DIFF, COSINE_Y)


@njit(inline="always")
def k1(code, a, w, x, y):
    """Scalar kernel K(x, y) for d = 1."""
    if code == COSINE_DIFF:
        return a * math.cos(w * (x - y))
    elif code == TANH_ATTRACT:
        return a * math.tanh(y - x)
    elif code == BOUNDED_GAUSS:
        z = y - x
        return a * z * math.exp(-0.5 * z * z)
    elif code == COSINE_Y:
        return a * math.cos(y)
    return 0.0


@njit(inline="always")
def kvec_add(code, a, w, x, y, weight, out):
    """out += weight * K(x, y) for vectors of length d."""
    d = x.shape[0]
    if code == BOUNDED_GAUSS:
        r2 = 0.0
        for c in range(d):
            z = y[c] - x[c]
            r2 += z * z
        g = a * math.exp(-0.5 * r2) * weight
        for c in range(d):
            out[c] += g * (y[c] - x[c])
    elif code != ZERO:
        for c in range(d):
            out[c] += weight * k1(code, a, w, x[c], y[c])
