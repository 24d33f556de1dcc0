"""Hot loop for the harmonic measure flow, jitted with numba.

The recursion X_n = X_{n-1} + gamma_tilde(X_{n-1} - theta_n) is inherently
sequential, so the per-step displacement is evaluated in scalar form here;
everything around it (sampling, drift sums, snapshot extraction) is
vectorised per chunk at the numpy level.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_NEAR_HALF = 1e-4


@njit(cache=True, nogil=True)
def _gamma_tilde_scalar(a: float, ec: float, beta: float, y0: float) -> float:
    # a is the reduced angle in (-1/2, 1/2]
    if a == 0.5:
        return 0.0
    if a == 0.0:
        return y0
    sign = 1.0 if a > 0.0 else -1.0
    mag = a if a > 0.0 else -a
    if mag > 0.5 - _NEAR_HALF:
        m = 0.5 - mag
        u = math.tan(math.pi * m)
        inv_g = u / math.sqrt(ec + beta * u * u)
        return sign * (m - math.atan(inv_g) / math.pi)
    t = math.tan(math.pi * a)
    g = math.sqrt(ec * t * t + beta)
    return sign * math.atan(g) / math.pi - a


@njit(cache=True, nogil=True)
def advance_history(
    x: float, thetas: np.ndarray, ec: float, beta: float, y0: float, out: np.ndarray
) -> float:
    """Run len(thetas) steps from x, writing each new state into out."""
    for j in range(thetas.shape[0]):
        r = x - thetas[j]
        k = math.floor(r + 0.5)
        a = r - k
        if a == -0.5:
            a = 0.5
        x = x + _gamma_tilde_scalar(a, ec, beta, y0)
        out[j] = x
    return x
