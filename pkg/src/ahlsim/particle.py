"""A single slit particle on the exterior unit disk.

The conformal map attaching a radial slit of length d at the point 1 is
the Joukowski conjugation f(z) = J_inv((1+beta) J(z) + beta) with
J(z) = (z + 1/z)/2 and beta = exp(c) - 1, where the capacity c and the
slit length d are related by c = log(1 + d^2 / (4(1+d))).

The boundary trace of the inverse map is the angle function gamma: the
point exp(2 pi i x) on the image circle pulls back to exp(2 pi i gamma(x)),
and gamma_tilde = gamma - id is the (period-1, mean-zero) one-step
displacement that drives the harmonic measure flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SlitParticle",
    "BranchError",
    "capacity_from_length",
    "length_from_capacity",
    "slit_map_eval",
    "slit_map_boundary",
    "slit_map_inverse",
    "rotated_particle_map",
    "boundary_angle_gamma",
    "gamma_tilde",
    "gamma_jump",
    "reduce_angle",
]

# switch to the complementary arctan form this close to the fixed point 1/2;
# inside the window the displacement is formed without any 0.5-magnitude
# intermediate, so it keeps full relative precision as it vanishes
_NEAR_HALF = 1e-4


class BranchError(ArithmeticError):
    """A computed image fell on the wrong side of the unit circle."""


def _require_positive_finite(value: float, name: str) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


def capacity_from_length(d: float) -> float:
    """Logarithmic capacity of a slit of length d > 0."""
    d = _require_positive_finite(d, "slit length")
    return math.log1p(d * d / (4.0 * (1.0 + d)))


def length_from_capacity(c: float) -> float:
    """Unique positive slit length with capacity c > 0.

    Solves d^2 = 4 (1+d) (e^c - 1); the positive root is
    d = 2 beta + 2 sqrt(beta e^c) with beta = e^c - 1.
    """
    c = _require_positive_finite(c, "capacity")
    beta = math.expm1(c)
    return 2.0 * beta + 2.0 * math.sqrt(beta * math.exp(c))


@dataclass(frozen=True)
class SlitParticle:
    """Slit particle, characterised by capacity c, length d and beta = e^c - 1."""

    capacity: float
    length: float
    beta: float

    @classmethod
    def from_capacity(cls, c: float) -> "SlitParticle":
        c = _require_positive_finite(c, "capacity")
        return cls(capacity=c, length=length_from_capacity(c), beta=math.expm1(c))

    @classmethod
    def from_length(cls, d: float) -> "SlitParticle":
        d = _require_positive_finite(d, "slit length")
        c = capacity_from_length(d)
        return cls(capacity=c, length=d, beta=math.expm1(c))

    def __post_init__(self) -> None:
        _require_positive_finite(self.capacity, "capacity")
        _require_positive_finite(self.length, "slit length")
        c_of_d = capacity_from_length(self.length)
        if abs(c_of_d - self.capacity) > 1e-12 * self.capacity:
            raise ValueError(
                f"inconsistent particle: capacity {self.capacity!r} vs "
                f"{c_of_d!r} implied by length {self.length!r}"
            )
        if abs(self.beta - math.expm1(self.capacity)) > 1e-14 * self.beta:
            raise ValueError("inconsistent particle: beta != exp(capacity) - 1")


def _joukowski(z: np.ndarray) -> np.ndarray:
    return 0.5 * (z + 1.0 / z)


def _joukowski_inv_exterior(w: np.ndarray) -> np.ndarray:
    # principal square roots applied factor-wise select the branch with
    # |result| > 1 and keep the cut on the real segment through [-1, 1]
    return w + np.sqrt(w - 1.0) * np.sqrt(w + 1.0)


def slit_map_eval(p: SlitParticle, z):
    """Evaluate the slit map on points strictly outside the unit disk.

    Normalised so that f(z)/z -> e^c as |z| -> infinity; the image omits
    the radial segment (1, 1 + d].
    """
    z_arr = np.asarray(z, dtype=np.complex128)
    if np.any(np.abs(z_arr) <= 1.0):
        raise ValueError("slit map requires |z| > 1 strictly")
    w = (1.0 + p.beta) * _joukowski(z_arr) + p.beta
    f = _joukowski_inv_exterior(w)
    bad = np.abs(f) <= 1.0
    if np.any(bad):
        where = np.argwhere(bad).ravel()[:4]
        raise BranchError(
            f"slit map image fell inside the unit circle at indices {where.tolist()}"
        )
    return complex(f) if np.isscalar(z) or np.ndim(z) == 0 else f


def slit_map_inverse(p: SlitParticle, w):
    """Inverse slit map, J_inv((J(w) - beta)/(1 + beta)), for |w| > 1.

    For w on the open slit the two prime ends are separated by the sign of
    Im(w); exactly-real slit points resolve to the upper side.
    """
    w_arr = np.asarray(w, dtype=np.complex128)
    if np.any(np.abs(w_arr) <= 1.0):
        raise ValueError("inverse slit map requires |w| > 1")
    v = (_joukowski(w_arr) - p.beta) / (1.0 + p.beta)
    z = _joukowski_inv_exterior(v)
    bad = np.abs(z) < 1.0 - 1e-12
    if np.any(bad):
        where = np.argwhere(bad).ravel()[:4]
        raise BranchError(
            f"inverse slit map image fell inside the unit circle at indices {where.tolist()}"
        )
    return complex(z) if np.isscalar(w) or np.ndim(w) == 0 else z


def slit_map_boundary(p: SlitParticle, y):
    """Exact boundary trace f(e^{2 pi i y}).

    Angles with |y mod 1| above the slit-base preimage gamma(0+) land on the
    unit circle at angle gamma^{-1}(y); angles below it land on the slit at
    radius W + sqrt(W^2 - 1), W = (1+beta) cos(2 pi y) + beta.
    """
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    _, a = reduce_angle(y_arr)
    out = np.empty(y_arr.shape, dtype=np.complex128)
    y0 = gamma_jump(p)
    on_circle = np.abs(a) >= y0
    if np.any(on_circle):
        x = _gamma_inverse_reduced(p, a[on_circle])
        out[on_circle] = np.exp(2j * np.pi * x)
    on_slit = ~on_circle
    if np.any(on_slit):
        w = (1.0 + p.beta) * np.cos(2.0 * np.pi * a[on_slit]) + p.beta
        out[on_slit] = w + np.sqrt(w * w - 1.0)
    return complex(out[0]) if np.isscalar(y) or np.ndim(y) == 0 else out.reshape(np.shape(y))


def rotated_particle_map(p: SlitParticle, theta: float, z):
    """Slit map conjugated by rotation: attaches the slit at exp(2 pi i theta)."""
    rot = complex(np.exp(2j * np.pi * theta))
    out = rot * slit_map_eval(p, np.asarray(z, dtype=np.complex128) / rot)
    return complex(out) if np.ndim(z) == 0 else out


def reduce_angle(x):
    """Split x into (k, a) with x = k + a and a in (-1/2, 1/2]."""
    x_arr = np.asarray(x, dtype=float)
    k = np.floor(x_arr + 0.5)
    a = x_arr - k
    at_lower = a == -0.5
    if np.any(at_lower):
        a = np.where(at_lower, 0.5, a)
        k = np.where(at_lower, k - 1.0, k)
    return k, a


def gamma_jump(p: SlitParticle) -> float:
    """Right limit gamma(0+) = arctan(sqrt(e^c - 1)) / pi: half the jump at 0."""
    return math.atan(math.sqrt(p.beta)) / math.pi


def _gamma_tilde_reduced(p: SlitParticle, a: np.ndarray) -> np.ndarray:
    """Displacement gamma(a) - a on (-1/2, 1/2], with the 0 -> 0+ convention."""
    ec = 1.0 + p.beta
    out = np.empty(a.shape, dtype=float)

    at_half = a == 0.5
    out[at_half] = 0.0

    at_zero = a == 0.0
    out[at_zero] = gamma_jump(p)

    near_half = (~at_half) & (np.abs(a) > 0.5 - _NEAR_HALF)
    if np.any(near_half):
        # m = 1/2 - |a| is exact; gamma - a = sign(a) (m - arctan(1/g)/pi)
        m = 0.5 - np.abs(a[near_half])
        u = np.tan(np.pi * m)
        inv_g = u / np.sqrt(ec + p.beta * u * u)
        out[near_half] = np.sign(a[near_half]) * (m - np.arctan(inv_g) / np.pi)

    main = (~at_half) & (~at_zero) & (~near_half)
    if np.any(main):
        t = np.tan(np.pi * a[main])
        g = np.sqrt(ec * t * t + p.beta)
        out[main] = np.sign(a[main]) * np.arctan(g) / np.pi - a[main]
    return out


def _gamma_reduced(p: SlitParticle, a: np.ndarray) -> np.ndarray:
    """gamma on (-1/2, 1/2], with gamma(0) := gamma(0+)."""
    return a + _gamma_tilde_reduced(p, a)


def _gamma_inverse_reduced(p: SlitParticle, y: np.ndarray) -> np.ndarray:
    """Inverse of gamma on circle-side angles, |y| in [gamma(0+), 1/2]."""
    ec = 1.0 + p.beta
    out = np.empty(y.shape, dtype=float)
    at_half = np.abs(y) == 0.5
    out[at_half] = y[at_half]
    rest = ~at_half
    if np.any(rest):
        t = np.tan(np.pi * y[rest])
        arg = (t * t - p.beta) / ec
        # roundoff at the slit base can push arg a hair below zero
        arg = np.maximum(arg, 0.0)
        out[rest] = np.sign(y[rest]) * np.arctan(np.sqrt(arg)) / np.pi
    return out


def boundary_angle_gamma(p: SlitParticle, x):
    """Boundary angle function gamma, extended to the line by gamma(k+a) = k + gamma(a)."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    k, a = reduce_angle(x_arr)
    val = k + _gamma_reduced(p, a)
    return float(val[0]) if np.isscalar(x) or np.ndim(x) == 0 else val.reshape(np.shape(x))


def gamma_tilde(p: SlitParticle, x):
    """Displacement gamma(x) - x; periodic with period 1, odd, sup of order sqrt(c)."""
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    _, a = reduce_angle(x_arr)
    val = _gamma_tilde_reduced(p, a)
    return float(val[0]) if np.isscalar(x) or np.ndim(x) == 0 else val.reshape(np.shape(x))
