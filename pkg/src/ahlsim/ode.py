"""The deterministic flow of the drift field and its fixed-point structure.

flow_psi integrates x' = b(x). Two integrators: an adaptive Runge-Kutta
(DOP853 at tight tolerance, since critical-window experiments need errors
far below the c^{1/4} fluctuation scale over logarithmic horizons), and a
closed form for the single-cosine density 1 + a cos(2 pi x), where the
separable equation gives tan(pi psi_t) = e^{at} tan(pi x) on each invariant
interval between fixed points.

The spatial derivative is exp of the integral of b' along the trajectory,
integrated concurrently with the state; the inverse flow runs the reversed
field, which is robust exactly where the forward flow is exponentially flat.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .field import DriftField

__all__ = ["DeterministicFlow", "FixedPoint", "FixedPointKind", "find_fixed_points"]

DEGENERATE_LAMBDA = 1e-8


class FixedPointKind(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class FixedPoint:
    location: float  # in [0, 1)
    lam: float  # b' at the point
    kind: FixedPointKind

    @property
    def is_unstable(self) -> bool:
        return self.kind is FixedPointKind.UNSTABLE


class DeterministicFlow:
    def __init__(
        self,
        field: DriftField,
        integrator: str = "auto",
        abs_tol: float = 1e-12,
        max_step: float = np.inf,
    ):
        if integrator not in ("auto", "rk_adaptive", "closed_form_cosine"):
            raise ValueError(f"unknown integrator {integrator!r}")
        self.field = field
        self.abs_tol = float(abs_tol)
        self.max_step = float(max_step)
        amp = field.measure.is_single_cosine()
        if integrator == "closed_form_cosine":
            if amp is None:
                raise ValueError("closed_form_cosine requires density 1 + a cos(2 pi x)")
            self.integrator = "closed_form_cosine"
        elif integrator == "auto" and amp is not None:
            self.integrator = "closed_form_cosine"
        else:
            self.integrator = "rk_adaptive"
        self._amp = amp if self.integrator == "closed_form_cosine" else None

    # -- closed form for the cosine family ----------------------------------------

    def _cosine_psi(self, x: np.ndarray, t: float) -> np.ndarray:
        a = self._amp
        base = np.floor(x)
        r = x - base
        growth = np.exp(a * t)
        with np.errstate(invalid="ignore"):
            tan_r = np.tan(np.pi * r)
        moved = base + np.round(r) + np.arctan(growth * tan_r) / np.pi
        # fixed points at multiples of 1/2 stay put, including r == 1/2
        pinned = (r == 0.0) | (r == 0.5)
        return np.where(pinned, x, moved)

    def _cosine_psi_deriv(self, x: np.ndarray, t: float) -> np.ndarray:
        a = self._amp
        r = x - np.floor(x)
        growth = np.exp(a * t)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            tan_r = np.tan(np.pi * r)
            t2 = tan_r * tan_r
            direct = growth * (1.0 + t2) / (1.0 + growth**2 * t2)
            u2 = np.where(t2 > 0, 1.0 / t2, np.inf)
            flipped = growth * (u2 + 1.0) / (u2 + growth**2)
        out = np.where(t2 > 1.0, flipped, direct)
        return np.where(r == 0.5, np.exp(-a * t), np.where(r == 0.0, np.exp(a * t), out))

    # -- generic adaptive integration ----------------------------------------------

    def _rk_psi(self, x: np.ndarray, t: float, reverse: bool = False) -> np.ndarray:
        if t == 0.0:
            return x.copy()
        sign = -1.0 if reverse else 1.0
        if t < 0.0:
            sign, t = -sign, -t

        def rhs(_, y):
            return sign * self.field.b(y)

        sol = solve_ivp(
            rhs,
            (0.0, t),
            x,
            method="DOP853",
            rtol=1e-12,
            atol=self.abs_tol,
            max_step=self.max_step,
            dense_output=False,
        )
        if not sol.success:
            raise RuntimeError(f"flow integration stalled: {sol.message}")
        return sol.y[:, -1]

    def _rk_psi_and_logderiv(self, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        if t == 0.0:
            return x.copy(), np.zeros_like(x)
        sign = 1.0
        if t < 0.0:
            sign, t = -1.0, -t
        n = x.size

        def rhs(_, state):
            y, _logd = state[:n], state[n:]
            return np.concatenate([sign * self.field.b(y), sign * self.field.b_deriv(y, 1)])

        sol = solve_ivp(
            rhs,
            (0.0, t),
            np.concatenate([x, np.zeros_like(x)]),
            method="DOP853",
            rtol=1e-12,
            atol=self.abs_tol,
            max_step=self.max_step,
        )
        if not sol.success:
            raise RuntimeError(f"flow integration stalled: {sol.message}")
        return sol.y[:n, -1], sol.y[n:, -1]

    # -- public surface --------------------------------------------------------------

    def flow_psi(self, x, t: float):
        """psi_t(x); negative t runs the flow backwards in time."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if self.integrator == "closed_form_cosine":
            out = self._cosine_psi(x_arr, t)
        else:
            out = self._rk_psi(x_arr, t)
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def flow_derivative(self, x, t: float):
        """Spatial derivative psi_t'(x) = exp(int_0^t b'(psi_s(x)) ds) > 0."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if self.integrator == "closed_form_cosine":
            out = self._cosine_psi_deriv(x_arr, t)
        else:
            _, logd = self._rk_psi_and_logderiv(x_arr, t)
            out = np.exp(logd)
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def flow_inverse(self, y, t: float):
        """Inverse flow at time t >= 0, computed as the flow of the reversed field."""
        if t < 0:
            raise ValueError("inverse flow defined for t >= 0")
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if self.integrator == "closed_form_cosine":
            out = self._cosine_psi(y_arr, -t)
        else:
            out = self._rk_psi(y_arr, t, reverse=True)
        return float(out[0]) if np.ndim(y) == 0 else out.reshape(np.shape(y))

    def flow_path(self, x: float, times: Sequence[float]) -> np.ndarray:
        """psi_t(x) for an ascending array of times >= 0, one integration."""
        t_arr = np.asarray(times, dtype=float)
        if t_arr.size == 0:
            return np.empty(0)
        if np.any(np.diff(t_arr) < 0) or t_arr[0] < 0:
            raise ValueError("times must be ascending and nonnegative")
        if self.integrator == "closed_form_cosine":
            base = np.floor(x)
            r = x - base
            if r == 0.0 or r == 0.5:
                return np.full(t_arr.shape, float(x))
            tan_r = np.tan(np.pi * r)
            return base + np.round(r) + np.arctan(np.exp(self._amp * t_arr) * tan_r) / np.pi
        t_end = float(t_arr[-1])
        if t_end == 0.0:
            return np.full(t_arr.shape, float(x))
        sol = solve_ivp(
            lambda _, y: self.field.b(y),
            (0.0, t_end),
            np.array([float(x)]),
            method="DOP853",
            rtol=1e-12,
            atol=self.abs_tol,
            max_step=self.max_step,
            dense_output=True,
        )
        if not sol.success:
            raise RuntimeError(f"flow integration stalled: {sol.message}")
        return sol.sol(t_arr)[0]


def find_fixed_points(fl: DeterministicFlow, grid: int = 4096) -> list[FixedPoint]:
    """All zeros of the drift in [0, 1), located by sign scan plus root polish.

    Stable and unstable points alternate for a generic field; a b that is
    numerically zero everywhere (the uniform measure) is rejected.
    """
    field = fl.field
    xs = np.linspace(0.0, 1.0, grid, endpoint=False)
    bs = field.b(xs)
    scale = float(np.max(np.abs(bs)))
    if scale < 1e-13:
        raise ValueError("drift is numerically zero; no isolated fixed points exist")

    roots: list[float] = []

    def add_root(r: float) -> None:
        r = r % 1.0
        if not any(abs(r - q) < 1e-9 or abs(abs(r - q) - 1.0) < 1e-9 for q in roots):
            roots.append(r)

    b_scalar = lambda v: field.b(float(v))
    for i in range(grid):
        x0, b0 = xs[i], bs[i]
        x1 = xs[(i + 1) % grid] + (1.0 if i + 1 == grid else 0.0)
        b1 = bs[(i + 1) % grid]
        if b0 == 0.0:
            add_root(x0)
        elif b0 * b1 < 0.0:
            add_root(brentq(b_scalar, x0, x1, xtol=1e-14, rtol=8.9e-16))

    points = []
    for r in sorted(roots):
        lam = field.b_deriv(r, 1)
        if abs(lam) < DEGENERATE_LAMBDA:
            warnings.warn(f"fixed point at {r:.6f} is degenerate (|b'| = {abs(lam):.2e})", stacklevel=2)
            kind = FixedPointKind.DEGENERATE
        else:
            kind = FixedPointKind.UNSTABLE if lam > 0 else FixedPointKind.STABLE
        points.append(FixedPoint(location=float(r), lam=float(lam), kind=kind))
    return points
