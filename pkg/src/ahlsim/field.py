"""Deterministic fields derived from the measure and the particle.

The drift b is the periodic Hilbert transform of the attachment density:
b(x) = (1/2pi) PV int cot(pi z) (h(x-z) - h(x)) dz. For Fourier densities it
has the closed form sum (a_k sin 2 pi k x - b_k cos 2 pi k x) / (2 pi); the
quadrature mode integrates the symmetric rewrite over (0, 1/2), whose
integrand extends continuously to z = 0, so open Gauss-Legendre panels need
no regularisation.

The exact one-step drift beta_nu(x) = int gamma_tilde(x-z) h(z) dz and the
one-step second moment use a mesh graded toward the displacement jump.
The particle-shape constant rho0 = lim c^{-3/2} int gamma_tilde^2 is never
assumed: it is calibrated by Richardson extrapolation over a capacity sweep
(the correction is empirically O(sqrt(c)), so extrapolation runs in sqrt(c)
steps) and can be cached to a JSON sidecar.
"""

from __future__ import annotations

import json
import math
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._quad import panel_nodes, symmetric_graded_edges
from .measure import AttachmentMeasure
from .particle import SlitParticle, gamma_tilde

__all__ = [
    "DriftField",
    "CalibrationError",
    "UncalibratedRho0Error",
    "calibrate_rho0",
    "second_moment_integral",
]

DEFAULT_B_PANELS = 2048
DEFAULT_GRADED_ORDER = 16


class CalibrationError(RuntimeError):
    """Capacity sweep failed to produce a Cauchy sequence of estimates."""


class UncalibratedRho0Error(RuntimeError):
    """A variance prediction was requested before rho0 was calibrated."""


class DriftField:
    """Drift b, its derivatives, the exact discrete drift and rho0.

    b_mode is one of 'auto', 'fourier_exact', 'quadrature'; 'auto' uses the
    closed form whenever the measure carries Fourier coefficients.
    """

    def __init__(
        self,
        measure: AttachmentMeasure,
        b_mode: str = "auto",
        panels: int = DEFAULT_B_PANELS,
        panel_order: int = 8,
    ):
        if b_mode not in ("auto", "fourier_exact", "quadrature"):
            raise ValueError(f"unknown b_mode {b_mode!r}")
        if b_mode == "fourier_exact" and measure.fourier is None:
            raise ValueError("fourier_exact mode needs a measure with Fourier coefficients")
        self.measure = measure
        self.b_mode = b_mode
        self.panels = int(panels)
        self.panel_order = int(panel_order)
        self.rho0: Optional[float] = None
        self.rho0_uncertainty: Optional[float] = None
        self._sup_cache: dict[int, float] = {}
        self._beta_tables: dict = {}

    # -- Hilbert-transform drift -------------------------------------------------

    def _use_fourier(self) -> bool:
        return self.b_mode == "fourier_exact" or (self.b_mode == "auto" and self.measure.fourier is not None)

    def b(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        out = self._b_fourier(x_arr) if self._use_fourier() else self._b_quadrature(x_arr, 0)
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def b_deriv(self, x, order: int = 1):
        if order not in (1, 2):
            raise ValueError("derivative order must be 1 or 2")
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        if self._use_fourier():
            out = self._b_fourier(x_arr, order)
        else:
            out = self._b_quadrature(x_arr, order)
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def _b_fourier(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        total = np.zeros_like(x)
        for k, a_k, b_k in self.measure.fourier:
            ang = 2.0 * np.pi * k * x
            w = (2.0 * np.pi * k) ** order / (2.0 * np.pi)
            if order == 0:
                total += w * (a_k * np.sin(ang) - b_k * np.cos(ang))
            elif order == 1:
                total += w * (a_k * np.cos(ang) + b_k * np.sin(ang))
            else:
                total += w * (-a_k * np.sin(ang) + b_k * np.cos(ang))
        return total

    def _b_quadrature(self, x: np.ndarray, order: int) -> np.ndarray:
        nodes, weights = panel_nodes(np.linspace(0.0, 0.5, self.panels + 1), self.panel_order)
        kernel = weights / np.tan(np.pi * nodes)
        deriv = {0: self.measure.density, 1: self.measure.density_d1, 2: self.measure.density_d2}[order]
        out = np.empty_like(x)
        block = max(1, 2**22 // nodes.size)
        for i in range(0, x.size, block):
            xs = x[i : i + block, None]
            diff = deriv(xs - nodes[None, :]) - deriv(xs + nodes[None, :])
            out[i : i + block] = diff @ kernel
        return out / (2.0 * np.pi)

    def sup_b_deriv(self, order: int = 1, grid: int = 4096) -> float:
        """Grid supremum of |b'| or |b''| on one period."""
        key = order * 10**7 + grid
        if key not in self._sup_cache:
            xs = np.linspace(0.0, 1.0, grid, endpoint=False)
            self._sup_cache[key] = float(np.max(np.abs(self.b_deriv(xs, order))))
        return self._sup_cache[key]

    # -- exact one-step drift ----------------------------------------------------

    def beta_nu(self, p: SlitParticle, x):
        """Expected one-step displacement int gamma_tilde(x-z) h(z) dz."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        nodes, weights = panel_nodes(
            symmetric_graded_edges(math.sqrt(p.capacity)), DEFAULT_GRADED_ORDER
        )
        gt_w = gamma_tilde(p, nodes) * weights
        out = self.measure.density(x_arr[:, None] - nodes[None, :]) @ gt_w
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def gamma_second_moment(self, p: SlitParticle, x):
        """One-step conditional second moment int gamma_tilde(x-z)^2 h(z) dz."""
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        nodes, weights = panel_nodes(
            symmetric_graded_edges(math.sqrt(p.capacity)), DEFAULT_GRADED_ORDER
        )
        gt2_w = gamma_tilde(p, nodes) ** 2 * weights
        out = self.measure.density(x_arr[:, None] - nodes[None, :]) @ gt2_w
        return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))

    def beta_nu_table(self, p: SlitParticle, n: int = 4096):
        """Periodic cubic spline of beta_nu on an n-point uniform grid.

        Cached per capacity: the table is the per-step hot path for
        martingale tracking and must not be rebuilt per trajectory.
        """
        key = (p.capacity, n)
        cached = self._beta_tables.get(key)
        if cached is not None:
            return cached
        from scipy.interpolate import CubicSpline

        xs = np.linspace(0.0, 1.0, n + 1)
        vals = self.beta_nu(p, xs[:-1])
        vals = np.append(vals, vals[0])
        spline = CubicSpline(xs, vals, bc_type="periodic")
        self._beta_tables[key] = spline
        return spline

    # -- variance scale ----------------------------------------------------------

    def require_rho0(self) -> float:
        if self.rho0 is None:
            raise UncalibratedRho0Error(
                "rho0 has not been calibrated; run calibrate_rho0 (or the "
                "'calibrate' subcommand) before asking for variance predictions"
            )
        return self.rho0

    def set_rho0(self, value: float, uncertainty: float) -> None:
        self.rho0 = float(value)
        self.rho0_uncertainty = float(uncertainty)


def second_moment_integral(p: SlitParticle, order: int = DEFAULT_GRADED_ORDER) -> float:
    """Period integral of gamma_tilde^2 on the graded mesh."""
    nodes, weights = panel_nodes(symmetric_graded_edges(math.sqrt(p.capacity)), order)
    return float(np.dot(weights, gamma_tilde(p, nodes) ** 2))


def calibrate_rho0(
    capacities: Sequence[float],
    field: Optional[DriftField] = None,
    cache_path: Optional[str | Path] = None,
    cauchy_tol: float = 0.10,
) -> tuple[float, float]:
    """Richardson-extrapolated limit of c^{-3/2} int gamma_tilde^2.

    `capacities` must hold at least three values spanning two decades for a
    trustworthy estimate; fewer are accepted but flagged with a warning and a
    wide uncertainty. The extrapolation assumes an error expansion in
    sqrt(c); its last increment is reported as the uncertainty. Results are
    optionally cached in a JSON sidecar keyed by the sweep.
    """
    caps = sorted(float(c) for c in capacities)
    if len(caps) < 2:
        raise ValueError("calibration needs at least two capacities")
    caps = caps[::-1]  # descending: coarse to fine

    key = "slit:" + ",".join(f"{c:.6e}" for c in caps)
    if cache_path is not None:
        cached = _load_rho0_cache(cache_path).get(key)
        if cached is not None:
            rho0, unc = float(cached["rho0"]), float(cached["uncertainty"])
            if field is not None:
                field.set_rho0(rho0, unc)
            return rho0, unc

    raw = np.array([second_moment_integral(SlitParticle.from_capacity(c)) / c**1.5 for c in caps])
    rel_changes = np.abs(np.diff(raw)) / np.abs(raw[1:])
    # a 2-point sweep cannot assess convergence: it is flagged below instead
    if len(caps) >= 3 and np.any(rel_changes > cauchy_tol):
        raise CalibrationError(
            f"estimates are not Cauchy: relative changes {rel_changes.tolist()} "
            f"exceed {cauchy_tol} over sweep {caps}"
        )

    ratios = np.sqrt(np.array(caps[:-1]) / np.array(caps[1:]))
    extrapolated = raw[1:] + (raw[1:] - raw[:-1]) / (ratios - 1.0)
    if len(extrapolated) >= 2:
        rho0 = float(extrapolated[-1])
        uncertainty = float(abs(extrapolated[-1] - extrapolated[-2]))
    else:
        rho0 = float(extrapolated[-1])
        uncertainty = float(abs(extrapolated[-1] - raw[-1]))
    if len(caps) < 3 or caps[0] / caps[-1] < 100.0:
        warnings.warn(
            f"rho0 calibration sweep {caps} is coarse; uncertainty {uncertainty:.3e} "
            "should not be trusted below the percent level",
            stacklevel=2,
        )
    if rho0 <= 0:
        raise CalibrationError(f"calibrated rho0 = {rho0} is not positive")

    if cache_path is not None:
        _store_rho0_cache(cache_path, key, rho0, uncertainty)
    if field is not None:
        field.set_rho0(rho0, uncertainty)
    return rho0, uncertainty


def _load_rho0_cache(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return {}


def _store_rho0_cache(path: str | Path, key: str, rho0: float, uncertainty: float) -> None:
    path = Path(path)
    data = _load_rho0_cache(path)
    data[key] = {"rho0": rho0, "uncertainty": uncertainty}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
