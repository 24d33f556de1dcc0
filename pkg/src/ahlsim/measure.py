"""Attachment measures on the circle: densities, exact CDFs and sampling.

Two families are provided. Fourier measures 1 + sum(a_k cos 2 pi k x +
b_k sin 2 pi k x) carry their coefficients, which downstream code uses for
closed-form drift evaluation. Arc measures are indicators smoothed with a
quintic smoothstep edge so they meet the twice-continuously-differentiable
assumption the limit theory needs.

Sampling inverts a tabulated CDF and polishes with one Newton step against
the exact density; the table has 2^16 cells so inversion is well below its
1e-8 contract for smooth densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "AttachmentMeasure",
    "make_measure_fourier",
    "make_measure_arc",
    "make_measure_uniform",
    "sample_angle",
    "density_eval",
]

CDF_TABLE_SIZE = 2**16


def _wrap01(x: np.ndarray) -> np.ndarray:
    return x - np.floor(x)


@dataclass(frozen=True)
class AttachmentMeasure:
    """Probability measure on [0, 1) with C2 density, extended periodically."""

    name: str
    density_fn: Callable[[np.ndarray], np.ndarray]
    density_d1_fn: Callable[[np.ndarray], np.ndarray]
    density_d2_fn: Callable[[np.ndarray], np.ndarray]
    cdf_fn: Callable[[np.ndarray], np.ndarray]
    fourier: Optional[tuple[tuple[int, float, float], ...]] = None
    x_grid: np.ndarray = field(repr=False, default=None)
    cdf_grid: np.ndarray = field(repr=False, default=None)

    def density(self, x) -> np.ndarray:
        return self.density_fn(_wrap01(np.asarray(x, dtype=float)))

    def density_d1(self, x) -> np.ndarray:
        return self.density_d1_fn(_wrap01(np.asarray(x, dtype=float)))

    def density_d2(self, x) -> np.ndarray:
        return self.density_d2_fn(_wrap01(np.asarray(x, dtype=float)))

    def cdf(self, x) -> np.ndarray:
        """CDF on [0, 1]; callers wrap periodically themselves if needed."""
        return self.cdf_fn(np.asarray(x, dtype=float))

    def ppf(self, u) -> np.ndarray:
        """Inverse CDF: table bracket, linear guess, one Newton step."""
        shift_of = getattr(self, "_shift_of", None)
        if shift_of is not None:
            base, s = shift_of
            return _wrap01(base.ppf(u) + s)
        u_arr = np.asarray(u, dtype=float)
        idx = np.clip(np.searchsorted(self.cdf_grid, u_arr, side="right") - 1, 0, CDF_TABLE_SIZE - 1)
        lo_x = self.x_grid[idx]
        lo_c = self.cdf_grid[idx]
        span_c = self.cdf_grid[idx + 1] - lo_c
        dx = self.x_grid[1] - self.x_grid[0]
        frac = np.where(span_c > 0, (u_arr - lo_c) / np.where(span_c > 0, span_c, 1.0), 0.5)
        x = lo_x + dx * frac
        pdf = self.density_fn(x)
        resid = self.cdf_fn(x) - u_arr
        safe = pdf > 1e-12
        x = np.where(safe, x - resid / np.where(safe, pdf, 1.0), x)
        return np.clip(x, 0.0, np.nextafter(1.0, 0.0))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Draw angles; deterministic given the generator state."""
        u = rng.random(size if size is not None else 1)
        out = self.ppf(u)
        return out if size is not None else float(out[0])

    def fast_ppf(self, u: np.ndarray) -> np.ndarray:
        """Hot-loop inverse CDF: quantile-table lookup plus one Newton step
        against the tabulated density. Indexing replaces the bisection of
        `ppf`; identical to it within 1e-12 wherever the density is bounded
        away from zero, which covers every shipped Fourier measure.
        """
        shift_of = getattr(self, "_shift_of", None)
        if shift_of is not None:
            base, s = shift_of
            return _wrap01(base.fast_ppf(u) + s)
        tables = getattr(self, "_quantile_tables", None)
        if tables is None:
            n = CDF_TABLE_SIZE
            qx = self.ppf(np.arange(n + 1) / n)
            qx[0], qx[-1] = 0.0, np.nextafter(1.0, 0.0)
            tables = (qx, self.density_fn(qx))
            object.__setattr__(self, "_quantile_tables", tables)
        qx, qpdf = tables
        n = CDF_TABLE_SIZE
        t = u * n
        j = np.minimum(t.astype(np.int64), n - 1)
        frac = t - j
        x_lo, x_hi = qx[j], qx[j + 1]
        x = x_lo + frac * (x_hi - x_lo)
        pdf = qpdf[j] + frac * (qpdf[j + 1] - qpdf[j])
        resid = j / n + (x - x_lo) * 0.5 * (qpdf[j] + pdf) - u
        safe = pdf > 1e-9
        x = np.where(safe, x - resid / np.where(safe, pdf, 1.0), x)
        return np.clip(x, x_lo, x_hi)

    def shifted(self, s: float) -> "AttachmentMeasure":
        """The measure rotated by s: density x -> h(x - s).

        Quantiles are realised as the shift of this measure's quantiles, so
        a run driven by the shifted measure consumes angles theta_i + s
        (mod 1) for the same seed: rotation equivariance of the flow holds
        draw by draw.
        """
        s = float(s) % 1.0
        base = self

        def density(x):
            return base.density_fn(_wrap01(np.asarray(x, dtype=float) - s))

        def density_d1(x):
            return base.density_d1_fn(_wrap01(np.asarray(x, dtype=float) - s))

        def density_d2(x):
            return base.density_d2_fn(_wrap01(np.asarray(x, dtype=float) - s))

        def cdf(x):
            y = np.asarray(x, dtype=float) - s
            ref = -s
            hy = np.floor(y) + base.cdf_fn(y - np.floor(y))
            href = math.floor(ref) + float(base.cdf_fn(np.array(ref - math.floor(ref))))
            return hy - href

        fourier = None
        if base.fourier is not None:
            rotated = []
            for k, a, b in base.fourier:
                phi = 2.0 * math.pi * k * s
                rotated.append((k, a * math.cos(phi) - b * math.sin(phi), a * math.sin(phi) + b * math.cos(phi)))
            fourier = tuple(rotated)

        xg, cg = _build_tables(cdf)
        out = AttachmentMeasure(
            name=f"{base.name}+shift{s:g}",
            density_fn=density,
            density_d1_fn=density_d1,
            density_d2_fn=density_d2,
            cdf_fn=cdf,
            fourier=fourier,
            x_grid=xg,
            cdf_grid=cg,
        )
        object.__setattr__(out, "_shift_of", (base, s))
        return out

    def is_single_cosine(self) -> Optional[float]:
        """Amplitude a if the density is exactly 1 + a cos(2 pi x), else None."""
        if self.fourier is not None and len(self.fourier) == 1:
            k, a, b = self.fourier[0]
            if k == 1 and b == 0.0 and a != 0.0:
                return a
        return None


def _build_tables(cdf_fn) -> tuple[np.ndarray, np.ndarray]:
    xg = np.linspace(0.0, 1.0, CDF_TABLE_SIZE + 1)
    cg = np.asarray(cdf_fn(xg), dtype=float)
    cg[0], cg[-1] = 0.0, 1.0
    # roundoff can wobble by an ulp where the density vanishes
    return xg, np.maximum.accumulate(cg)


def _validate_density(name: str, density_fn, grid_size: int = 2**16) -> None:
    xs = np.linspace(0.0, 1.0, grid_size, endpoint=False)
    h = density_fn(xs)
    bad = h < 0.0
    if np.any(bad):
        i = int(np.argwhere(bad).ravel()[0])
        raise ValueError(f"density {name!r} dips below zero at x = {xs[i]!r} (h = {h[i]!r})")


def make_measure_fourier(coeffs: Sequence[tuple[int, float, float]]) -> AttachmentMeasure:
    """Measure with density 1 + sum(a_k cos 2 pi k x + b_k sin 2 pi k x)."""
    cleaned = []
    for k, a, b in coeffs:
        k = int(k)
        if k < 1:
            raise ValueError(f"fourier mode index must be >= 1, got {k}")
        cleaned.append((k, float(a), float(b)))
    cleaned = tuple(sorted(cleaned))
    ks = np.array([k for k, _, _ in cleaned], dtype=float)
    aa = np.array([a for _, a, _ in cleaned])
    bb = np.array([b for _, _, b in cleaned])

    def density(x):
        x = np.asarray(x, dtype=float)
        ang = 2.0 * np.pi * np.multiply.outer(x, ks)
        return 1.0 + np.cos(ang) @ aa + np.sin(ang) @ bb

    def density_d1(x):
        x = np.asarray(x, dtype=float)
        ang = 2.0 * np.pi * np.multiply.outer(x, ks)
        w = 2.0 * np.pi * ks
        return -np.sin(ang) @ (w * aa) + np.cos(ang) @ (w * bb)

    def density_d2(x):
        x = np.asarray(x, dtype=float)
        ang = 2.0 * np.pi * np.multiply.outer(x, ks)
        w = (2.0 * np.pi * ks) ** 2
        return -np.cos(ang) @ (w * aa) - np.sin(ang) @ (w * bb)

    def cdf(x):
        x = np.asarray(x, dtype=float)
        ang = 2.0 * np.pi * np.multiply.outer(x, ks)
        two_pi_k = 2.0 * np.pi * ks
        return x + np.sin(ang) @ (aa / two_pi_k) + (1.0 - np.cos(ang)) @ (bb / two_pi_k)

    if cleaned:
        label = "fourier[" + ",".join(f"k{k}:a{a:g}:b{b:g}" for k, a, b in cleaned) + "]"
    else:
        label = "uniform"
    _validate_density(label, density)
    xg, cg = _build_tables(cdf)
    return AttachmentMeasure(
        name=label,
        density_fn=density,
        density_d1_fn=density_d1,
        density_d2_fn=density_d2,
        cdf_fn=cdf,
        fourier=cleaned,
        x_grid=xg,
        cdf_grid=cg,
    )


def make_measure_uniform() -> AttachmentMeasure:
    return make_measure_fourier([])


def _smoothstep(v: np.ndarray) -> np.ndarray:
    v = np.clip(v, 0.0, 1.0)
    return v**3 * (10.0 + v * (-15.0 + 6.0 * v))


def _smoothstep_d1(v: np.ndarray) -> np.ndarray:
    inside = (v > 0.0) & (v < 1.0)
    vv = np.where(inside, v, 0.0)
    return np.where(inside, 30.0 * vv**2 * (1.0 - vv) ** 2, 0.0)


def _smoothstep_d2(v: np.ndarray) -> np.ndarray:
    inside = (v > 0.0) & (v < 1.0)
    vv = np.where(inside, v, 0.0)
    return np.where(inside, 60.0 * vv * (1.0 - vv) * (1.0 - 2.0 * vv), 0.0)


def _smoothstep_int(v: np.ndarray) -> np.ndarray:
    # antiderivative of the quintic smoothstep, 0 at v = 0, 1/2 at v = 1
    v = np.clip(v, 0.0, 1.0)
    return v**4 * (2.5 + v * (-3.0 + v))


def make_measure_arc(lo: float, hi: float, smoothing: float) -> AttachmentMeasure:
    """Smoothed indicator of the arc [lo, hi], C2 by quintic smoothstep edges.

    Each edge ramps over [edge - smoothing, edge + smoothing], so the density
    is supported within smoothing of the arc, constant on
    [lo + smoothing, hi - smoothing], and integrates to one exactly. A
    full-circle arc degenerates to the uniform measure because the two edge
    ramps sum to one.
    """
    lo, hi, s = float(lo), float(hi), float(smoothing)
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"arc needs 0 <= lo < hi <= 1, got [{lo}, {hi}]")
    if not (0.0 < s < (hi - lo) / 4.0):
        raise ValueError(f"smoothing must be in (0, (hi-lo)/4), got {s}")
    width = hi - lo
    images = (-1.0, 0.0, 1.0)

    def step(y):
        return _smoothstep((y + s) / (2.0 * s))

    def density(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j in images:
            total += step(x - lo + j) - step(x - hi + j)
        return total / width

    def density_d1(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j in images:
            total += _smoothstep_d1((x - lo + j + s) / (2 * s)) - _smoothstep_d1((x - hi + j + s) / (2 * s))
        return total / (width * 2 * s)

    def density_d2(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j in images:
            total += _smoothstep_d2((x - lo + j + s) / (2 * s)) - _smoothstep_d2((x - hi + j + s) / (2 * s))
        return total / (width * (2 * s) ** 2)

    def step_int(y):
        # antiderivative of the smoothed step, equal to y for y >= s
        y = np.asarray(y, dtype=float)
        return np.where(y >= s, y, 2.0 * s * _smoothstep_int((y + s) / (2.0 * s)))

    def cdf(x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j in images:
            total += step_int(x - lo + j) - step_int(-lo + j)
            total -= step_int(x - hi + j) - step_int(-hi + j)
        return total / width

    label = f"arc[{lo:g},{hi:g};s={s:g}]"
    _validate_density(label, density)
    xg, cg = _build_tables(cdf)
    return AttachmentMeasure(
        name=label,
        density_fn=density,
        density_d1_fn=density_d1,
        density_d2_fn=density_d2,
        cdf_fn=cdf,
        fourier=None,
        x_grid=xg,
        cdf_grid=cg,
    )


def sample_angle(m: AttachmentMeasure, rng: np.random.Generator) -> float:
    """One draw from the measure; ownership of the generator stays with the caller."""
    return m.sample(rng)


def density_eval(m: AttachmentMeasure, x) -> np.ndarray:
    """Periodic density evaluation."""
    out = m.density(x)
    return float(out) if np.ndim(x) == 0 else out
