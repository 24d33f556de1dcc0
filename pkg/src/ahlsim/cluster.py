"""Geometric realisation of the growth process.

A cluster is the attachment-ordered list of (angle, capacity) pairs; its
exterior map is the composition of rotated slit maps, innermost particle
applied first. Only forward evaluation happens here: the boundary inverse
is the angle recursion in `flow`, never complex root finding.

Boundary tracing evaluates the composed map on a circle slightly outside
the unit disk. Near each slit base the map has a square-root corner, so the
traced polyline approaches the true boundary at rate sqrt(offset) there and
at rate offset elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .measure import AttachmentMeasure
from .particle import BranchError, SlitParticle, rotated_particle_map
from .flow import attachment_angles

__all__ = [
    "ClusterState",
    "grow_cluster",
    "compose_cluster",
    "boundary_trace",
    "export_geometry",
]


@dataclass(frozen=True)
class ClusterState:
    """Particles in attachment order."""

    thetas: np.ndarray
    capacities: np.ndarray

    def __post_init__(self) -> None:
        if self.thetas.shape != self.capacities.shape:
            raise ValueError("angles and capacities must align")
        if np.any(self.capacities <= 0):
            raise ValueError("capacities must be positive")

    @classmethod
    def empty(cls) -> "ClusterState":
        return cls(thetas=np.empty(0), capacities=np.empty(0))

    def __len__(self) -> int:
        return len(self.thetas)

    @property
    def total_capacity(self) -> float:
        return float(np.sum(self.capacities))


def grow_cluster(m: AttachmentMeasure, capacity: float, n: int, seed: int) -> ClusterState:
    """Cluster of n equal-capacity particles attached at measure-drawn angles.

    Uses the same seeded angle stream as a flow run with this seed, so
    geometric and boundary-flow views of one realisation line up.
    """
    thetas = attachment_angles(m, seed, n)
    return ClusterState(thetas=thetas, capacities=np.full(n, float(capacity)))


def compose_cluster(state: ClusterState, z):
    """Evaluate the cluster map on points strictly outside the unit disk."""
    z_arr = np.asarray(z, dtype=np.complex128)
    out = z_arr.copy()
    particles: dict[float, SlitParticle] = {}
    for i in range(len(state) - 1, -1, -1):
        c = float(state.capacities[i])
        particle = particles.get(c)
        if particle is None:
            particle = particles.setdefault(c, SlitParticle.from_capacity(c))
        try:
            out = rotated_particle_map(particle, float(state.thetas[i]), out)
        except BranchError as err:
            raise BranchError(f"branch failure applying particle {i}: {err}") from err
    return complex(out) if np.ndim(z) == 0 else out


def boundary_trace(state: ClusterState, resolution: int, eps: float = 1e-4) -> np.ndarray:
    """Polyline approximating the cluster boundary.

    Evaluates the cluster map at `resolution` equispaced angles on the
    circle of radius 1 + eps.
    """
    if resolution < 2**8:
        raise ValueError("resolution must be at least 256")
    angles = np.linspace(0.0, 1.0, int(resolution), endpoint=False)
    ring = (1.0 + eps) * np.exp(2j * np.pi * angles)
    return compose_cluster(state, ring)


def export_geometry(polyline: np.ndarray, path, svg_path=None) -> None:
    """Write the polyline as CSV (columns re, im) and optionally as SVG."""
    pts = np.asarray(polyline, dtype=np.complex128).ravel()
    with open(path, "w", newline="") as fh:
        fh.write("re,im\n")
        for w in pts:
            fh.write(f"{float(w.real)!r},{float(w.imag)!r}\n")
    if svg_path is None:
        return
    if pts.size == 0:
        bounds = (-1.0, -1.0, 2.0, 2.0)
        d = ""
    else:
        x0, x1 = float(np.min(pts.real)), float(np.max(pts.real))
        y0, y1 = float(np.min(pts.imag)), float(np.max(pts.imag))
        pad = 0.05 * max(x1 - x0, y1 - y0, 1e-9)
        bounds = (x0 - pad, y0 - pad, (x1 - x0) + 2 * pad, (y1 - y0) + 2 * pad)
        coords = " L ".join(f"{w.real:.6f} {-w.imag:.6f}" for w in pts)
        d = f"M {coords} Z"
    with open(svg_path, "w") as fh:
        fh.write(
            '<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{bounds[0]:.6f} {-bounds[1] - bounds[3]:.6f} {bounds[2]:.6f} {bounds[3]:.6f}">\n'
            f'<path d="{d}" fill="none" stroke="black" stroke-width="{bounds[2] / 1000:.6f}"/>\n'
            "</svg>\n"
        )


def read_geometry_csv(path) -> np.ndarray:
    data = np.genfromtxt(path, delimiter=",", skip_header=1, ndmin=2)
    if data.size == 0:
        return np.empty(0, dtype=np.complex128)
    return data[:, 0] + 1j * data[:, 1]
