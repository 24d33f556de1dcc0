"""Quadrature helpers: composite Gauss-Legendre rules and graded meshes.

The boundary displacement of a small slit particle varies on the scale
sqrt(capacity) near its jump at 0, so period integrals against it use a
mesh refined geometrically toward 0 and Gauss-Legendre panels elsewhere.
"""

from __future__ import annotations

import numpy as np

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on (-1, 1), cached per order."""
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def panel_nodes(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre nodes/weights for the panels defined by `edges`.

    `edges` is an increasing 1-d array; each consecutive pair is one panel.
    Returns flat arrays of nodes and matching weights.
    """
    x, w = gauss_legendre(order)
    a = edges[:-1]
    half = 0.5 * (edges[1:] - a)
    mid = a + half
    nodes = mid[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def integrate_panels(fn, edges: np.ndarray, order: int = 16) -> float:
    nodes, weights = panel_nodes(edges, order)
    return float(np.dot(weights, fn(nodes)))


def graded_edges(scale: float, outer: float = 0.5, levels_down: int = 20) -> np.ndarray:
    """Panel edges on (0, outer] refined geometrically toward 0.

    Edges sit at scale * 2**k from k = -levels_down up to the first level
    reaching `outer`, with an extra closing panel (0, smallest edge].
    """
    if scale <= 0:
        raise ValueError(f"mesh scale must be positive, got {scale}")
    # for order-one scales the grading is moot; keep the ladder inside
    scale = min(scale, outer / 2.0)
    ladder = scale * 2.0 ** np.arange(-levels_down, 64)
    ladder = ladder[ladder < outer]
    return np.concatenate(([0.0], ladder, [outer]))


def symmetric_graded_edges(scale: float, half_width: float = 0.5, levels_down: int = 20) -> np.ndarray:
    """Edges on (-half_width, half_width) graded toward 0 from both sides."""
    pos = graded_edges(scale, half_width, levels_down)
    return np.concatenate((-pos[:0:-1], pos))
