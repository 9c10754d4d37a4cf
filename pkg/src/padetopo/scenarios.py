"""Reference geometries and point sets used by the examples, tests and CLI."""
from __future__ import annotations

import numpy as np

from .mesh import BoundaryMesh, build_polygon, concatenate

__all__ = ["lobed_scatterer", "four_scatterers", "dt_validation_scatterers", "dt_validation_points",
           "FOUR_SCATTERER_OBS"]

FOUR_SCATTERER_OBS = np.array([[0.0, 0.0]])


def lobed_scatterer(center, radius: float, lobes: int = 3, depth: float = 0.2, n_elem: int = 100,
                    phase: float = 0.0) -> BoundaryMesh:
    """Closed curve ``r(t) = radius (1 + depth cos(lobes (t - phase)))`` around ``center``."""
    if not 0 <= depth < 1:
        raise ValueError("depth must lie in [0, 1)")
    t = 2.0 * np.pi * np.arange(n_elem) / n_elem
    r = radius * (1.0 + depth * np.cos(lobes * (t - phase)))
    v = np.asarray(center, dtype=float) + r[:, None] * np.column_stack([np.cos(t), np.sin(t)])
    return build_polygon(v)


def four_scatterers(n_elem: int = 100, distance: float = 2.0, radius: float = 0.8, lobes: int = 3,
                    depth: float = 0.2) -> BoundaryMesh:
    """Four lobed rigid bodies placed symmetrically around the origin.

    The observation point of the frequency-sweep comparison sits at the
    origin, enclosed by the four bodies.
    """
    parts = []
    for k in range(4):
        ang = 0.5 * np.pi * k
        centre = distance * np.array([np.cos(ang), np.sin(ang)])
        parts.append(lobed_scatterer(centre, radius, lobes, depth, n_elem, phase=ang + np.pi))
    return concatenate(parts)


def dt_validation_scatterers(n_elem: int = 100) -> BoundaryMesh:
    """Four deeper-lobed bodies around the origin used for the sensitivity check."""
    return four_scatterers(n_elem, distance=2.0, radius=0.9, lobes=3, depth=0.25)


def dt_validation_points(x1: float = -6.0, lo: float = -6.0, hi: float = 6.0, n: int = 31) -> np.ndarray:
    """Evaluation points on the vertical line ``x1`` (31 points with spacing 0.4 by default)."""
    return np.column_stack([np.full(n, x1), np.linspace(lo, hi, n)])
