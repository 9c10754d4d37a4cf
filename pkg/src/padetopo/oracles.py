"""Brute-force reference computations used to validate the fast paths."""
from __future__ import annotations

import logging

import numpy as np
from scipy import special

from . import bem
from .mesh import BoundaryMesh

log = logging.getLogger(__name__)


def cylinder_total_field(k: float, radius: float, r, theta, direction_angle: float = np.pi / 2,
                         nmax: int | None = None) -> np.ndarray:
    """Total field around a sound-hard disc centred at the origin.

    Separation-of-variables series for a unit plane wave travelling at
    ``direction_angle``; valid for ``r >= radius``.
    """
    ka = k * radius
    if nmax is None:
        nmax = int(ka + 20 + 4 * ka ** (1 / 3))
    n = np.arange(-nmax, nmax + 1)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    r, theta = np.broadcast_arrays(r, theta)
    dJ = special.jvp(n, ka)
    dH = special.h1vp(n, ka)
    radial = special.jv(n[None, :], k * r[:, None]) - (dJ / dH)[None, :] * special.hankel1(n[None, :], k * r[:, None])
    return np.sum((1j ** n)[None, :] * radial * np.exp(1j * n[None, :] * (theta[:, None] - direction_angle)), axis=1)


def sweep_responses(mesh: BoundaryMesh, omegas, incident, obs, c: float = 1.0) -> np.ndarray:
    """Order-0 BEM responses u(omega; x_obs), shape (len(omegas), n_obs)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    out = np.empty((len(omegas), obs.shape[0]), dtype=complex)
    for i, w in enumerate(omegas):
        out[i] = bem.solve_frequency(mesh, float(w), incident, obs, c)
    return out


def trapezoid_objective(mesh: BoundaryMesh, band, incident, obs, n_quad: int = 100, c: float = 1.0):
    """Band-averaged objective by the trapezoidal rule over ``n_quad`` solves.

    Returns ``(J, omegas, f)`` with ``f = 1/2 sum_obs |u|^2``; ``J`` is also
    divided by the number of observation points.
    """
    w1, w2 = band
    omegas = np.linspace(w1, w2, n_quad)
    u = sweep_responses(mesh, omegas, incident, obs, c)
    f = 0.5 * np.sum(np.abs(u) ** 2, axis=1)
    n_obs = np.atleast_2d(obs).shape[0]
    J = np.trapezoid(f, omegas) / (n_obs * (w2 - w1))
    return J, omegas, f
