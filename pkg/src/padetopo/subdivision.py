"""Adaptive splitting of the target band and the multi-centre sweep.

The width over which the rational estimate of D_T f can be trusted is
estimated at the band midpoint by comparing the [M, N] estimate with the
[M-1, N-1] one. The band is then cut into an odd number of equal
subintervals, each handled by its own expansion centre.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bem, pade
from .sensitivity import ResponseJets, dt_f_rational, dt_hat_coeffs, dt_pade_coeffs, indirect_sensitivity, response_jets

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateRangeError",
    "BandPlan",
    "SweepResult",
    "DtFEstimate",
    "dt_f_estimate",
    "dt_f_error",
    "valid_range",
    "plan_band",
    "subsample",
    "sweep",
]


class DegenerateRangeError(ArithmeticError):
    """The D_T f tolerance is violated already at the expansion centre."""


@dataclass
class BandPlan:
    """Equal subintervals of the band, odd in number, with midpoints as centres."""

    band: tuple
    n_div: int
    valid: tuple
    delta: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.band[0], self.band[1], self.n_div + 1)

    @property
    def centres(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        d["valid"] = list(self.valid)
        d["centres"] = self.centres.tolist()
        return d


@dataclass
class DtFEstimate:
    """Hat coefficients and their topological derivatives, one entry per observation point."""

    omega0: float
    rfs: list
    Dp_hat: list
    Dq_hat: list

    def f(self, omega) -> np.ndarray:
        return sum(rf(omega) for rf in self.rfs)

    def dt_f(self, omega) -> np.ndarray:
        """Summed D_T f over observation points, shape (len(omega), n_pts)."""
        om = np.atleast_1d(np.asarray(omega, dtype=float))
        return sum(dt_f_rational(rf, dp, dq, om) for rf, dp, dq in zip(self.rfs, self.Dp_hat, self.Dq_hat))


def dt_f_estimate(rj: ResponseJets, M: int, N: int, cols=None) -> DtFEstimate:
    """D_T f rational estimates from the [M, N] u-Pade fit at every observation point."""
    dtu = rj.dtu if cols is None else rj.dtu[:, cols]
    rfs, dps, dqs = [], [], []
    for i in range(rj.u_obs.shape[1]):
        a = rj.u_obs[: M + N + 1, i]
        pa = pade.fit_with_fallback(a, M, N, rj.omega0)
        Dp, Dq = dt_pade_coeffs(pa, a, dtu[: pa.M + pa.N + 1, :, i])
        Dph, Dqh = dt_hat_coeffs(pa.p, pa.q, Dp, Dq)
        rfs.append(pade.RationalF(rj.omega0, *pade.hat_coefficients(pa.p, pa.q)))
        dps.append(Dph)
        dqs.append(Dqh)
    return DtFEstimate(rj.omega0, rfs, dps, dqs)


def dt_f_error(omega, full: DtFEstimate, reduced: DtFEstimate) -> np.ndarray:
    """Pointwise discrepancy ``|D_T f[2M,2N] - D_T f[2M-2,2N-2]|``, shape (len(omega), n_pts)."""
    return np.abs(full.dt_f(omega) - reduced.dt_f(omega))


def _edge(errfun, omega0, end, delta, n_scan, iters, tol):
    """Per-point position where the error first exceeds ``delta`` between ``omega0`` and ``end``."""
    s = omega0 + (end - omega0) * np.linspace(0.0, 1.0, n_scan)
    e = np.asarray(errfun(s))
    bad = e > delta
    npts = e.shape[1]
    out = np.full(npts, float(end))
    first = np.where(bad.any(axis=0), bad.argmax(axis=0), -1)
    todo = np.flatnonzero(first > 0)
    if todo.size == 0:
        return out
    inner = s[first[todo] - 1].astype(float)
    outer = s[first[todo]].astype(float)
    for _ in range(iters):
        if np.all(np.abs(outer - inner) <= tol):
            break
        mid = 0.5 * (inner + outer)
        em = np.asarray(errfun(mid))[np.arange(todo.size), todo]
        over = em > delta
        outer = np.where(over, mid, outer)
        inner = np.where(over, inner, mid)
    out[todo] = inner
    return out


def valid_range(errfun, band, omega0: float, delta: float, n_scan: int = 17, iters: int = 40,
                per_point: bool = False):
    """Widest interval around ``omega0`` on which every point's error stays below ``delta``.

    ``errfun(omega)`` returns errors of shape (len(omega), n_pts). Each half
    band is pre-scanned at ``n_scan`` samples; the innermost crossing is then
    refined by bisection. Returns ``(w_L, w_R)`` (and the per-point bounds
    if ``per_point``).
    """
    w1, w2 = band
    if not w1 <= omega0 <= w2:
        raise ValueError("omega0 must lie in the band")
    e0 = np.asarray(errfun(np.array([omega0])))[0]
    if np.any(e0 > delta):
        raise DegenerateRangeError(f"error {e0.max():.3e} exceeds tolerance {delta:.3e} at the centre")
    tol = 1e-12 * (w2 - w1)
    right = _edge(errfun, omega0, w2, delta, n_scan, iters, tol)
    left = _edge(errfun, omega0, w1, delta, n_scan, iters, tol)
    rng = (float(left.max()), float(right.min()))
    if per_point:
        return rng, left, right
    return rng


def plan_band(band, valid, delta: float = 1e-2, max_div: int | None = None) -> BandPlan:
    """Odd number of equal subintervals no wider than the valid range."""
    w1, w2 = band
    wl, wr = valid
    if wr <= wl:
        raise ValueError("valid range must have positive width")
    n = max(1, math.ceil((w2 - w1) / (wr - wl) - 1e-12))
    if n % 2 == 0:
        n += 1
    if max_div is not None and n > max_div:
        cap = max_div if max_div % 2 else max_div - 1
        log.warning("band plan needs %d subintervals, capped at %d", n, cap)
        n = cap
    return BandPlan((float(w1), float(w2)), int(n), (float(wl), float(wr)), float(delta))


def subsample(n: int, max_points: int = 64, stride: int | None = None) -> np.ndarray:
    """Indices of the evaluation points used for range estimation."""
    if stride is None:
        stride = max(1, math.ceil(n / max_points))
    return np.arange(0, n, stride)[:max_points]


@dataclass
class SweepResult:
    """Objective, its topological derivative and bookkeeping for one band."""

    J: float
    DJ: np.ndarray
    plan: BandPlan
    inside: np.ndarray
    n_primal: int = 0
    n_adjoint: int = 0
    interval_times: list = field(default_factory=list)
    f_discrepancy: float = float("nan")


def _jets(mesh, omega0, K, c, incident, obs, points, use_fmm):
    op = bem.assemble(mesh, omega0, K, c)
    rhs_sum = None
    if use_fmm:
        from .fmm import fmm_rhs_sum

        rhs_sum = fmm_rhs_sum(op)
    return response_jets(op, incident, obs, points, rhs_sum=rhs_sum)


def sweep(mesh, band, incident, obs, points, M: int, N: int, delta: float = 1e-2, c: float = 1.0,
          max_points: int = 64, stride: int | None = None, max_div: int | None = 31,
          use_fmm: bool = False, n_div: int | None = None) -> SweepResult:
    """J and D_T J over ``band`` with adaptive subdivision.

    The midpoint solve fixes the plan; the central subinterval reuses it and
    every other subinterval gets its own primal and adjoint solves.
    ``n_div`` overrides the planned (odd) subinterval count.
    """
    if M < 1 or N < 1:
        raise ValueError("degrees must be at least 1 for the reduced comparison")
    w1, w2 = band
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    mid = 0.5 * (w1 + w2)
    t0 = time.perf_counter()
    rj_mid = _jets(mesh, mid, M + N, c, incident, obs, pts, use_fmm)
    t_mid = time.perf_counter() - t0
    fluid = np.flatnonzero(~rj_mid.inside)
    sel = fluid[subsample(fluid.size, max_points, stride)] if fluid.size else np.zeros(0, int)
    if sel.size:
        full = dt_f_estimate(rj_mid, M, N, sel)
        red = dt_f_estimate(rj_mid, M - 1, N - 1, sel)
        valid = valid_range(lambda w: dt_f_error(w, full, red), band, mid, delta)
        grid = np.linspace(w1, w2, 33)
        f_disc = float(np.max(np.abs(full.f(grid) - red.f(grid))))
    else:
        valid, f_disc = (w1, w2), float("nan")
    plan = plan_band(band, valid, delta, max_div)
    if n_div is not None:
        if n_div % 2 == 0:
            raise ValueError("n_div must be odd so that the midpoint solve is reused")
        plan = BandPlan(plan.band, int(n_div), plan.valid, plan.delta)
    log.info("band plan: n_div=%d valid=[%.4f, %.4f] f discrepancy %.2e", plan.n_div, *valid, f_disc)
    J, DJ, times = 0.0, np.zeros(pts.shape[0]), []
    edges = plan.edges
    for k, centre in enumerate(plan.centres):
        t0 = time.perf_counter()
        if k == plan.n_div // 2:
            rj, extra = rj_mid, t_mid
        else:
            rj, extra = _jets(mesh, centre, M + N, c, incident, obs, pts, use_fmm), 0.0
        Jk, DJk, _, _ = indirect_sensitivity(rj, M, N, band, (edges[k], edges[k + 1]))
        J += Jk
        DJ += DJk
        times.append(time.perf_counter() - t0 + extra)
    return SweepResult(J, DJ, plan, rj_mid.inside, plan.n_div, plan.n_div * obs.shape[0], times, f_disc)
