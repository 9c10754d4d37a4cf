"""Level-set topology optimisation with a tensor-product B-spline level set.

The level set ``phi`` (positive in fluid, negative in rigid material) lives
in a cubic B-spline space over a rectangular design domain. Each step
projects the topological derivative onto that space in the H1 sense and
moves ``phi`` toward it on the H1 unit sphere.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import interpolate, linalg
from scipy.spatial import cKDTree

from . import subdivision
from .mesh import BoundaryMesh, extract_contour

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateUpdateError",
    "SplineSpace",
    "LevelSetField",
    "StepRecord",
    "OptimisationHistory",
    "OptimiserSettings",
    "project_h1",
    "interpolate_greville",
    "step",
    "extend_from_fluid",
    "run",
]


class DegenerateUpdateError(ArithmeticError):
    """The updated level set has (numerically) zero norm."""


def _clamped_knots(lo, hi, n, degree):
    inner = np.linspace(lo, hi, n - degree + 1)
    return np.concatenate([np.full(degree, lo), inner, np.full(degree, hi)])


def _gram_1d(t, n, degree, deriv):
    """Exact Gram matrix of (derivatives of) the 1D basis by per-span Gauss rules."""
    xg, wg = np.polynomial.legendre.leggauss(degree + 1)
    G = np.zeros((n, n))
    spans = np.unique(t)
    for a, b in zip(spans[:-1], spans[1:]):
        x = 0.5 * (b - a) * xg + 0.5 * (a + b)
        w = 0.5 * (b - a) * wg
        B = _basis(t, degree, x, deriv)
        G += B.T @ (w[:, None] * B)
    return G


def _basis(t, degree, x, deriv=0):
    """Dense (len(x), n) matrix of basis values (or derivatives) at ``x``."""
    x = np.clip(np.asarray(x, dtype=float), t[0], t[-1])
    n = len(t) - degree - 1
    eye = np.eye(n)
    spl = interpolate.BSpline(t, eye, degree, extrapolate=False)
    if deriv:
        spl = spl.derivative(deriv)
    out = spl(x)
    return np.nan_to_num(out)


@dataclass
class SplineSpace:
    """Tensor-product B-spline space over ``domain = ((x0, y0), (x1, y1))``."""

    domain: tuple
    shape: tuple = (32, 32)
    degree: int = 3

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ValueError("design domain must have positive extent")
        nx, ny = self.shape
        if min(nx, ny) <= self.degree:
            raise ValueError("control net too small for the spline degree")
        self.tx = _clamped_knots(x0, x1, nx, self.degree)
        self.ty = _clamped_knots(y0, y1, ny, self.degree)
        self.Mx = _gram_1d(self.tx, nx, self.degree, 0)
        self.Kx = _gram_1d(self.tx, nx, self.degree, 1)
        self.My = _gram_1d(self.ty, ny, self.degree, 0)
        self.Ky = _gram_1d(self.ty, ny, self.degree, 1)

    def basis_x(self, x, deriv=0):
        return _basis(self.tx, self.degree, x, deriv)

    def basis_y(self, y, deriv=0):
        return _basis(self.ty, self.degree, y, deriv)

    def greville(self):
        """Greville abscissae in each direction."""
        p = self.degree
        gx = np.array([self.tx[i + 1 : i + p + 1].mean() for i in range(self.shape[0])])
        gy = np.array([self.ty[i + 1 : i + p + 1].mean() for i in range(self.shape[1])])
        return gx, gy

    def greville_points(self) -> np.ndarray:
        gx, gy = self.greville()
        X, Y = np.meshgrid(gx, gy, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def inner(self, A, B) -> float:
        """H1 inner product (values plus gradients, unit weights) of two coefficient arrays."""
        MB = self.Mx @ B @ self.My + self.Kx @ B @ self.My + self.Mx @ B @ self.Ky
        return float(np.sum(A * MB))

    def norm(self, A) -> float:
        return float(np.sqrt(max(self.inner(A, A), 0.0)))

    def evaluate(self, coeffs, X, Y) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim == 2 and np.allclose(X, X[:, :1]) and np.allclose(Y, Y[:1, :]):
            return self.basis_x(X[:, 0]) @ coeffs @ self.basis_y(Y[0]).T
        bx = self.basis_x(X.ravel())
        by = self.basis_y(Y.ravel())
        return np.einsum("pi,ij,pj->p", bx, coeffs, by).reshape(X.shape)


@dataclass
class LevelSetField:
    """Level set ``phi`` on a spline space; ``phi > 0`` fluid, ``phi < 0`` rigid."""

    space: SplineSpace
    coeffs: np.ndarray
    t: float = 0.0

    @property
    def domain(self):
        return self.space.domain

    @classmethod
    def uniform_fluid(cls, space: SplineSpace) -> "LevelSetField":
        c = np.ones(space.shape)
        return cls(space, c / space.norm(c))

    def normalised(self) -> "LevelSetField":
        n = self.space.norm(self.coeffs)
        if n < 1e-12:
            raise DegenerateUpdateError("level set norm vanished")
        return LevelSetField(self.space, self.coeffs / n, self.t)

    def evaluate(self, X, Y):
        return self.space.evaluate(self.coeffs, X, Y)

    def rigid_fraction(self, n: int = 101) -> float:
        (x0, y0), (x1, y1) = self.domain
        X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="ij")
        return float(np.mean(self.evaluate(X, Y) < 0))

    def to_dict(self) -> dict:
        return {"domain": [list(p) for p in self.domain], "shape": list(self.space.shape),
                "degree": self.space.degree, "t": self.t, "coeffs": self.coeffs.tolist()}


def _trap_weights(x):
    w = np.zeros(len(x))
    d = np.diff(x)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def project_h1(space: SplineSpace, xs, ys, samples) -> np.ndarray:
    """Coefficients minimising the discrete H1 distance to samples on the grid ``xs x ys``.

    The value term uses trapezoidal weights; gradients of the residual are
    taken by forward differences on the sample grid, weighted by cell size.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    G = np.asarray(samples, dtype=float).reshape(len(xs), len(ys))
    if len(xs) * len(ys) < space.shape[0] * space.shape[1]:
        raise ValueError("fewer samples than control coefficients")
    Bx, By = space.basis_x(xs), space.basis_y(ys)
    wx, wy = _trap_weights(xs), _trap_weights(ys)
    Dx = np.diff(np.eye(len(xs)), axis=0) / np.diff(xs)[:, None]
    Dy = np.diff(np.eye(len(ys)), axis=0) / np.diff(ys)[:, None]
    hx, hy = np.diff(xs), np.diff(ys)
    # (value, value), (x-difference, value), (value, y-difference) terms
    Ax = [(Bx, wx), (Dx @ Bx, hx)]
    Ay = [(By, wy), (Dy @ By, hy)]
    Rx = [np.eye(len(xs)), Dx]
    Ry = [np.eye(len(ys)), Dy]
    n = space.shape[0] * space.shape[1]
    A = np.zeros((n, n))
    rhs = np.zeros(space.shape)
    for i, j in ((0, 0), (1, 0), (0, 1)):
        ax, wxx = Ax[i]
        ay, wyy = Ay[j]
        Gx = ax.T @ (wxx[:, None] * ax)
        Gy = ay.T @ (wyy[:, None] * ay)
        A += np.kron(Gx, Gy)
        rx, ry = Rx[i], Ry[j]
        rhs += ax.T @ (wxx[:, None] * (rx @ G @ ry.T)) @ (wyy[:, None] * ay)
    try:
        cf = linalg.cho_factor(A)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("H1 projection is rank deficient") from exc
    if np.min(np.diag(cf[0])) ** 2 < 1e-13 * np.max(np.diag(A)):
        raise np.linalg.LinAlgError("H1 projection is rank deficient")
    return linalg.cho_solve(cf, rhs.ravel()).reshape(space.shape)


def interpolate_greville(space: SplineSpace, func) -> np.ndarray:
    """Coefficients interpolating ``func(X, Y)`` at the Greville abscissae."""
    gx, gy = space.greville()
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    F = np.asarray(func(X, Y), dtype=float)
    Bx, By = space.basis_x(gx), space.basis_y(gy)
    return np.linalg.solve(Bx, np.linalg.solve(By, F.T).T)


def step(phi: LevelSetField, g: np.ndarray, dt: float, return_direction: bool = False):
    """Explicit Euler step of ``dphi/dt = g - (g, phi) phi`` followed by renormalisation."""
    if g.shape != phi.coeffs.shape:
        raise ValueError("g and phi must share the spline space")
    sp = phi.space
    direction = g - sp.inner(g, phi.coeffs) * phi.coeffs
    new = LevelSetField(sp, phi.coeffs + dt * direction, phi.t + dt).normalised()
    return (new, direction) if return_direction else new


def extend_from_fluid(points, values, inside) -> np.ndarray:
    """Copy each rigid point's value from its nearest fluid point."""
    values = np.array(values, dtype=float)
    inside = np.asarray(inside, dtype=bool)
    if inside.any() and (~inside).any():
        tree = cKDTree(points[~inside])
        _, idx = tree.query(points[inside])
        values[inside] = values[~inside][idx]
    elif inside.all():
        values[:] = 0.0
    return values


@dataclass
class StepRecord:
    step: int
    J: float
    n_div: int
    rigid_fraction: float
    n_elements: int
    dt: float
    wall_time: float
    interval_time: float


@dataclass
class OptimisationHistory:
    records: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    status: str = "running"

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def n_div(self) -> np.ndarray:
        return np.array([r.n_div for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            names = list(StepRecord.__dataclass_fields__)
            w.writerow(names)
            for r in self.records:
                w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


@dataclass
class OptimiserSettings:
    """Knobs for one optimisation run (see the scenario configs for defaults)."""

    domain: tuple
    band: tuple
    obs: np.ndarray
    degrees: tuple = (4, 4)
    delta: float = 1e-2
    maximise: bool = False
    shape: tuple = (32, 32)
    dt: float = 0.5
    max_steps: int = 40
    tol: float = 1e-4
    window: int = 5
    contour_grid: int = 97
    element_size: float | None = None
    direction: tuple = (0.0, 1.0)
    c: float = 1.0
    max_points: int = 64
    max_div: int = 31
    seed_coeffs: np.ndarray | None = None
    output: str | None = None


def run(settings: OptimiserSettings, incident=None) -> tuple[OptimisationHistory, BoundaryMesh]:
    """Level-set optimisation loop.

    Each step extracts the boundary, sweeps the band for J and D_T J at the
    Greville points, projects the (sign-oriented) derivative in H1 and
    updates the level set. The step size is halved whenever J regresses.
    """
    from .bem import PlaneWave

    inc = incident or PlaneWave(tuple(settings.direction))
    space = SplineSpace(tuple(map(tuple, settings.domain)), tuple(settings.shape))
    if settings.seed_coeffs is not None:
        phi = LevelSetField(space, np.asarray(settings.seed_coeffs, dtype=float)).normalised()
    else:
        phi = LevelSetField.uniform_fluid(space)
    pts = space.greville_points()
    gx, gy = space.greville()
    M, N = settings.degrees
    sign = -1.0 if settings.maximise else 1.0
    h = settings.element_size or (space.domain[1][0] - space.domain[0][0]) / (settings.contour_grid - 1)
    hist = OptimisationHistory()
    out = Path(settings.output) if settings.output else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    dt = settings.dt
    mesh = extract_contour(phi, settings.contour_grid, h)
    try:
        for k in range(settings.max_steps):
            t0 = time.perf_counter()
            res = subdivision.sweep(mesh, settings.band, inc, settings.obs, pts, M, N, settings.delta,
                                    settings.c, settings.max_points, max_div=settings.max_div)
            g_pts = extend_from_fluid(pts, sign * res.DJ, res.inside)
            g = project_h1(space, gx, gy, g_pts.reshape(len(gx), len(gy)))
            rec = StepRecord(k, float(res.J), res.plan.n_div, phi.rigid_fraction(), mesh.n_elements, dt,
                             0.0, float(np.mean(res.interval_times)))
            if hist.records:
                prev = hist.records[-1].J
                worse = res.J > prev if not settings.maximise else res.J < prev
                if worse:
                    dt *= 0.5
            gnorm = space.norm(g)
            if gnorm > 0:
                phi = step(phi, g / gnorm, dt)
            mesh_next = extract_contour(phi, settings.contour_grid, h)
            rec.wall_time = time.perf_counter() - t0
            hist.records.append(rec)
            hist.plans.append(res.plan.to_dict())
            hist.meshes.append(mesh)
            log.info("step %d J=%.6g n_div=%d elements=%d dt=%.3g", k, res.J, res.plan.n_div, mesh.n_elements, dt)
            if out:
                mesh.to_csv(out / f"mesh_{k:03d}.csv")
                with open(out / f"levelset_{k:03d}.json", "w") as fh:
                    json.dump(phi.to_dict(), fh)
                with open(out / f"dtj_{k:03d}.csv", "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["x", "y", "value"])
                    for (x, y), v in zip(pts, res.DJ):
                        w.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
            mesh = mesh_next
            if gnorm == 0:
                log.info("zero sensitivity field; level set is stationary")
            J = hist.J
            if len(J) > settings.window:
                recent = J[-settings.window - 1 :]
                if np.max(np.abs(np.diff(recent))) < settings.tol * max(abs(J[-1]), 1e-300):
                    break
        hist.status = "done"
    except Exception:
        hist.status = "failed"
        raise
    finally:
        if out:
            hist.write_csv(out / "history.csv")
    return hist, mesh
