"""Burton-Miller collocation BEM for sound-hard scatterers, over frequency jets.

Every frequency-dependent quantity is carried as an array of scaled Taylor
coefficients in the angular frequency with the order on axis 0. For the
kernels this works because the only frequency dependence enters through
``k = omega / c``: at each quadrature point the Hankel functions are
expanded with :func:`padetopo.jet.hankel_taylor_ode` and the powers of
``omega`` are applied after summation over the quadrature points.

With ``gamma = -i c / omega`` the coupled kernel reduces to::

    W = 1/4 * B1 - omega / (4 c) * (i A1 + B2)

    A1 = int H1(kr) (d.n_y) / r      B1 = int H1(kr) (n_x.n_y) / r
    B2 = int H2(kr) (d.n_x)(d.n_y) / r^2,      d = y - x,

so ``gamma`` never has to be divided through except in the singular self
terms, which are regularised separately.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .jet import cauchy, hankel_taylor_ode, omega_times, inverse_omega_coeffs
from .mesh import BoundaryMesh

log = logging.getLogger(__name__)

__all__ = [
    "PlaneWave",
    "PointSource",
    "BemOperator",
    "BoundarySolution",
    "FieldJets",
    "NearSingularWarning",
    "assemble",
    "solve_primal",
    "solve_adjoint",
    "eval_field",
    "jet_matvec",
    "hankel_jets",
    "gauss_rule",
    "kernel_block",
]

NEAR_FACTOR = 2.0      # near pairs: distance below this many element lengths
CHUNK_POINTS = 400_000  # quadrature points per vectorised batch
EVAL_CHUNK = 2_000_000   # kernel jet entries per field-evaluation batch


class NearSingularWarning(RuntimeWarning):
    """A source or target point lies within one element length of the boundary."""


def gauss_rule(n: int = 8, panels: int = 1):
    """Composite Gauss-Legendre rule on [-1, 1] with ``panels`` equal panels."""
    x, w = np.polynomial.legendre.leggauss(n)
    if panels == 1:
        return x, w
    edges = np.linspace(-1.0, 1.0, panels + 1)
    xs = np.concatenate([0.5 * (a + b) + 0.5 * (b - a) * x for a, b in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
    return xs, ws


REGULAR = gauss_rule(8)
NEAR = gauss_rule(8, 4)
CLOSE = gauss_rule(8, 16)


# ---------------------------------------------------------------------------
# Hankel jets in bulk
# ---------------------------------------------------------------------------

def hankel_jets(s: np.ndarray, omega0: float, order: int, orders=(0, 1, 2)) -> dict:
    """Jets of ``H_nu(omega s)`` for nu in ``orders`` (subset of 0, 1, 2).

    Values come from the cephes J0/Y0/J1/Y1 routines plus the upward
    recurrence; higher Taylor coefficients from Bessel's ODE.
    """
    z = omega0 * s
    h0 = special.j0(z) + 1j * special.y0(z)
    h1 = special.j1(z) + 1j * special.y1(z)
    out = {}
    need2 = 2 in orders
    if need2:
        h2 = 2.0 * h1 / z - h0
    if 0 in orders:
        out[0] = hankel_taylor_ode(0, s, omega0, order, h0, -h1)
    if 1 in orders:
        out[1] = hankel_taylor_ode(1, s, omega0, order, h1, h0 - h1 / z)
    if need2:
        out[2] = hankel_taylor_ode(2, s, omega0, order, h2, h1 - 2.0 * h2 / z)
    return out


def omega_power(h: np.ndarray, omega0: float, power: int, scale: complex = 1.0) -> np.ndarray:
    """``scale * omega**power * h`` on coefficient arrays (power >= 0)."""
    out = h
    for _ in range(power):
        out = omega_times(out, omega0)
    return scale * out


# ---------------------------------------------------------------------------
# pairwise element integrals
# ---------------------------------------------------------------------------

def _pair_integrals(x, nx, elem, mesh: BoundaryMesh, rule, c, omega0, K, mode):
    """Quadrature sums over (target point, element) pairs.

    Parameters
    ----------
    x : (Q, 2) target points; nx : (Q, 2) target normals or None
    elem : (Q,) element indices
    mode : 'bm' -> (B1, Qsum=i A1 + B2); 'dl' -> (A1,);
           'grad' -> (A1, G1x, G1y, G2x, G2y)
    Returns arrays of shape (K+1, Q).
    """
    xi, wq = rule
    half = 0.5 * mesh.length[elem]
    t = mesh.tangent[elem]
    ny = mesh.normal[elem]
    y = mesh.midpoint[elem][:, None, :] + (half[:, None] * xi[None, :])[..., None] * t[:, None, :]
    w = half[:, None] * wq[None, :]
    d = y - x[:, None, :]
    r = np.hypot(d[..., 0], d[..., 1])
    dny = (d[..., 0] * ny[:, None, 0] + d[..., 1] * ny[:, None, 1]) / r
    s = r / c
    if mode == "dl":
        H = hankel_jets(s, omega0, K, orders=(1,))
        return (np.einsum("kqg,qg->kq", H[1], w * dny),)
    H = hankel_jets(s, omega0, K, orders=(1, 2))
    if mode == "bm":
        dnx = (d[..., 0] * nx[:, None, 0] + d[..., 1] * nx[:, None, 1]) / r
        nn = (nx[:, 0] * ny[:, 0] + nx[:, 1] * ny[:, 1])[:, None]
        B1 = np.einsum("kqg,qg->kq", H[1], w * nn / r)
        Qs = np.einsum("kqg,qg->kq", H[1], 1j * w * dny) + np.einsum("kqg,qg->kq", H[2], w * dnx * dny)
        return B1, Qs
    if mode == "grad":
        A1 = np.einsum("kqg,qg->kq", H[1], w * dny)
        G1x = np.einsum("kqg,qg->kq", H[1], w * ny[:, None, 0] / r)
        G1y = np.einsum("kqg,qg->kq", H[1], w * ny[:, None, 1] / r)
        G2x = np.einsum("kqg,qg->kq", H[2], w * d[..., 0] * dny / r)
        G2y = np.einsum("kqg,qg->kq", H[2], w * d[..., 1] * dny / r)
        return A1, G1x, G1y, G2x, G2y
    raise ValueError(f"unknown mode {mode!r}")


def _all_pairs(x, nx, mesh, c, omega0, K, mode, skip_self=False, elems=None, target_elems=None):
    """Sums for every (target, element) pair, with near-pair refinement.

    ``elems`` restricts the columns to a subset of elements; with
    ``skip_self`` the pairs ``elems[j] == target_elems[i]`` are left at zero
    (``target_elems`` defaults to ``arange(P)``). Returns a tuple of
    (K+1, P, len(elems)) arrays.
    """
    P = x.shape[0]
    elems = np.arange(mesh.n_elements) if elems is None else np.asarray(elems, dtype=int)
    if skip_self and target_elems is None:
        target_elems = np.arange(P)
    N = elems.size
    ng = len(REGULAR[0])
    nterm = {"bm": 2, "dl": 1, "grad": 5}[mode]
    out = [np.zeros((K + 1, P, N), dtype=complex) for _ in range(nterm)]
    if P == 0 or N == 0:
        return tuple(out)
    rows = max(1, CHUNK_POINTS // max(1, N * ng))
    for a in range(0, P, rows):
        b = min(P, a + rows)
        pi = np.repeat(np.arange(a, b), N)
        ej = np.tile(np.arange(N), b - a)
        if skip_self:
            keep = elems[ej] != target_elems[pi]
            pi, ej = pi[keep], ej[keep]
        res = _pair_integrals(x[pi], None if nx is None else nx[pi], elems[ej], mesh, REGULAR,
                              c, omega0, K, mode)
        for o, v in zip(out, res):
            o[:, pi, ej] = v
    # near-singular refinement
    dist = _point_element_distance(x, mesh, elems)
    L = mesh.length[elems][None, :]
    self_mask = (target_elems[:, None] == elems[None, :]) if skip_self else None
    for rule, lo, hi in ((NEAR, 0.25, NEAR_FACTOR), (CLOSE, 0.0, 0.25)):
        near = (dist < hi * L) & (dist >= lo * L)
        if skip_self:
            near &= ~self_mask
        pi, ej = np.nonzero(near)
        if pi.size == 0:
            continue
        step = max(1, CHUNK_POINTS // len(rule[0]))
        for a in range(0, pi.size, step):
            sl = slice(a, a + step)
            res = _pair_integrals(x[pi[sl]], None if nx is None else nx[pi[sl]], elems[ej[sl]], mesh, rule,
                                  c, omega0, K, mode)
            for o, v in zip(out, res):
                o[:, pi[sl], ej[sl]] = v
    return tuple(out)


def _point_element_distance(x, mesh, elems=None):
    elems = slice(None) if elems is None else elems
    start = mesh.start[elems]
    d = mesh.end[elems] - start
    rel = x[:, None, :] - start[None, :, :]
    tau = np.clip(np.einsum("pnk,nk->pn", rel, d) / mesh.length[elems] ** 2, 0.0, 1.0)
    diff = rel - tau[..., None] * d[None]
    return np.hypot(diff[..., 0], diff[..., 1])


def _self_terms(mesh: BoundaryMesh, c, omega0, K, n_gauss=16, elems=None):
    """Finite-part hypersingular self integrals times gamma, shape (K+1, N).

    The kernel on a straight element reduces to (i k / 4) H1(k|t|)/|t|. Its
    Laplace-like singular part ``1/(2 pi t^2) - k^2/(4 pi) ln|t|`` has the
    closed-form finite part ``-2/(pi L) - k^2/(4 pi) * L (ln(L/2) - 1)``;
    the bounded remainder is integrated by Gauss-Legendre on each half.
    """
    L = mesh.length if elems is None else mesh.length[elems]
    a = 0.5 * L
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    t = a[:, None] * 0.5 * (xg[None, :] + 1.0)          # (N, g) on (0, a)
    w = a[:, None] * 0.5 * wg[None, :]
    H1 = hankel_jets(t / c, omega0, K, orders=(1,))[1]  # (K+1, N, g)
    kern = omega_times(H1 / t, omega0, 1j / (4.0 * c))
    w2 = np.zeros(K + 1)
    w2[0] = omega0**2
    if K >= 1:
        w2[1] = 2 * omega0
    if K >= 2:
        w2[2] = 1.0
    sing = -w2[:, None, None] * np.log(t)[None] / (4 * np.pi * c**2)
    sing[0] += 1.0 / (2 * np.pi * t**2)
    rem = 2.0 * np.einsum("knj,nj->kn", kern - sing, w)
    fp = -w2[:, None] * (2 * a * (np.log(a) - 1.0))[None] / (4 * np.pi * c**2)
    fp[0] += -2.0 / (np.pi * L)
    hs = rem + fp
    gamma = -1j * c * inverse_omega_coeffs(omega0, K)
    return cauchy(gamma[:, None], hs)


def _coupled_kernel(B1, Qs, omega0, c):
    return 0.25 * B1 - omega_times(Qs, omega0, 1.0 / (4.0 * c))


def kernel_block(mesh: BoundaryMesh, omega0: float, K: int, c: float, x, nx=None, elems=None,
                 target_elems=None) -> np.ndarray:
    """Jets of element-integrated kernels for targets ``x`` against ``elems``.

    With normals ``nx`` this is the Burton-Miller kernel W (self terms
    included where ``target_elems`` matches a column); without, it is the
    double-layer kernel ``dG/dn_y``. Shape (K+1, P, len(elems)).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    elems = np.arange(mesh.n_elements) if elems is None else np.asarray(elems, dtype=int)
    if nx is None:
        (A1,) = _all_pairs(x, None, mesh, c, omega0, K, "dl", elems=elems)
        return omega_times(A1, omega0, -0.25j / c)
    if target_elems is None:
        target_elems = np.full(x.shape[0], -1)
    target_elems = np.asarray(target_elems, dtype=int)
    B1, Qs = _all_pairs(x, np.atleast_2d(nx), mesh, c, omega0, K, "bm", skip_self=True,
                        elems=elems, target_elems=target_elems)
    W = _coupled_kernel(B1, Qs, omega0, c)
    pi, ej = np.nonzero(target_elems[:, None] == elems[None, :])
    if pi.size:
        W[:, pi, ej] = _self_terms(mesh, c, omega0, K, elems=elems[ej])
    return W


# ---------------------------------------------------------------------------
# incident fields
# ---------------------------------------------------------------------------

def _plane_coeffs(phase, omega0, K):
    m = np.arange(K + 1).reshape((-1,) + (1,) * np.ndim(phase))
    fact = np.array([math.factorial(k) for k in range(K + 1)], dtype=float).reshape(m.shape)
    return (1j * phase) ** m * np.exp(1j * omega0 * phase) / fact


@dataclass(frozen=True)
class PlaneWave:
    """Incident plane wave ``amplitude * exp(i omega d.x / c)``."""

    direction: tuple = (0.0, 1.0)
    amplitude: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("plane-wave direction must be a unit vector")

    def field(self, points, omega0, K, c, gradient=False):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.asarray(self.direction, dtype=float)
        u = self.amplitude * _plane_coeffs(p @ d / c, omega0, K)
        if not gradient:
            return u, None
        g = np.stack([omega_times(u, omega0, 1j * d[j] / c) for j in range(2)], axis=-1)
        return u, g

    def boundary_rhs(self, mesh, omega0, K, c):
        # u_in + gamma q_in = (1 + d.n) u_in because gamma * (i omega / c) = 1
        u, _ = self.field(mesh.midpoint, omega0, K, c)
        return u * (1.0 + mesh.normal @ np.asarray(self.direction, dtype=float))[None, :]


@dataclass(frozen=True)
class PointSource:
    """Free-space source ``G(x, position)``; drives the adjoint problem."""

    position: tuple

    def field(self, points, omega0, K, c, gradient=False):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        rho = p - np.asarray(self.position, dtype=float)
        r = np.hypot(rho[:, 0], rho[:, 1])
        if np.any(r == 0):
            log.warning("field requested at the source position; returning nan there")
            r = np.where(r == 0, np.nan, r)
        H = hankel_jets(r / c, omega0, K, orders=(0, 1))
        u = 0.25j * H[0]
        if not gradient:
            return u, None
        g = np.stack([omega_times(H[1] * (rho[:, j] / r), omega0, -0.25j / c) for j in range(2)], axis=-1)
        return u, g

    def boundary_rhs(self, mesh, omega0, K, c):
        # G + gamma dG/dn_x = (i/4) H0 - (1/4) H1 (rho.n_x)/r
        rho = mesh.midpoint - np.asarray(self.position, dtype=float)
        r = np.hypot(rho[:, 0], rho[:, 1])
        H = hankel_jets(r / c, omega0, K, orders=(0, 1))
        rn = np.einsum("ij,ij->i", rho, mesh.normal) / r
        return 0.25j * H[0] - 0.25 * H[1] * rn[None, :]


# ---------------------------------------------------------------------------
# operator, solves
# ---------------------------------------------------------------------------

def jet_matvec(W: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Jet-valued matrix-vector product ``(W v)_n = sum_m W_m v_{n-m}``.

    ``W`` has shape (K+1, T, N); ``v`` has shape (K+1, N, ...).
    """
    K1 = W.shape[0]
    out = np.zeros((K1, W.shape[1]) + v.shape[2:], dtype=complex)
    for n in range(K1):
        for m in range(n + 1):
            if np.any(v[n - m]):
                out[n] += W[m] @ v[n - m]
    return out


@dataclass
class BemOperator:
    """Assembled Burton-Miller operator for one (mesh, omega0, c).

    Attributes
    ----------
    W : (K+1, N, N) complex
        Jets of the element-integrated kernel W (order 0 is the usual matrix).
    lu : LU factors of ``I/2 + W[0]``.
    """

    mesh: BoundaryMesh
    omega0: float
    c: float
    order: int
    W: np.ndarray
    lu: tuple
    solves: int = 0

    factorisations = 0  # class-wide bookkeeping counter

    def solve(self, rhs: np.ndarray, rhs_sum=None) -> np.ndarray:
        """Recursive derivative solves for jet right-hand sides.

        ``rhs`` has shape (K'+1, N, ...) with K' <= order. ``rhs_sum``, if
        given, is a callable ``(u, n) -> sum_{m>=1} W_m u_{n-m}`` replacing
        the dense product (used by the FMM path).
        """
        K = rhs.shape[0] - 1
        if K < 0:
            raise ValueError("negative jet order")
        if K > self.order:
            raise ValueError(f"operator assembled to order {self.order}, asked for {K}")
        u = np.zeros(rhs.shape, dtype=complex)
        for n in range(K + 1):
            b = np.array(rhs[n], dtype=complex)
            if n:
                if rhs_sum is None:
                    for m in range(1, n + 1):
                        b -= self.W[m] @ u[n - m]
                else:
                    b -= rhs_sum(u, n)
            u[n] = linalg.lu_solve(self.lu, b)
        self.solves += 1
        return u


def assemble(mesh: BoundaryMesh, omega0: float, order: int, c: float = 1.0) -> BemOperator:
    """Assemble the jet kernel and LU-factorise ``I/2 + W_0``."""
    if omega0 <= 0:
        raise ValueError("omega0 must be positive")
    if order < 0:
        raise ValueError("order must be non-negative")
    N = mesh.n_elements
    B1, Qs = _all_pairs(mesh.midpoint, mesh.normal, mesh, c, omega0, order, "bm", skip_self=True)
    W = _coupled_kernel(B1, Qs, omega0, c)
    idx = np.arange(N)
    W[:, idx, idx] = _self_terms(mesh, c, omega0, order)
    A = 0.5 * np.eye(N) + W[0]
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            lu = linalg.lu_factor(A, check_finite=True)
        except (linalg.LinAlgWarning, ValueError) as exc:
            raise np.linalg.LinAlgError(f"Burton-Miller matrix is singular at omega={omega0}") from exc
    if np.any(np.abs(np.diag(lu[0])) == 0):
        raise np.linalg.LinAlgError(f"Burton-Miller matrix is singular at omega={omega0}")
    BemOperator.factorisations += 1
    log.debug("assembled %d elements at omega0=%g, order %d", N, omega0, order)
    return BemOperator(mesh, omega0, c, order, W, lu)


def plain_bie_matrix(mesh: BoundaryMesh, omega0: float, c: float = 1.0) -> np.ndarray:
    """Order-0 matrix of the conventional (non-coupled) BIE ``I/2 + D``.

    Kept for comparison: it is singular near interior Dirichlet eigenvalues.
    """
    (A1,) = _all_pairs(mesh.midpoint, None, mesh, c, omega0, 0, "dl", skip_self=True)
    D = (-0.25j * omega0 / c) * A1[0]
    np.fill_diagonal(D, 0.0)
    return 0.5 * np.eye(mesh.n_elements) + D


@dataclass
class BoundarySolution:
    """Boundary jets of u (shape (K+1, N, nsrc)) and the sources that produced them."""

    u: np.ndarray
    omega0: float
    sources: list
    operator: BemOperator = field(repr=False)

    @property
    def order(self) -> int:
        return self.u.shape[0] - 1


def _solve(op, sources, K, rhs_sum=None):
    if K < 0:
        raise ValueError("negative jet order")
    if op.mesh.n_elements == 0:
        return BoundarySolution(np.zeros((K + 1, 0, len(sources)), complex), op.omega0, list(sources), op)
    rhs = np.stack([s.boundary_rhs(op.mesh, op.omega0, K, op.c) for s in sources], axis=-1)
    return BoundarySolution(op.solve(rhs, rhs_sum), op.omega0, list(sources), op)


def solve_primal(op: BemOperator, incident, order: int | None = None, rhs_sum=None) -> BoundarySolution:
    """Boundary jets of the total field for one incident field (or a list)."""
    K = op.order if order is None else order
    sources = incident if isinstance(incident, (list, tuple)) else [incident]
    return _solve(op, sources, K, rhs_sum)


def solve_adjoint(op: BemOperator, x_obs, order: int | None = None, rhs_sum=None) -> BoundarySolution:
    """Adjoint boundary jets for point sources at each observation point."""
    K = op.order if order is None else order
    pts = np.atleast_2d(np.asarray(x_obs, dtype=float))
    if op.mesh.n_elements:
        dist = op.mesh.distance_to(pts)
        close = dist < op.mesh.length.max()
        if np.any(close):
            warnings.warn(f"observation points within one element of the boundary: {pts[close].tolist()}",
                          NearSingularWarning, stacklevel=2)
    return _solve(op, [PointSource(tuple(p)) for p in pts], K, rhs_sum)


@dataclass
class FieldJets:
    """Jets of u (K+1, P, nsrc) and optionally grad u (K+1, P, nsrc, 2)."""

    u: np.ndarray
    grad: np.ndarray | None
    inside: np.ndarray


def eval_field(sol: BoundarySolution, points, gradient: bool = False, order: int | None = None) -> FieldJets:
    """Interior representation ``u = u_in - int dG/dn_y u`` (and its gradient)."""
    op = sol.operator
    mesh, c, w0 = op.mesh, op.c, sol.omega0
    K = sol.order if order is None else order
    p = np.atleast_2d(np.asarray(points, dtype=float))
    ub = sol.u[: K + 1]
    nsrc = ub.shape[2]
    u = np.zeros((K + 1, p.shape[0], nsrc), dtype=complex)
    g = np.zeros((K + 1, p.shape[0], nsrc, 2), dtype=complex) if gradient else None
    for j, s in enumerate(sol.sources):
        ui, gi = s.field(p, w0, K, c, gradient)
        u[:, :, j] = ui
        if gradient:
            g[:, :, j, :] = gi
    inside = mesh.contains(p) if mesh.n_elements else np.zeros(p.shape[0], bool)
    if np.any(inside):
        log.warning("%d evaluation points lie inside rigid regions", int(inside.sum()))
    if mesh.n_elements == 0:
        return FieldJets(u, g, inside)
    step = max(1, EVAL_CHUNK // ((K + 1) * mesh.n_elements * (5 if gradient else 1)))
    for a in range(0, p.shape[0], step):
        sl = slice(a, a + step)
        if not gradient:
            (A1,) = _all_pairs(p[sl], None, mesh, c, w0, K, "dl")
            u[:, sl] -= omega_times(jet_matvec(A1, ub), w0, -0.25j / c)
            continue
        A1, G1x, G1y, G2x, G2y = _all_pairs(p[sl], None, mesh, c, w0, K, "grad")
        u[:, sl] -= omega_times(jet_matvec(A1, ub), w0, -0.25j / c)
        for j, (G1, G2) in enumerate(((G1x, G2x), (G1y, G2y))):
            t2 = omega_power(jet_matvec(G2, ub), w0, 2, -0.25j / c**2)
            t1 = omega_times(jet_matvec(G1, ub), w0, 0.25j / c)
            g[:, sl, :, j] -= t2 + t1
    return FieldJets(u, g, inside)


def solve_frequency(mesh: BoundaryMesh, omega: float, incident, points, c: float = 1.0) -> np.ndarray:
    """Order-0 field at ``points`` for one frequency (brute-force sweeps)."""
    op = assemble(mesh, omega, 0, c)
    sol = solve_primal(op, incident)
    return eval_field(sol, points).u[0, :, 0]
