"""Topological derivatives of the observation responses and of the band objective.

The derivative of the response at an observation point with respect to the
nucleation of a small rigid disc at ``x`` is evaluated with the adjoint
field and then pushed through every stage of the indirect estimator: Pade
coefficients, hat coefficients, polynomial division, poles, residues and
the closed-form integral. All stage functions are vectorised over a
trailing axis of evaluation points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import bem, pade
from .jet import cauchy, omega_times
from .mesh import BoundaryMesh, build_circle, concatenate

log = logging.getLogger(__name__)

__all__ = [
    "NearMultiplePoleError",
    "GeometryError",
    "DtPartialFraction",
    "ResponseJets",
    "dt_u_jet",
    "response_jets",
    "dt_pade_coeffs",
    "dt_hat_coeffs",
    "dt_divide",
    "dt_poles",
    "dt_residues",
    "dt_partial_fractions",
    "dt_objective",
    "dt_f_rational",
    "indirect_sensitivity",
    "hole_responses",
    "fd_topological_derivative",
]


class NearMultiplePoleError(ArithmeticError):
    """The denominator derivative vanishes at a pole."""


class GeometryError(ValueError):
    """A probing hole would intersect an existing boundary."""


# ---------------------------------------------------------------------------
# response derivatives
# ---------------------------------------------------------------------------

def dt_u_jet(u, grad_u, ut, grad_ut, omega0: float, c: float = 1.0) -> np.ndarray:
    """Jets of ``2 grad(ut).grad(u) - (omega/c)^2 ut u``.

    ``u``/``ut`` have the jet order on axis 0; gradients carry a last axis
    of length 2. Broadcasting over the remaining axes is allowed.
    """
    g = 2.0 * (cauchy(grad_ut[..., 0], grad_u[..., 0]) + cauchy(grad_ut[..., 1], grad_u[..., 1]))
    uu = cauchy(ut, u)
    w2 = omega_times(omega_times(uu, omega0), omega0, 1.0 / c**2)
    return g - w2


@dataclass
class ResponseJets:
    """Observation-point jets and their topological derivatives at evaluation points.

    Attributes
    ----------
    u_obs : (K+1, n_obs) jets of u at the observation points
    dtu : (K+1, n_pts, n_obs) jets of D_T u_obs at the evaluation points
    inside : (n_pts,) evaluation points lying inside rigid material
    """

    omega0: float
    u_obs: np.ndarray
    dtu: np.ndarray
    inside: np.ndarray


def response_jets(op: bem.BemOperator, incident, obs, points, order: int | None = None,
                  rhs_sum=None) -> ResponseJets:
    """Primal and adjoint solves on one factorisation, then D_T u at ``points``."""
    K = op.order if order is None else order
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    prim = bem.solve_primal(op, incident, K, rhs_sum)
    adj = bem.solve_adjoint(op, obs, K, rhs_sum)
    u_obs = bem.eval_field(prim, obs).u[:, :, 0]
    if pts.shape[0] == 0:
        return ResponseJets(op.omega0, u_obs, np.zeros((K + 1, 0, obs.shape[0]), complex), np.zeros(0, bool))
    fp = bem.eval_field(prim, pts, gradient=True)
    fa = bem.eval_field(adj, pts, gradient=True)
    dtu = dt_u_jet(fp.u, fp.grad, fa.u, fa.grad, op.omega0, op.c)
    return ResponseJets(op.omega0, u_obs, dtu, fp.inside)


# ---------------------------------------------------------------------------
# chain rule stages
# ---------------------------------------------------------------------------

def _conv0(a, b):
    """Convolution along axis 0 with broadcasting over trailing axes."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = a.shape[0] + b.shape[0] - 1
    out = np.zeros((n,) + np.broadcast_shapes(a.shape[1:], b.shape[1:]), dtype=np.result_type(a, b))
    for i in range(a.shape[0]):
        out[i : i + b.shape[0]] += a[i] * b
    return out


def _col(x, ndim):
    x = np.asarray(x)
    return x.reshape(x.shape + (1,) * (ndim - x.ndim))


def dt_pade_coeffs(pa: pade.PadeApproximant, a, b):
    """Topological derivatives of the Pade coefficients.

    ``a`` are the u coefficients (at least M+N+1), ``b`` their derivatives
    with shape (M+N+1, ...). The denominator block is the same matrix as in
    the fit; the system is solved by the same minimal-residual iteration.
    Returns ``(Dp, Dq)`` with ``Dq[0] = 0``.
    """
    M, N = pa.M, pa.N
    a = np.asarray(a, dtype=complex)[: M + N + 1]
    b = np.asarray(b, dtype=complex)[: M + N + 1]
    tail = b.shape[1:]
    B = b.reshape(M + N + 1, -1)
    q = np.asarray(pa.q, dtype=complex)
    Dq = np.zeros((N + 1, B.shape[1]), dtype=complex)
    if N > 0:
        C = pade._pade_matrix(a, M, N)
        rhs = np.zeros((N, B.shape[1]), dtype=complex)
        for r in range(N):
            i = M + 1 + r
            for j in range(0, N + 1):
                if i - j >= 0:
                    rhs[r] -= B[i - j] * q[j]
        sol, res = pade.gmres(C, rhs)
        Dq[1:] = sol
    Dp = np.zeros((M + 1, B.shape[1]), dtype=complex)
    for i in range(M + 1):
        for j in range(0, min(i, N) + 1):
            Dp[i] += B[i - j] * q[j] + a[i - j] * Dq[j]
    return Dp.reshape((M + 1,) + tail), Dq.reshape((N + 1,) + tail)


def dt_hat_coeffs(p, q, Dp, Dq):
    """Derivatives of ``p_hat = 1/2 p * conj(p)`` and ``q_hat = q * conj(q)`` (real)."""
    p = _col(np.asarray(p, dtype=complex), np.ndim(Dp))
    q = _col(np.asarray(q, dtype=complex), np.ndim(Dq))
    Dph = 0.5 * (_conv0(p, np.conj(Dp)) + _conv0(Dp, np.conj(p)))
    Dqh = _conv0(q, np.conj(Dq)) + _conv0(Dq, np.conj(q))
    return Dph.real, Dqh.real


def dt_divide(p_hat, q_hat, Dp_hat, Dq_hat):
    """Polynomial division carrying topological derivatives (Algorithm 2).

    Returns ``(r, p_rem, Dr, Dp_rem)``; the derivative outputs keep the
    trailing axes of ``Dp_hat``.
    """
    p = np.array(p_hat, dtype=float)
    q = np.asarray(q_hat, dtype=float)
    Dp = np.array(Dp_hat, dtype=float)
    Dq = _col(np.asarray(Dq_hat, dtype=float), Dp.ndim)
    M2, N2 = len(p) - 1, len(q) - 1
    if M2 < N2:
        raise ValueError("dt_divide requires deg p >= deg q")
    if q[N2] == 0:
        raise ZeroDivisionError("leading denominator coefficient is zero")
    r = np.zeros(M2 - N2 + 1)
    Dr = np.zeros((M2 - N2 + 1,) + Dp.shape[1:])
    for i in range(M2 - N2, -1, -1):
        r[i] = p[i + N2] / q[N2]
        Dr[i] = (Dp[i + N2] * q[N2] - p[i + N2] * Dq[N2]) / q[N2] ** 2
        for j in range(N2 + 1):
            p[i + j] -= r[i] * q[j]
            Dp[i + j] -= Dr[i] * q[j] + r[i] * Dq[j]
    return r, p[:N2].copy(), Dr, Dp[:N2].copy()


def dt_poles(q, Dq, u_poles, omega0: float) -> np.ndarray:
    """Pole motion from the implicit function theorem, conjugated for the mirror half.

    Returns shape (2N, ...): the u poles first, then their conjugates.
    """
    q = np.asarray(q, dtype=complex)
    z = np.asarray(u_poles, dtype=complex) - omega0
    dq = pade._dhorner(q, z)
    scale = max(1.0, float(np.abs(q).max()))
    if np.any(np.abs(dq) < 1e-10 * scale):
        raise NearMultiplePoleError("denominator derivative vanishes at a pole")
    Dq = np.asarray(Dq, dtype=complex)
    num = np.zeros((z.size,) + Dq.shape[1:], dtype=complex)
    for j in range(Dq.shape[0]):
        num += Dq[j] * _col(z**j, Dq.ndim)
    Da = -num / _col(dq, Dq.ndim)
    return np.concatenate([Da, np.conj(Da)])


def dt_residues(p_rem, Dp_rem, qN, DqN, poles, Dpoles, residues, omega0: float) -> np.ndarray:
    """Derivative of the cover-up residues (numerator, pole motion and log-derivative terms)."""
    a = np.asarray(poles, dtype=complex)
    z = a - omega0
    n2 = a.size
    Dpoles = np.asarray(Dpoles, dtype=complex)
    nd = Dpoles.ndim
    Dp_rem = np.asarray(Dp_rem, dtype=float)
    diff = a[:, None] - a[None, :]
    np.fill_diagonal(diff, 1.0)
    denom = qN * np.prod(diff, axis=1)
    num_d = np.zeros(Dpoles.shape, dtype=complex)
    for j in range(Dp_rem.shape[0]):
        num_d += Dp_rem[j] * _col(z**j, nd)
    dnum = pade._dhorner(np.asarray(p_rem, dtype=float), z)
    num = pade.horner(np.asarray(p_rem, dtype=float), z)
    logd = np.zeros(Dpoles.shape, dtype=complex)
    for i in range(n2):
        for j in range(n2):
            if i != j:
                logd[i] += (Dpoles[i] - Dpoles[j]) / (a[i] - a[j])
    logd += np.asarray(DqN) / qN
    return (num_d + Dpoles * _col(dnum, nd) - logd * _col(num, nd)) / _col(denom, nd)


@dataclass
class DtPartialFraction:
    """Topological derivatives of a partial-fraction form (trailing axis over points)."""

    Dr: np.ndarray
    Dpoles: np.ndarray
    Dresidues: np.ndarray
    Dp_hat: np.ndarray
    Dq_hat: np.ndarray


def dt_partial_fractions(fit: pade.IndirectFit, a, b) -> DtPartialFraction:
    """Run the whole chain for one observation point and many evaluation points."""
    pa, pf = fit.pade, fit.pf
    Dp, Dq = dt_pade_coeffs(pa, a, b)
    Dph, Dqh = dt_hat_coeffs(pa.p, pa.q, Dp, Dq)
    ph, qh = fit.rf.p_hat, fit.rf.q_hat
    N2 = len(qh) - 1
    if N2 == 0:
        Dr = (Dph * qh[0] - _col(ph, Dph.ndim) * Dqh[0]) / qh[0] ** 2
        empty = np.zeros((0,) + Dph.shape[1:], complex)
        return DtPartialFraction(Dr, empty, empty, Dph, Dqh)
    if len(ph) - 1 >= N2:
        _, _, Dr, Dprem = dt_divide(ph, qh, Dph, Dqh)
    else:
        Dr = np.zeros((0,) + Dph.shape[1:])
        Dprem = np.zeros((N2,) + Dph.shape[1:])
        Dprem[: len(ph)] = Dph
    Da = dt_poles(pa.q, Dq, fit.u_poles, pa.omega0)
    DA = dt_residues(pf.p_rem, Dprem, qh[N2], Dqh[N2], pf.poles, Da, pf.residues, pa.omega0)
    return DtPartialFraction(Dr, Da, DA, Dph, Dqh)


def dt_objective(pf: pade.PartialFractionForm, dt: DtPartialFraction, w1: float, w2: float) -> np.ndarray:
    """Band integral of D_T f over ``[w1, w2]`` (not yet divided by the width)."""
    pade.check_poles(pf.poles, w1, w2)
    nd = dt.Dresidues.ndim if dt.Dresidues.size else dt.Dr.ndim
    out = 0.0
    if len(dt.Dr):
        i = np.arange(len(dt.Dr))
        z1, z2 = w1 - pf.omega0, w2 - pf.omega0
        out = out + np.sum(dt.Dr * _col((z2 ** (i + 1) - z1 ** (i + 1)) / (i + 1), nd), axis=0)
    if len(pf.poles):
        a = pf.poles
        logs = _col(np.log(w2 - a) - np.log(w1 - a), nd)
        inv = _col(1.0 / (w2 - a) - 1.0 / (w1 - a), nd)
        A = _col(pf.residues, nd)
        out = out + np.sum(dt.Dresidues * logs - A * dt.Dpoles * inv, axis=0)
    return np.real(out)


def dt_f_rational(rf: pade.RationalF, Dp_hat, Dq_hat, omega) -> np.ndarray:
    """Quotient-rule estimate of D_T f at frequencies ``omega``.

    Returns shape ``omega.shape + Dp_hat.shape[1:]``.
    """
    z = np.asarray(omega, dtype=float) - rf.omega0
    zz = z.reshape(z.shape + (1,) * (np.ndim(Dp_hat) - 1))
    P = pade.horner(rf.p_hat, z)
    Q = pade.horner(rf.q_hat, z)
    DP = sum(Dp_hat[i] * zz**i for i in range(Dp_hat.shape[0]))
    DQ = sum(Dq_hat[i] * zz**i for i in range(Dq_hat.shape[0]))
    P = P.reshape(zz.shape)
    Q = Q.reshape(zz.shape)
    return np.real(DP / Q - P * DQ / Q**2)


def indirect_sensitivity(rj: ResponseJets, M: int, N: int, band, limits=None):
    """Objective contribution and its topological derivative for one expansion centre.

    ``band`` is the full target band (used for the normalisation) and
    ``limits`` the integration interval of this centre (defaults to the band).
    Returns ``(J, DJ, fits, dts)`` where J and DJ are already divided by
    ``N_obs * (w2 - w1)`` of the full band.
    """
    w1, w2 = band
    lo, hi = (w1, w2) if limits is None else limits
    n_obs = rj.u_obs.shape[1]
    J = 0.0
    DJ = np.zeros(rj.dtu.shape[1])
    fits, dts = [], []
    for i in range(n_obs):
        ft = pade.indirect_fit(rj.u_obs[: M + N + 1, i], M, N, rj.omega0)
        J += pade.integrate_pf(ft.pf, lo, hi)
        dt = dt_partial_fractions(ft, rj.u_obs[:, i], rj.dtu[:, :, i])
        DJ += dt_objective(ft.pf, dt, lo, hi)
        fits.append(ft)
        dts.append(dt)
    scale = 1.0 / (n_obs * (w2 - w1))
    return J * scale, DJ * scale, fits, dts


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def _hole_system(mesh, hole, omega, c, incident, obs, base):
    """Responses at ``obs`` with a hole, reusing the base factorisation."""
    comb = concatenate([mesh, hole]) if mesh.n_elements else hole
    Nb, Nh = mesh.n_elements, hole.n_elements
    bidx, hidx = np.arange(Nb), Nb + np.arange(Nh)
    D = 0.5 * np.eye(Nh) + bem.kernel_block(comb, omega, 0, c, hole.midpoint, hole.normal, hidx, hidx)[0]
    rhs = incident.boundary_rhs(comb, omega, 0, c)[0]
    if Nb:
        lu, ub0 = base
        B = bem.kernel_block(comb, omega, 0, c, mesh.midpoint, mesh.normal, hidx, bidx)[0]
        C = bem.kernel_block(comb, omega, 0, c, hole.midpoint, hole.normal, bidx, hidx)[0]
        AiB = linalg.lu_solve(lu, B)
        S = D - C @ AiB
        uh = np.linalg.solve(S, rhs[Nb:] - C @ ub0)
        ub = ub0 - AiB @ uh
        u = np.concatenate([ub, uh])
    else:
        u = np.linalg.solve(D, rhs)
    DL = bem.kernel_block(comb, omega, 0, c, obs)[0]
    u_in, _ = incident.field(obs, omega, 0, c)
    return u_in[0] - DL @ u


def hole_responses(mesh: BoundaryMesh, points, eps: float, omegas, incident, obs, c: float = 1.0,
                   n_hole: int = 100, check: bool = True, hole: bool = True):
    """Observation responses with and without a small rigid disc at each point.

    Returns ``(u_base, u_hole)`` with shapes (n_freq, n_obs) and
    (n_freq, n_pts, n_obs). The base operator is factorised once per
    frequency and the hole enters through a Schur complement. With
    ``hole=False`` the base responses are repeated (baseline check).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if check and mesh.n_elements:
        dist = mesh.distance_to(pts)
        inside = mesh.contains(pts)
        bad = (dist <= 2 * eps) | inside
        if np.any(bad):
            raise GeometryError(f"hole at {pts[bad][0].tolist()} intersects an existing boundary")
    holes = [build_circle(p, eps, n_hole) for p in pts]
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    u_base = np.empty((omegas.size, obs.shape[0]), complex)
    u_hole = np.empty((omegas.size, pts.shape[0], obs.shape[0]), complex)
    for k, w in enumerate(omegas):
        base = None
        if mesh.n_elements:
            op = bem.assemble(mesh, w, 0, c)
            ub0 = op.solve(incident.boundary_rhs(mesh, w, 0, c))[0]
            base = (op.lu, ub0)
            u_base[k] = bem.eval_field(bem.BoundarySolution(ub0[None, :, None], w, [incident], op), obs).u[0, :, 0]
        else:
            u_base[k] = incident.field(obs, w, 0, c)[0][0]
        for j, h in enumerate(holes):
            u_hole[k, j] = _hole_system(mesh, h, w, c, incident, obs, base) if hole else u_base[k]
    return u_base, u_hole


def fd_topological_derivative(mesh: BoundaryMesh, points, eps: float, band, incident, obs,
                              n_quad: int = 100, c: float = 1.0, n_hole: int = 100, hole: bool = True):
    """Finite-difference topological derivative of J by hole insertion.

    J is computed by the trapezoidal rule over ``n_quad`` frequencies with
    and without a rigid disc of radius ``eps`` at each point; the change is
    divided by the disc area. Returns ``(DJ, omegas, Df)`` where ``Df``
    (n_quad, n_pts) holds the frequency-wise quotients of f.
    """
    w1, w2 = band
    omegas = np.linspace(w1, w2, n_quad)
    ub, uh = hole_responses(mesh, points, eps, omegas, incident, obs, c, n_hole, hole=hole)
    f0 = 0.5 * np.sum(np.abs(ub) ** 2, axis=-1)
    fh = 0.5 * np.sum(np.abs(uh) ** 2, axis=-1)
    area = np.pi * eps**2
    Df = (fh - f0[:, None]) / area
    n_obs = np.atleast_2d(obs).shape[0]
    DJ = np.trapezoid(Df, omegas, axis=0) / (n_obs * (w2 - w1))
    return DJ, omegas, Df
