"""Rational approximation of frequency responses and closed-form band integrals.

All polynomials are stored by ascending coefficients in the shifted
variable ``z = omega - omega0``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DegenerateFitWarning",
    "NearRealPoleWarning",
    "PoleError",
    "ClusteredPolesError",
    "NearRealPoleError",
    "RootFindingError",
    "PadeApproximant",
    "RationalF",
    "PartialFractionForm",
    "IndirectFit",
    "gmres",
    "fit",
    "fit_with_fallback",
    "poly_divide",
    "roots_dka",
    "residues",
    "partial_fractions",
    "integrate_pf",
    "hat_coefficients",
    "indirect_fit",
    "indirect_objective",
    "direct_objective",
    "f_coefficients",
    "eval_rational",
    "horner",
]


class DegenerateFitWarning(RuntimeWarning):
    """The Pade linear system was not solved to tolerance (singular block)."""

    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


class NearRealPoleWarning(RuntimeWarning):
    """A pole lies close to (but not on) the integration band."""


class PoleError(ArithmeticError):
    """Rational function evaluated at (or extremely near) a pole."""


class ClusteredPolesError(ArithmeticError):
    """Poles too close together for the simple-pole residue formula."""


class NearRealPoleError(ArithmeticError):
    """A pole sits on the integration band; the log primitive is invalid."""


class RootFindingError(ArithmeticError):
    """Simultaneous iteration did not converge."""

    def __init__(self, message, roots=None, residuals=None):
        super().__init__(message)
        self.roots = roots
        self.residuals = residuals


# ---------------------------------------------------------------------------
# small helpers
# ---------------------------------------------------------------------------

_EPS = np.finfo(float).eps


def horner(c, z):
    """Evaluate ``sum c_i z^i`` (ascending coefficients)."""
    c = np.asarray(c)
    z = np.asarray(z)
    acc = np.zeros(np.broadcast_shapes(z.shape, c.shape[1:]), dtype=np.result_type(c, z, float))
    for ci in c[::-1]:
        acc = acc * z + ci
    return acc


def _dhorner(c, z):
    """Derivative of ``sum c_i z^i`` at z."""
    c = np.asarray(c)
    if c.shape[0] <= 1:
        return np.zeros_like(np.asarray(z), dtype=complex)
    return horner(c[1:] * np.arange(1, c.shape[0]).reshape((-1,) + (1,) * (c.ndim - 1)), z)


def eval_rational(p, q, omega0, omega):
    """Evaluate ``p(z)/q(z)`` at ``z = omega - omega0``."""
    z = np.asarray(omega, dtype=float) - omega0
    den = horner(q, z)
    if np.any(np.abs(den) < 1e-300):
        raise PoleError("rational function evaluated at a pole")
    return horner(p, z) / den


# ---------------------------------------------------------------------------
# linear solver
# ---------------------------------------------------------------------------

def gmres(A: np.ndarray, b: np.ndarray, tol: float = 1e-15):
    """Unrestarted GMRES with zero initial guess, batched over columns of ``b``.

    At most ``n`` Arnoldi steps are taken, so in exact arithmetic the
    residual is minimal over the full Krylov space. Columns whose Arnoldi
    process breaks down early are finished at that step. The small
    Hessenberg least-squares problems are solved by pseudo-inverse, which
    returns the minimum-norm minimiser when the system is singular.

    Returns ``(x, residual_norms)``; ``x`` has the shape of ``b``.
    """
    A = np.asarray(A)
    b = np.asarray(b)
    single = b.ndim == 1
    B = b[:, None] if single else b
    n, m = B.shape
    dtype = np.result_type(A, B, float)
    x = np.zeros((n, m), dtype=dtype)
    if n == 0:
        return (x[:, 0] if single else x), np.zeros(m)
    beta = np.linalg.norm(B, axis=0)
    active = beta > 0
    V = np.zeros((m, n + 1, n), dtype=dtype)
    H = np.zeros((m, n + 1, n), dtype=dtype)
    V[active, 0] = (B[:, active] / beta[active]).T
    steps = np.zeros(m, dtype=int)
    alive = active.copy()
    scale = np.abs(A).max() if A.size else 1.0
    for j in range(n):
        if not alive.any():
            break
        w = V[:, j] @ A.T                                  # (m, n)
        for i in range(j + 1):
            hij = np.einsum("mk,mk->m", V[:, i].conj(), w)
            H[:, i, j] = hij
            w = w - hij[:, None] * V[:, i]
        hn = np.linalg.norm(w, axis=1)
        H[:, j + 1, j] = hn
        steps[alive] = j + 1
        ok = alive & (hn > tol * max(scale, 1e-300) * (1 + np.abs(H[:, : j + 1, j]).max(axis=1)))
        V[ok, j + 1] = w[ok] / hn[ok, None]
        H[~ok, j + 1, j] = 0.0
        alive = ok
    for col in np.nonzero(active)[0]:
        k = steps[col]
        e1 = np.zeros(k + 1, dtype=dtype)
        e1[0] = beta[col]
        y = np.linalg.pinv(H[col, : k + 1, :k]) @ e1
        x[:, col] = V[col, :k].T @ y
    res = np.linalg.norm(B - A @ x, axis=0)
    return (x[:, 0] if single else x), res


# ---------------------------------------------------------------------------
# Pade fitting
# ---------------------------------------------------------------------------

@dataclass
class PadeApproximant:
    """``sum p_i z^i / sum q_i z^i`` with ``z = omega - omega0`` and ``q_0 = 1``."""

    omega0: float
    p: np.ndarray
    q: np.ndarray
    residual: float = 0.0

    @property
    def M(self) -> int:
        return len(self.p) - 1

    @property
    def N(self) -> int:
        return len(self.q) - 1

    def __call__(self, omega):
        return eval_rational(self.p, self.q, self.omega0, omega)

    def taylor(self, order: int) -> np.ndarray:
        """Taylor coefficients of p/q at omega0 by series division."""
        p = np.zeros(order + 1, dtype=complex)
        q = np.zeros(order + 1, dtype=complex)
        p[: min(order + 1, len(self.p))] = self.p[: order + 1]
        q[: min(order + 1, len(self.q))] = self.q[: order + 1]
        out = np.zeros(order + 1, dtype=complex)
        for n in range(order + 1):
            out[n] = (p[n] - np.dot(q[1 : n + 1], out[n - 1 :: -1][:n] if n else [])) / q[0]
        return out

    def trimmed(self, rtol: float = 1e-12) -> "PadeApproximant":
        """Drop vanishing leading denominator coefficients."""
        q = np.asarray(self.q)
        N = len(q) - 1
        scale = np.abs(q).max()
        while N > 0 and abs(q[N]) <= rtol * scale:
            N -= 1
        return PadeApproximant(self.omega0, self.p, q[: N + 1], self.residual)

    def to_dict(self) -> dict:
        return {"omega0": self.omega0, "M": self.M, "N": self.N,
                "p": _cjson(self.p), "q": _cjson(self.q), "residual": float(self.residual)}


def _cjson(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return [[float(v.real), float(v.imag)] for v in a]
    return [float(v) for v in a]


def _pade_matrix(a, M, N):
    """N x N block for rows i = M+1..M+N of ``p_i = sum_j a_{i-j} q_j`` (p_i = 0)."""
    C = np.zeros((N, N), dtype=a.dtype)
    for r in range(N):
        for j in range(1, N + 1):
            idx = M + 1 + r - j
            if idx >= 0:
                C[r, j - 1] = a[idx]
    return C


def fit(a, M: int, N: int, warn: bool = True) -> tuple[np.ndarray, np.ndarray, float]:
    """Pade coefficients from Taylor coefficients ``a_0..a_{M+N}``.

    Returns ``(p, q, relative_residual)``. Emits :class:`DegenerateFitWarning`
    when the denominator system is not solved to 1e-10 relative residual.
    """
    a = np.asarray(a)
    if M < 0 or N < 0:
        raise ValueError("degrees must be non-negative")
    if a.shape[0] != M + N + 1:
        raise ValueError(f"need exactly M+N+1 = {M + N + 1} coefficients, got {a.shape[0]}")
    dtype = np.result_type(a, float)
    a = a.astype(dtype)
    q = np.zeros(N + 1, dtype=dtype)
    q[0] = 1.0
    rel_res = 0.0
    if N > 0:
        C = _pade_matrix(a, M, N)
        rhs = -a[M + 1 : M + N + 1]
        sol, res = gmres(C, rhs)
        q[1:] = sol
        nrm = np.linalg.norm(rhs)
        rel_res = float(res[0] / nrm) if nrm > 0 else 0.0
        if rel_res > 1e-10 and warn:
            warnings.warn(DegenerateFitWarning(
                f"Pade [{M},{N}] system residual {rel_res:.3e} exceeds 1e-10", rel_res), stacklevel=2)
    p = np.array([sum(a[i - j] * q[j] for j in range(0, min(i, N) + 1)) for i in range(M + 1)], dtype=dtype)
    return p, q, rel_res


def fit_with_fallback(a, M: int, N: int, omega0: float, max_reductions: int = 2) -> PadeApproximant:
    """Fit, retrying with (M-1, N-1) while the system is degenerate."""
    a = np.asarray(a)
    for attempt in range(max_reductions + 1):
        m, n = M - attempt, N - attempt
        if m < 0 or n < 0:
            break
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DegenerateFitWarning)
            p, q, res = fit(a[: m + n + 1], m, n)
        if not any(issubclass(w.category, DegenerateFitWarning) for w in caught):
            if attempt:
                log.info("Pade fit reduced from [%d,%d] to [%d,%d]", M, N, m, n)
            return PadeApproximant(omega0, p, q, res).trimmed()
        if attempt == max_reductions:
            raise ArithmeticError(f"Pade fit degenerate down to [{m},{n}] (residual {res:.3e})")
        warnings.warn(DegenerateFitWarning(f"degenerate [{m},{n}] fit, retrying with [{m - 1},{n - 1}]", res),
                      stacklevel=2)
    raise ArithmeticError("Pade fit failed")


# ---------------------------------------------------------------------------
# polynomial division, roots, residues
# ---------------------------------------------------------------------------

def poly_divide(p, q):
    """Quotient and remainder of ``p / q`` following Algorithm 1 of the method.

    Returns ``(r, p_rem)`` with ``len(r) = M - N + 1`` and ``len(p_rem) = N``.
    """
    q = np.asarray(q)
    p = np.array(p, dtype=np.result_type(np.asarray(p), q, float))
    M, N = len(p) - 1, len(q) - 1
    if M < N:
        raise ValueError("poly_divide requires M >= N")
    if q[N] == 0:
        raise ZeroDivisionError("leading denominator coefficient q_N is zero")
    r = np.zeros(M - N + 1, dtype=p.dtype)
    for i in range(M - N, -1, -1):
        r[i] = p[i + N] / q[N]
        for j in range(N + 1):
            p[i + j] -= r[i] * q[j]
    return r, p[:N].copy()


def roots_dka(q, tol: float = 1e-13, maxiter: int = 500) -> np.ndarray:
    """All roots of ``sum q_i z^i`` by Aberth's (cubically convergent DKA) iteration.

    Stops when the relative step falls below ``tol`` or, for clustered roots
    whose step stagnates at round-off, when every residual is within a few
    ulps of the coefficient-magnitude bound (a backward-stable root set).
    """
    q = np.asarray(q, dtype=complex)
    N = len(q) - 1
    if N < 1:
        raise ValueError("need a polynomial of degree >= 1")
    if q[N] == 0:
        raise ZeroDivisionError("leading coefficient is zero")
    c = q / q[N]
    if N == 1:
        return np.array([-c[0]])
    # Fujiwara-type radius for the initial circle
    rad = 2.0 * max(abs(c[N - k]) ** (1.0 / k) for k in range(1, N + 1))
    rad = max(rad, 1e-12)
    z = rad * np.exp(1j * (2 * np.pi * np.arange(N) / N + 0.4))
    best, best_step = z.copy(), np.inf
    ac = np.abs(c)
    for it in range(maxiter):
        pv = horner(c, z)
        dp = _dhorner(c, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pv / dp
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, 1.0)
            s = (1.0 / diff).sum(axis=1) - 1.0
            step = ratio / (1.0 - ratio * s)
        step = np.where(np.isfinite(step), step, 0.0)
        bad = pv != 0
        step = np.where(bad, step, 0.0)
        z = z - step
        size = np.max(np.abs(step) / (1.0 + np.abs(z)))
        if size < best_step:
            best, best_step = z.copy(), size
        if size <= tol:
            return z
        if size <= 1e-9 and np.all(np.abs(horner(c, z)) <= 16 * _EPS * horner(ac, np.abs(z)).real):
            return z
    raise RootFindingError(f"Aberth iteration did not converge in {maxiter} iterations "
                           f"(last relative step {best_step:.2e})", best, np.abs(horner(c, best)))


def residues(p_rem, qN, poles, omega0: float) -> np.ndarray:
    """Cover-up residues ``A_i = p'(alpha_i - w0) / (q_N prod_{j!=i}(alpha_i - alpha_j))``."""
    a = np.asarray(poles, dtype=complex)
    diff = a[:, None] - a[None, :]
    np.fill_diagonal(diff, 1.0)
    scale = max(1.0, float(np.abs(a - omega0).max())) if a.size else 1.0
    if a.size > 1 and np.min(np.abs(diff[~np.eye(a.size, dtype=bool)])) <= 1e-8 * scale:
        raise ClusteredPolesError("poles are (nearly) repeated; cover-up formula is invalid")
    num = horner(np.asarray(p_rem), a - omega0)
    return num / (qN * np.prod(diff, axis=1))


@dataclass
class PartialFractionForm:
    """``sum r_i z^i + sum A_i / (omega - alpha_i)``."""

    omega0: float
    r: np.ndarray
    poles: np.ndarray
    residues: np.ndarray
    p_rem: np.ndarray = field(default=None, repr=False)

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        out = horner(self.r, w - self.omega0) if len(self.r) else np.zeros_like(w, dtype=complex)
        for a, A in zip(self.poles, self.residues):
            out = out + A / (w - a)
        return out

    def to_dict(self) -> dict:
        return {"omega0": self.omega0, "r": _cjson(self.r), "poles": _cjson(self.poles),
                "residues": _cjson(self.residues)}


def partial_fractions(p, q, omega0: float, poles=None) -> PartialFractionForm:
    """Polynomial division (when deg p >= deg q), poles and cover-up residues."""
    p = np.asarray(p)
    q = np.asarray(q)
    M, N = len(p) - 1, len(q) - 1
    if N == 0:
        return PartialFractionForm(omega0, p / q[0], np.zeros(0, complex), np.zeros(0, complex), np.zeros(0))
    if M >= N:
        r, p_rem = poly_divide(p, q)
    else:
        r = np.zeros(0, dtype=p.dtype)
        p_rem = np.zeros(N, dtype=np.result_type(p, float))
        p_rem[: M + 1] = p
    if poles is None:
        poles = omega0 + roots_dka(q)
    A = residues(p_rem, q[N], poles, omega0)
    return PartialFractionForm(omega0, r, np.asarray(poles, dtype=complex), A, p_rem)


def pole_band_distance(poles, w1, w2) -> np.ndarray:
    a = np.asarray(poles, dtype=complex)
    xr = np.clip(a.real, w1, w2)
    return np.hypot(a.real - xr, a.imag)


def check_poles(poles, w1, w2):
    bw = w2 - w1
    if len(poles) == 0:
        return
    d = pole_band_distance(poles, w1, w2)
    if d.min() < 1e-8 * bw:
        raise NearRealPoleError(f"pole at distance {d.min():.3e} from the band [{w1}, {w2}]")
    if d.min() < 1e-3 * bw:
        warnings.warn(NearRealPoleWarning(f"pole at distance {d.min():.3e} from the band [{w1}, {w2}]"),
                      stacklevel=3)


def integrate_pf(pf: PartialFractionForm, w1: float, w2: float, real: bool = True):
    """Exact integral of a partial-fraction form over ``[w1, w2]``.

    With ``real=True`` the conjugate-closed pole set makes the result real
    and the (round-off) imaginary part is dropped.
    """
    check_poles(pf.poles, w1, w2)
    i = np.arange(len(pf.r))
    z1, z2 = w1 - pf.omega0, w2 - pf.omega0
    poly = np.sum(pf.r / (i + 1) * (z2 ** (i + 1) - z1 ** (i + 1))) if len(pf.r) else 0.0
    logs = np.sum(pf.residues * (np.log(w2 - pf.poles) - np.log(w1 - pf.poles)))
    val = poly + logs
    return float(np.real(val)) if real else complex(val)


# ---------------------------------------------------------------------------
# objective estimators
# ---------------------------------------------------------------------------

@dataclass
class RationalF:
    """Real rational approximation ``sum p_hat_i z^i / sum q_hat_i z^i`` of f."""

    omega0: float
    p_hat: np.ndarray
    q_hat: np.ndarray

    def __call__(self, omega):
        return np.real(eval_rational(self.p_hat, self.q_hat, self.omega0, omega))

    def to_dict(self) -> dict:
        return {"omega0": self.omega0, "p_hat": _cjson(self.p_hat), "q_hat": _cjson(self.q_hat)}


def hat_coefficients(p, q):
    """Real coefficients of ``(1/2) p conj(p) / (q conj(q))`` in z."""
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    p_hat = 0.5 * np.convolve(p, p.conj()).real
    q_hat = np.convolve(q, q.conj()).real
    return p_hat, q_hat


@dataclass
class IndirectFit:
    """Everything the indirect estimator builds for one observation point."""

    pade: PadeApproximant
    rf: RationalF
    pf: PartialFractionForm
    u_poles: np.ndarray


def indirect_fit(a, M: int, N: int, omega0: float) -> IndirectFit:
    """u-Pade fit, hat coefficients and partial fractions for one point."""
    pa = fit_with_fallback(np.asarray(a, dtype=complex), M, N, omega0)
    p_hat, q_hat = hat_coefficients(pa.p, pa.q)
    if pa.N:
        u_poles = omega0 + roots_dka(pa.q)
        poles = np.concatenate([u_poles, u_poles.conj()])
    else:
        u_poles = np.zeros(0, complex)
        poles = None
    pf = partial_fractions(p_hat, q_hat, omega0, poles)
    return IndirectFit(pa, RationalF(omega0, p_hat, q_hat), pf, u_poles)


def indirect_objective(u_jets, M: int, N: int, omega0: float, band):
    """Band average of ``f = 1/2 sum |u|^2`` from per-point u-Pade approximants.

    ``u_jets`` has shape (M+N+1, n_obs). Returns ``(J, fits)``.
    """
    u_jets = np.asarray(u_jets)
    if u_jets.ndim == 1:
        u_jets = u_jets[:, None]
    w1, w2 = band
    fits = [indirect_fit(u_jets[: M + N + 1, i], M, N, omega0) for i in range(u_jets.shape[1])]
    total = sum(integrate_pf(ft.pf, w1, w2) for ft in fits)
    return total / (len(fits) * (w2 - w1)), fits


def f_coefficients(u_jets) -> np.ndarray:
    """Taylor coefficients of ``f = 1/2 sum_obs |u|^2`` from u jets (real)."""
    u = np.asarray(u_jets, dtype=complex)
    if u.ndim == 1:
        u = u[:, None]
    K1 = u.shape[0]
    f = np.zeros(K1)
    for n in range(K1):
        f[n] = 0.5 * np.sum(u[: n + 1] * u[n::-1].conj()).real
    return f


def direct_objective(u_jets, M: int, N: int, omega0: float, band):
    """Band average from a real Pade fit of f itself. Returns ``(J, pade, pf)``."""
    u_jets = np.asarray(u_jets)
    n_obs = 1 if u_jets.ndim == 1 else u_jets.shape[1]
    a = f_coefficients(u_jets[: M + N + 1])
    pa = fit_with_fallback(a, M, N, omega0)
    pf = partial_fractions(pa.p.real, pa.q.real, omega0)
    w1, w2 = band
    return integrate_pf(pf, w1, w2) / (n_obs * (w2 - w1)), pa, pf
