"""Truncated Taylor series ("jets") in the angular frequency.

A jet of order ``K`` centred at ``omega0`` stores the scaled Taylor
coefficients ``c_n = g^(n)(omega0) / n!`` for ``n = 0..K``. Products are
then plain Cauchy convolutions and realise the Leibniz rule, which gives
forward-mode differentiation to arbitrary order.

Two layers are provided:

* array helpers (``cauchy``, ``cauchy_div``, ``hankel1_coeffs`` ...) that work
  on coefficient arrays with the derivative order on **axis 0** and arbitrary
  trailing batch axes. The BEM and FMM code use these directly.
* the :class:`Jet` value type wrapping one coefficient vector.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import special

__all__ = [
    "Jet",
    "JetMismatchError",
    "cauchy",
    "cauchy_div",
    "mul",
    "div",
    "omega_jet",
    "omega_times",
    "inverse_omega_coeffs",
    "hankel1_coeffs",
    "bessel_coeffs",
    "hankel1_jet",
    "bessel_jet",
    "hankel_taylor_ode",
    "plane_wave_jet",
]


class JetMismatchError(ValueError):
    """Raised when two jets with different centre or order are combined."""


# ---------------------------------------------------------------------------
# coefficient-array helpers (order on axis 0)
# ---------------------------------------------------------------------------

def cauchy(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Truncated Cauchy product of two coefficient arrays.

    ``a`` and ``b`` must have the same length along axis 0; trailing axes
    broadcast.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise JetMismatchError(f"order mismatch: {a.shape[0] - 1} vs {b.shape[0] - 1}")
    K1 = a.shape[0]
    shape = (K1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros(shape, dtype=np.result_type(a, b))
    for n in range(K1):
        for j in range(n + 1):
            out[n] += a[j] * b[n - j]
    return out


def cauchy_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Coefficients of ``a / b`` by forward recursion; requires ``b[0] != 0``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[0] != b.shape[0]:
        raise JetMismatchError(f"order mismatch: {a.shape[0] - 1} vs {b.shape[0] - 1}")
    if np.any(b[0] == 0):
        raise ZeroDivisionError("jet division by a series with zero leading coefficient")
    K1 = a.shape[0]
    shape = (K1,) + np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros(shape, dtype=np.result_type(a, b, 1.0))
    for n in range(K1):
        acc = np.array(a[n], dtype=out.dtype, copy=True)
        for j in range(1, n + 1):
            acc = acc - b[j] * out[n - j]
        out[n] = acc / b[0]
    return out


def omega_times(h: np.ndarray, omega0: float, scale: float = 1.0) -> np.ndarray:
    """Coefficients of ``scale * omega * h(omega)``; O(K) instead of a full product."""
    h = np.asarray(h)
    out = omega0 * h
    out[1:] += h[:-1]
    return scale * out


def omega_jet(omega0: float, order: int) -> np.ndarray:
    """Coefficients of the identity map ``omega -> omega``."""
    c = np.zeros(order + 1)
    c[0] = omega0
    if order >= 1:
        c[1] = 1.0
    return c


def inverse_omega_coeffs(omega0: float, order: int) -> np.ndarray:
    """Coefficients of ``1 / omega`` about ``omega0``."""
    m = np.arange(order + 1)
    return (-1.0) ** m / omega0 ** (m + 1)


# ---------------------------------------------------------------------------
# cylinder functions
# ---------------------------------------------------------------------------

def _derivative_coeffs(func: Callable, n: int, z: np.ndarray, order: int) -> np.ndarray:
    """z-Taylor coefficients ``C_n^(m)(z) / m!`` from the order recurrence.

    Uses ``C_n' = (C_{n-1} - C_{n+1}) / 2`` iterated m times, i.e.
    ``C_n^(m) = 2^-m sum_k (-1)^k binom(m, k) C_{n-m+2k}``; negative orders
    are folded with ``C_{-v} = (-1)^v C_v``.
    """
    z = np.asarray(z, dtype=float)
    orders = np.arange(n - order, n + order + 1)
    table = {}
    for v in orders:
        av = abs(int(v))
        if av not in table:
            table[av] = func(av, z)
    def C(v):
        v = int(v)
        val = table[abs(v)]
        return val if v >= 0 or v % 2 == 0 else -val
    out = np.zeros((order + 1,) + z.shape, dtype=complex)
    for m in range(order + 1):
        acc = np.zeros(z.shape, dtype=complex)
        for k in range(m + 1):
            acc += (-1) ** k * math.comb(m, k) * C(n - m + 2 * k)
        out[m] = acc / (2.0 ** m * math.factorial(m))
    return out


def _scale_to_omega(zc: np.ndarray, s: np.ndarray) -> np.ndarray:
    m = np.arange(zc.shape[0]).reshape((-1,) + (1,) * np.ndim(s))
    return zc * np.asarray(s, dtype=float) ** m


def hankel1_coeffs(n: int, s, omega0: float, order: int) -> np.ndarray:
    """Jet coefficients of ``omega -> H_n^(1)(omega * s)`` for array ``s``.

    Returns an array of shape ``(order + 1,) + shape(s)``.
    """
    s = np.asarray(s, dtype=float)
    z = omega0 * s
    if np.any(z <= 0):
        raise ValueError("Hankel jet requires omega0 * s > 0 (branch point at 0)")
    zc = _derivative_coeffs(special.hankel1, n, z, order)
    return _scale_to_omega(zc, s)


def bessel_coeffs(n: int, s, omega0: float, order: int) -> np.ndarray:
    """Jet coefficients of ``omega -> J_n(omega * s)``; ``s = 0`` is allowed."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or omega0 <= 0:
        raise ValueError("Bessel jet requires s >= 0 and omega0 > 0")
    zc = _derivative_coeffs(special.jv, n, omega0 * s, order)
    return _scale_to_omega(zc, s)


def hankel_taylor_ode(nu: int, s: np.ndarray, omega0: float, order: int,
                      h_nu: np.ndarray, h_nu_prime: np.ndarray) -> np.ndarray:
    """Jet coefficients of ``H_nu(omega s)`` from Bessel's ODE.

    Differentiating ``z^2 y'' + z y' + (z^2 - nu^2) y = 0`` m times gives a
    five-term recurrence for the Taylor coefficients, so each extra order
    costs O(1) per point. ``h_nu`` and ``h_nu_prime`` are the value and
    z-derivative at ``z = omega0 * s``. Forward-stable for Hankel functions
    (the singular solution dominates); do not use it for ``J_n``.
    """
    z = omega0 * s
    c = np.empty((order + 1,) + np.shape(z), dtype=complex)
    c[0] = h_nu
    if order >= 1:
        c[1] = h_nu_prime
    z2 = z * z
    for m in range(order - 1):
        acc = (2 * m + 1) * (m + 1) * z * c[m + 1] + (m * m + z2 - nu * nu) * c[m]
        if m >= 1:
            acc += 2.0 * z * c[m - 1]
        if m >= 2:
            acc += c[m - 2]
        c[m + 2] = -acc / (z2 * (m + 2) * (m + 1))
    return _scale_to_omega(c, s)


# ---------------------------------------------------------------------------
# Jet value type
# ---------------------------------------------------------------------------

class Jet:
    """Truncated Taylor series of a scalar function of the angular frequency.

    Parameters
    ----------
    coeffs : array_like
        Scaled Taylor coefficients ``c_0..c_K`` (``c_n = g^(n)(omega0)/n!``).
    center : float
        Expansion point ``omega0``.
    """

    __slots__ = ("coeffs", "center")
    __array_priority__ = 1000

    def __init__(self, coeffs, center: float):
        c = np.array(coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("a Jet needs a 1-D, non-empty coefficient vector")
        self.coeffs = c
        self.center = float(center)

    # constructors -----------------------------------------------------
    @classmethod
    def constant(cls, value, center: float, order: int) -> "Jet":
        c = np.zeros(order + 1, dtype=complex)
        c[0] = value
        return cls(c, center)

    @classmethod
    def variable(cls, center: float, order: int) -> "Jet":
        """Jet of ``omega`` itself."""
        return cls(omega_jet(center, order), center)

    @classmethod
    def from_derivatives(cls, derivs, center: float) -> "Jet":
        d = np.asarray(derivs, dtype=complex)
        fact = np.array([math.factorial(n) for n in range(d.size)], dtype=float)
        return cls(d / fact, center)

    # accessors --------------------------------------------------------
    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def derivatives(self) -> np.ndarray:
        """Raw derivatives ``g^(n)(omega0)``."""
        fact = np.array([math.factorial(n) for n in range(self.coeffs.size)], dtype=float)
        return self.coeffs * fact

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise ValueError("cannot extend a jet beyond its order")
        return Jet(self.coeffs[: order + 1], self.center)

    def conj(self) -> "Jet":
        # omega is real, so the conjugate function has conjugated coefficients
        return Jet(np.conj(self.coeffs), self.center)

    def __call__(self, omega):
        """Evaluate the truncated series (Horner in ``omega - omega0``)."""
        z = np.asarray(omega) - self.center
        acc = np.zeros_like(z, dtype=complex) + self.coeffs[-1]
        for c in self.coeffs[-2::-1]:
            acc = acc * z + c
        return acc

    def __len__(self) -> int:
        return self.coeffs.size

    def __repr__(self) -> str:
        return f"Jet(center={self.center:g}, order={self.order}, coeffs={self.coeffs!r})"

    # arithmetic -------------------------------------------------------
    def _check(self, other: "Jet") -> None:
        if other.center != self.center or other.order != self.order:
            raise JetMismatchError(
                f"jets differ: center {self.center} vs {other.center}, "
                f"order {self.order} vs {other.order}")

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            self._check(other)
            return other
        if np.ndim(other) != 0:
            return NotImplemented
        return Jet.constant(other, self.center, self.order)

    def __add__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return Jet(self.coeffs + o.coeffs, self.center)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.center)

    def __sub__(self, other):
        o = self._lift(other)
        if o is NotImplemented:
            return o
        return Jet(self.coeffs - o.coeffs, self.center)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return mul(self, other)
        if np.ndim(other) != 0:
            return NotImplemented
        return Jet(self.coeffs * other, self.center)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return div(self, other)
        if np.ndim(other) != 0:
            return NotImplemented
        return Jet(self.coeffs / other, self.center)

    def __rtruediv__(self, other):
        return div(Jet.constant(other, self.center, self.order), self)


def mul(a: Jet, b: Jet) -> Jet:
    """Product of two jets (Leibniz rule)."""
    a._check(b)
    return Jet(cauchy(a.coeffs, b.coeffs), a.center)


def div(a: Jet, b: Jet) -> Jet:
    """Quotient ``a / b``; raises ``ZeroDivisionError`` when ``b(omega0) == 0``."""
    a._check(b)
    return Jet(cauchy_div(a.coeffs, b.coeffs), a.center)


def hankel1_jet(n: int, s: float, omega0: float, order: int) -> Jet:
    """Jet of ``omega -> H_n^(1)(omega s)`` about ``omega0``."""
    return Jet(hankel1_coeffs(n, float(s), omega0, order), omega0)


def bessel_jet(n: int, s: float, omega0: float, order: int) -> Jet:
    """Jet of ``omega -> J_n(omega s)`` about ``omega0``."""
    return Jet(bessel_coeffs(n, float(s), omega0, order), omega0)


def plane_wave_jet(x, direction, c: float, omega0: float, order: int, normal=None):
    """Jets of a unit plane wave ``exp(i omega d.x / c)`` and its normal derivative.

    Returns ``(u_in, q_in)``; ``q_in`` is ``None`` when no normal is given.
    """
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise ValueError("plane-wave direction must be a unit vector")
    if c <= 0:
        raise ValueError("wave speed must be positive")
    phase = float(np.dot(d, np.asarray(x, dtype=float))) / c
    m = np.arange(order + 1)
    fact = np.array([math.factorial(k) for k in m], dtype=float)
    u = (1j * phase) ** m * np.exp(1j * omega0 * phase) / fact
    u_jet = Jet(u, omega0)
    if normal is None:
        return u_jet, None
    dn = float(np.dot(d, np.asarray(normal, dtype=float)))
    q = omega_times(u, omega0, 1j * dn / c)
    return u_jet, Jet(q, omega0)
