import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from padetopo import jet
from padetopo.jet import Jet, JetMismatchError

# Taylor coefficients from mpmath.taylor (finite differences at 30 digits).
H0_S15_W2 = np.array([
    -0.26005195490193345 + 0.3768500100127904j,
    -0.5085884377889047 - 0.48701163718769996j,
    0.4197055587119013 - 0.3022033519674642j,
    0.09957855281098468 + 0.21270443772381067j,
    -0.06835658351989093 + 0.0225563053338174j,
    -0.007468391460823851 - 0.0159528328292858j,
    0.004504377808923166 - 0.003021125635810122j,
])
J1_S15_W2 = np.array([
    0.3390589585259365, -0.5596074116158684, -0.19915710562196937,
    0.18228422271970915, 0.02489463820274617, -0.018017511235692663,
    -0.001402915187345998,
])
H2_S07_W13 = np.array([
    0.09655159876259861 - 1.911964790656186j, 0.1381084826698202 + 2.3370815599336883j,
    0.03748845817879298 - 2.6931263749692755j, -0.011386479004689684 + 2.812439478114034j,
    -0.0015911411213724795 - 2.6949196761363705j, 0.00026170481885195404 + 2.484904459358309j,
    2.443028127426214e-05 - 2.2299729338540124j, -2.8479654661530745e-06 + 1.9603573826215415j,
    -1.9905105450729762e-07 - 1.6964260517137693j, 1.8156402873773086e-08 + 1.4499210407090253j,
    1.0128803193455162e-09 - 1.2268489812534265j,
])


def exp_jet(s, w0, K):
    m = np.arange(K + 1)
    return Jet((1j * s) ** m * np.exp(1j * w0 * s) / np.array([math.factorial(k) for k in m]), w0)


def random_jet(rng, K, w0=2.0):
    r = np.sqrt(rng.uniform(size=K + 1))
    return Jet(r * np.exp(2j * np.pi * rng.uniform(size=K + 1)), w0)


class TestArithmetic:
    def test_identity_product(self):
        b = random_jet(np.random.default_rng(0), 5)
        one = Jet.constant(1.0, 2.0, 5)
        np.testing.assert_allclose(jet.mul(one, b).coeffs, b.coeffs)

    def test_monomial_square(self):
        a = Jet([0, 1, 0, 0, 0], 1.0)
        np.testing.assert_array_equal((a * a).coeffs, [0, 0, 1, 0, 0])

    def test_exponential_product(self):
        a, b = exp_jet(0.7, 3.0, 10), exp_jet(-1.9, 3.0, 10)
        np.testing.assert_allclose((a * b).coeffs, exp_jet(-1.2, 3.0, 10).coeffs, atol=1e-12)

    def test_inverse_omega(self):
        inv = 1.0 / Jet.variable(2.0, 4)
        np.testing.assert_allclose(inv.coeffs, [1 / 2, -1 / 4, 1 / 8, -1 / 16, 1 / 32], rtol=1e-15)
        np.testing.assert_allclose(jet.inverse_omega_coeffs(2.0, 4), inv.coeffs.real)

    def test_divide_by_one(self):
        a = random_jet(np.random.default_rng(1), 4)
        np.testing.assert_allclose(jet.div(a, Jet.constant(1, 2.0, 4)).coeffs, a.coeffs)

    def test_zero_leading_division(self):
        a = Jet.constant(1.0, 2.0, 3)
        with pytest.raises(ZeroDivisionError):
            jet.div(a, Jet([0, 1, 0, 0], 2.0))

    @pytest.mark.parametrize("other", [Jet.constant(1, 2.0, 4), Jet.constant(1, 3.0, 3)])
    def test_mismatch(self, other):
        with pytest.raises(JetMismatchError):
            jet.mul(Jet.constant(1, 3.0, 4), other)

    def test_derivative_roundtrip(self):
        d = np.array([1.0, -2.0, 6.0, 0.5j])
        np.testing.assert_allclose(Jet.from_derivatives(d, 1.0).derivatives(), d)

    def test_evaluate_polynomial(self):
        a = Jet([1, 2, 3], 1.0)
        assert a(2.0) == pytest.approx(6.0)


unit_coeffs = st.lists(
    st.tuples(st.floats(0, 1), st.floats(0, 2 * np.pi)), min_size=7, max_size=7
).map(lambda v: Jet([r * np.exp(1j * t) for r, t in v], 2.5))


@settings(max_examples=60, deadline=None)
@given(unit_coeffs, unit_coeffs, unit_coeffs)
def test_commutative_associative(a, b, c):
    np.testing.assert_allclose((a * b).coeffs, (b * a).coeffs, atol=1e-13)
    np.testing.assert_allclose(((a * b) * c).coeffs, (a * (b * c)).coeffs, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(unit_coeffs, unit_coeffs)
def test_leibniz_rule(a, b):
    da, db = a.derivatives(), b.derivatives()
    K = a.order
    raw = [sum(math.comb(n, j) * da[j] * db[n - j] for j in range(n + 1)) for n in range(K + 1)]
    np.testing.assert_allclose((a * b).derivatives(), raw, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(unit_coeffs, unit_coeffs)
def test_division_roundtrip(a, b):
    if abs(b.coeffs[0]) <= 0.1:
        b = b + 0.5
    np.testing.assert_allclose(jet.div(a * b, b).coeffs, a.coeffs, atol=1e-10)


class TestCylinderFunctions:
    @pytest.mark.parametrize("n", [0, 1, 3])
    def test_order_zero(self, n):
        assert jet.hankel1_jet(n, 1.5, 2.0, 0).coeffs[0] == pytest.approx(special.hankel1(n, 3.0))
        assert jet.bessel_jet(n, 1.5, 2.0, 0).coeffs[0] == pytest.approx(special.jv(n, 3.0))

    def test_first_derivative_identities(self):
        h = jet.hankel1_jet(0, 1.5, 2.0, 1).coeffs
        assert h[1] == pytest.approx(-1.5 * special.hankel1(1, 3.0))
        j = jet.bessel_jet(0, 1.5, 2.0, 1).coeffs
        assert j[1] == pytest.approx(-1.5 * special.jv(1, 3.0))

    def test_hankel_against_oracle(self):
        np.testing.assert_allclose(jet.hankel1_jet(0, 1.5, 2.0, 6).coeffs, H0_S15_W2, rtol=1e-10)
        np.testing.assert_allclose(jet.hankel1_jet(2, 0.7, 1.3, 10).coeffs, H2_S07_W13, rtol=1e-9)

    def test_bessel_against_oracle(self):
        np.testing.assert_allclose(jet.bessel_jet(1, 1.5, 2.0, 6).coeffs, J1_S15_W2, rtol=1e-10)

    def test_low_order_finite_differences(self):
        h = 1e-3
        f = lambda w: special.hankel1(0, 1.5 * w)
        fd1 = (f(2 + h) - f(2 - h)) / (2 * h)
        fd2 = (f(2 + h) - 2 * f(2) + f(2 - h)) / h**2 / 2
        c = jet.hankel1_jet(0, 1.5, 2.0, 2).coeffs
        assert abs(c[1] - fd1) / abs(c[1]) < 1e-5
        assert abs(c[2] - fd2) / abs(c[2]) < 1e-5

    def test_bessel_at_zero(self):
        c = jet.bessel_jet(0, 0.0, 2.0, 4).coeffs
        np.testing.assert_allclose(c, [1, 0, 0, 0, 0])

    def test_hankel_domain(self):
        with pytest.raises(ValueError):
            jet.hankel1_jet(0, 0.0, 2.0, 3)

    @pytest.mark.parametrize("nu", [0, 1, 2])
    def test_ode_recurrence_matches_binomial(self, nu):
        s = np.array([0.01, 0.3, 1.7, 9.0])
        w0, K = 2.3, 10
        z = w0 * s
        val = special.hankel1(nu, z)
        der = 0.5 * (special.hankel1(nu - 1, z) - special.hankel1(nu + 1, z))
        ode = jet.hankel_taylor_ode(nu, s, w0, K, val, der)
        ref = jet.hankel1_coeffs(nu, s, w0, K)
        np.testing.assert_allclose(ode, ref, rtol=1e-9, atol=1e-14 * np.abs(ref).max())


class TestPlaneWave:
    def test_origin(self):
        u, q = jet.plane_wave_jet([0, 0], [0, 1], 1.0, 3.0, 4)
        np.testing.assert_allclose(u.coeffs, [1, 0, 0, 0, 0])
        assert q is None

    def test_closed_form(self):
        u, _ = jet.plane_wave_jet([0, 1], [0, 1], 1.0, 3.0, 3)
        ref = [1j**m * np.exp(3j) / math.factorial(m) for m in range(4)]
        np.testing.assert_allclose(u.coeffs, ref, atol=1e-15)

    def test_normal_derivative_fd(self):
        x, d, n = np.array([0.3, -1.2]), np.array([0.6, 0.8]), np.array([1.0, 0.0])
        c, w0, h = 1.3, 2.0, 1e-3
        q_exact = lambda w: 1j * w / c * d @ n * np.exp(1j * w * d @ x / c)
        _, q = jet.plane_wave_jet(x, d, c, w0, 2, normal=n)
        assert abs(q.coeffs[0] - q_exact(w0)) < 1e-14
        fd = (q_exact(w0 + h) - q_exact(w0 - h)) / (2 * h)
        assert abs(q.coeffs[1] - fd) / abs(fd) < 1e-6

    def test_rejects_non_unit_direction(self):
        with pytest.raises(ValueError):
            jet.plane_wave_jet([0, 0], [1, 1], 1.0, 1.0, 2)
