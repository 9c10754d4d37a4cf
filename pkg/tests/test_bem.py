import numpy as np
import pytest
from scipy import special

from padetopo import bem, mesh as M
from padetopo.oracles import cylinder_total_field

PW = bem.PlaneWave((0.0, 1.0))


@pytest.fixture(scope="module")
def two_bodies():
    return M.concatenate([M.build_circle([0, 0], 1.0, 120), M.build_circle([2.5, 0.3], 0.5, 60)])


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_constant_field_identity():
    # at small frequency u = 1 solves the problem, so each row of I/2 + D sums to one
    m = M.build_circle([0.3, -0.2], 1.0, 100)
    A = bem.plain_bie_matrix(m, 1e-4)
    np.testing.assert_allclose(A.sum(axis=1).real, 1.0, atol=2e-3)
    np.testing.assert_allclose((A - 0.5 * np.eye(100)).sum(axis=1).real, 0.5, atol=2e-3)


@pytest.mark.parametrize("k", [1.0, np.pi])
def test_cylinder_series_on_boundary(k):
    m = M.build_circle([0, 0], 1.0, 100)
    sol = bem.solve_primal(bem.assemble(m, k, 0), PW)
    th = np.arctan2(m.midpoint[:, 1], m.midpoint[:, 0])
    ref = cylinder_total_field(k, 1.0, 1.0, th)
    assert rel(sol.u[0, :, 0], ref) < 0.01


def test_cylinder_series_in_field():
    m = M.build_circle([0, 0], 1.0, 100)
    sol = bem.solve_primal(bem.assemble(m, 2.0, 0), PW)
    th = np.linspace(0, 2 * np.pi, 13)[:-1]
    pts = 2.0 * np.column_stack([np.cos(th), np.sin(th)])
    u = bem.eval_field(sol, pts).u[0, :, 0]
    assert rel(u, cylinder_total_field(2.0, 1.0, 2.0, th)) < 0.01


def test_no_fictitious_eigenfrequency():
    m = M.build_circle([0, 0], 1.0, 100)
    k_dir = special.jn_zeros(0, 1)[0]  # interior Dirichlet eigenvalue of the unit disc
    cond_plain = [np.linalg.cond(bem.plain_bie_matrix(m, k)) for k in (k_dir - 0.1, k_dir)]
    cond_bm = [np.linalg.cond(0.5 * np.eye(100) + bem.assemble(m, k, 0).W[0]) for k in (k_dir - 0.1, k_dir)]
    assert cond_plain[1] > 20 * cond_plain[0]
    assert cond_bm[1] < 1.5 * cond_bm[0]
    th = np.arctan2(m.midpoint[:, 1], m.midpoint[:, 0])
    u = bem.solve_primal(bem.assemble(m, k_dir, 0), PW).u[0, :, 0]
    assert rel(u, cylinder_total_field(k_dir, 1.0, 1.0, th)) < 0.01


def test_order_zero_is_plain_solve(two_bodies):
    op = bem.assemble(two_bodies, 2.0, 3)
    u3 = bem.solve_primal(op, PW).u
    u0 = bem.solve_primal(bem.assemble(two_bodies, 2.0, 0), PW).u
    np.testing.assert_allclose(u3[0], u0[0], rtol=1e-12, atol=1e-14)


def test_recursion_is_lower_triangular(two_bodies):
    op = bem.assemble(two_bodies, 2.0, 5)
    full = bem.solve_primal(op, PW).u
    short = bem.solve_primal(bem.assemble(two_bodies, 2.0, 3), PW).u
    np.testing.assert_allclose(short, full[:4], rtol=1e-10, atol=1e-13)


def test_first_derivative_vs_finite_difference(two_bodies):
    w0, h = 2.0, 1e-3
    u1 = bem.solve_primal(bem.assemble(two_bodies, w0, 1), PW).u[1, :, 0]
    up = bem.solve_primal(bem.assemble(two_bodies, w0 + h, 0), PW).u[0, :, 0]
    um = bem.solve_primal(bem.assemble(two_bodies, w0 - h, 0), PW).u[0, :, 0]
    assert rel(u1, (up - um) / (2 * h)) < 1e-4


def test_high_order_jets_vs_divided_differences(two_bodies):
    # interpolate order-0 probe values on 17 nodes, compare Taylor coefficients to order 6
    w0, K, h = 3.0, 6, 0.02
    pts = np.array([[0.2, 2.0], [-2.0, -1.5]])
    sol = bem.solve_primal(bem.assemble(two_bodies, w0, K), PW)
    jets = bem.eval_field(sol, pts).u[:, :, 0]
    ws = w0 + h * np.arange(-8, 9)
    vals = np.array([bem.solve_frequency(two_bodies, w, PW, pts) for w in ws])
    coef = np.linalg.solve(np.vander(ws - w0, 17, increasing=True), vals)
    err = np.abs(coef[: K + 1] - jets) / np.abs(jets)
    assert err.max() < 1e-3


def test_adjoint_reciprocity(two_bodies):
    op = bem.assemble(two_bodies, 2.0, 0)
    a, b = np.array([0.5, 2.0]), np.array([-2.0, -1.0])
    ua = bem.eval_field(bem.solve_adjoint(op, a), b).u[0, 0, 0]
    ub = bem.eval_field(bem.solve_adjoint(op, b), a).u[0, 0, 0]
    assert abs(ua - ub) / abs(ua) < 1e-3


def test_single_factorisation_for_many_adjoints(two_bodies):
    before = bem.BemOperator.factorisations
    op = bem.assemble(two_bodies, 2.0, 2)
    for p in ([0, 3], [3, 3], [-3, 0]):
        bem.solve_adjoint(op, p)
    bem.solve_primal(op, PW)
    assert bem.BemOperator.factorisations - before == 1


def test_adjoint_jets_vs_finite_difference(two_bodies):
    w0, h, xo = 2.0, 1e-3, [0.0, 3.0]
    u1 = bem.solve_adjoint(bem.assemble(two_bodies, w0, 1), xo).u[1, :, 0]
    up = bem.solve_adjoint(bem.assemble(two_bodies, w0 + h, 0), xo).u[0, :, 0]
    um = bem.solve_adjoint(bem.assemble(two_bodies, w0 - h, 0), xo).u[0, :, 0]
    assert rel(u1, (up - um) / (2 * h)) < 1e-4


def test_adjoint_near_boundary_warns(two_bodies):
    op = bem.assemble(two_bodies, 2.0, 0)
    with pytest.warns(bem.NearSingularWarning):
        bem.solve_adjoint(op, [1.01, 0.0])


def test_free_field_is_incident():
    sol = bem.solve_primal(bem.assemble(M.empty_mesh(), 2.0, 3), PW)
    pts = np.array([[0.3, 0.7], [-1.0, 2.0]])
    F = bem.eval_field(sol, pts, gradient=True)
    ref, gref = PW.field(pts, 2.0, 3, 1.0, gradient=True)
    np.testing.assert_array_equal(F.u[:, :, 0], ref)
    np.testing.assert_array_equal(F.grad[:, :, 0], gref)


def test_gradient_vs_spatial_finite_difference(two_bodies):
    w0 = 3.0
    sol = bem.solve_primal(bem.assemble(two_bodies, w0, 4), PW)
    pts = np.array([[0.2, 2.0], [-2.0, -1.5], [1.5, -1.0]])
    F = bem.eval_field(sol, pts, gradient=True)
    h = 1e-4 * 2 * np.pi / w0
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (bem.eval_field(sol, pts + e).u - bem.eval_field(sol, pts - e).u)[:, :, 0] / (2 * h)
        assert np.max(np.abs(fd - F.grad[:, :, 0, j]) / np.abs(F.grad[:, :, 0, j])) < 1e-3


def test_adjoint_gradient_vs_finite_difference(two_bodies):
    sol = bem.solve_adjoint(bem.assemble(two_bodies, 2.5, 2), [0.0, 3.0])
    pts = np.array([[-2.0, -1.5], [1.5, -1.0]])
    F = bem.eval_field(sol, pts, gradient=True)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (bem.eval_field(sol, pts + e).u - bem.eval_field(sol, pts - e).u)[:, :, 0] / (2 * h)
        assert np.max(np.abs(fd - F.grad[:, :, 0, j]) / np.abs(F.grad[:, :, 0, j])) < 1e-3


def test_points_inside_rigid_flagged(two_bodies):
    sol = bem.solve_primal(bem.assemble(two_bodies, 2.0, 0), PW)
    F = bem.eval_field(sol, [[0.0, 0.0], [0.0, 3.0]])
    np.testing.assert_array_equal(F.inside, [True, False])


def test_invalid_inputs(two_bodies):
    with pytest.raises(ValueError):
        bem.assemble(two_bodies, -1.0, 2)
    op = bem.assemble(two_bodies, 1.0, 1)
    with pytest.raises(ValueError):
        bem.solve_primal(op, PW, order=3)
