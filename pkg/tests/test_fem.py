import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from conftest import square_mesh, strip_mesh
from fsirom.errors import DegenerateCell, DimensionMismatch
from fsirom.fem import (DofMap, FieldState, PhysicalParams, apply_dirichlet, assemble, cell_geometry,
                        element_matrices, l2_inner, l2_norm, scalar_mass_matrix)
from fsirom.mesh import Region
from oracles import brute_force_laplacian, brute_force_mass, dense_dirichlet, p1_gradients, quadrature_l2

P = PhysicalParams()
TRI = np.array([[0.1, 0.0], [1.0, 0.3], [0.4, 0.9]])


def test_lame_from_poisson():
    assert P.lame_lambda == pytest.approx(2.0e6)
    assert P.with_(lambda_is_poisson=False, lambda_s=7.0).lame_lambda == 7.0
    with pytest.raises(ValueError):
        PhysicalParams(lambda_s=0.5)


def test_gradients_match_oracle():
    area, grads, _ = cell_geometry(TRI[None])
    G, a = p1_gradients(TRI)
    assert area[0] == pytest.approx(a)
    np.testing.assert_allclose(grads[0], G, rtol=1e-14)


def test_degenerate_cell():
    with pytest.raises(DegenerateCell):
        element_matrices(np.array([[0, 0], [1, 0], [2, 0]], float), P, ["mass"])
    with pytest.raises(DegenerateCell):
        element_matrices(TRI[::-1], P, ["mass"])


def test_mass_row_sums_give_area():
    mesh = strip_mesh(3)
    M = scalar_mass_matrix(mesh.vertices, mesh.cells)
    lumped = np.zeros(mesh.n_vertices)
    for tri, a in zip(mesh.cells, mesh.areas):
        lumped[tri] += a / 3.0
    np.testing.assert_allclose(M.sum(axis=1).A1, lumped, rtol=1e-14)
    assert M.sum() == pytest.approx(3.0)


@pytest.mark.parametrize("make", [square_mesh, lambda: strip_mesh(4)])
def test_assembly_matches_brute_force(make):
    mesh = make()
    dm = DofMap(mesh)
    n = mesh.n_vertices
    A = assemble(mesh, dm, ["mass", "laplacian"], P).toarray()
    u = dm.block("u")
    m = dm.block("m")
    M_ref = brute_force_mass(mesh.vertices, mesh.cells, n)
    K_ref = brute_force_laplacian(mesh.vertices, mesh.cells, n)
    np.testing.assert_allclose(A[u, u][:n, :n], P.rho_f * M_ref, rtol=1e-13)
    np.testing.assert_allclose(A[u, u][n:, n:], P.rho_f * M_ref, rtol=1e-13)
    np.testing.assert_allclose(A[m, m][:n, :n], K_ref, atol=1e-13)
    np.testing.assert_allclose(A[m, m][n:, :n], 0.0)


def test_pressure_divergence_adjoint():
    mesh = strip_mesh(3)
    dm = DofMap(mesh)
    A = assemble(mesh, dm, ["pressure", "divergence"], P).toarray()
    u, p = dm.block("u"), dm.block("p")
    np.testing.assert_allclose(A[p, u], -A[u, p].T, atol=1e-15)


def test_divergence_of_linear_field():
    # div (x, 2y) = 3, so (div u, 1) = 3 |Omega|
    mesh = square_mesh()
    dm = DofMap(mesh)
    A = assemble(mesh, dm, ["divergence"], P)
    x = FieldState.zeros(dm)
    x.values[dm.block("u")] = np.concatenate([mesh.vertices[:, 0], 2 * mesh.vertices[:, 1]])
    assert (A @ x.values)[dm.block("p")].sum() == pytest.approx(3.0, rel=1e-13)


def test_convection_of_linear_field():
    # ((w . grad) x, phi_i) with w = (1, 0) equals the mass row sums
    loc = element_matrices(TRI, P, ["convection", "mass"], advecting=np.tile([1.0, 0.0], (3, 1)))
    np.testing.assert_allclose(loc["convection"] @ TRI[:, 0], loc["mass"].sum(axis=1), rtol=1e-13)


def test_newton_convection_linearization():
    rng = np.random.default_rng(5)
    u0 = rng.standard_normal((3, 2))
    du = rng.standard_normal((3, 2))
    loc = element_matrices(TRI, P, ["convection"], advecting=u0)
    conv = lambda v: np.concatenate([loc["convection"] @ v[:, 0], loc["convection"] @ v[:, 1]])
    eps = 1e-6
    plus = element_matrices(TRI, P, ["convection"], advecting=u0 + eps * du)["convection"]
    fd = (np.concatenate([plus @ (u0 + eps * du)[:, 0], plus @ (u0 + eps * du)[:, 1]]) - conv(u0)) / eps
    newton = element_matrices(TRI, P, ["convection_newton"], velocity=u0)["convection_newton"]
    exact = conv(du) + newton @ du.T.ravel()
    np.testing.assert_allclose(fd, exact, rtol=1e-4, atol=1e-4)


def test_elasticity_kernel_and_definiteness():
    K = element_matrices(TRI, P, ["elasticity"])["elasticity"]
    for mode in ([1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1], np.concatenate([-TRI[:, 1], TRI[:, 0]])):
        assert np.linalg.norm(K @ np.asarray(mode, float)) <= 1e-8 * np.linalg.norm(K)
    w = np.linalg.eigvalsh(K)
    assert np.all(w > -1e-8 * w.max())
    assert np.sum(w > 1e-8 * w.max()) == 3


@pytest.mark.parametrize("term", ["viscous", "laplacian", "stabilization", "mass"])
def test_symmetric_positive_semidefinite(term):
    loc = element_matrices(TRI, P, [term])[term]
    np.testing.assert_allclose(loc, loc.T, atol=1e-14 * np.abs(loc).max())
    assert np.linalg.eigvalsh(loc).min() >= -1e-12 * np.abs(loc).max()


def test_stabilization_scales_with_h_squared():
    base = element_matrices(TRI, P, ["stabilization", "laplacian"])
    small = element_matrices(0.5 * TRI, P, ["stabilization", "laplacian"])
    np.testing.assert_allclose(small["laplacian"], base["laplacian"], rtol=1e-13)
    np.testing.assert_allclose(small["stabilization"], 0.25 * base["stabilization"], rtol=1e-13)


def test_structure_blocks_live_on_d():
    mesh = square_mesh(Region.STRUCTURE)
    dm = DofMap(mesh)
    assert dm.sizes == {"u": 0, "p": 0, "d": 10, "m": 0}
    A = assemble(mesh, dm, ["elasticity", "structure_mass"], P).toarray()
    M = brute_force_mass(mesh.vertices, mesh.cells, 5)
    np.testing.assert_allclose(A[5:, 5:] - A[5:, 5:].T, 0.0, atol=1e-6)
    K = assemble(mesh, dm, ["elasticity"], P).toarray()
    np.testing.assert_allclose((A - K)[:5, :5], P.rho_s * M, rtol=1e-12)


def test_dirichlet_matches_dense_elimination():
    mesh = strip_mesh(4)
    n = mesh.n_vertices
    K = brute_force_laplacian(mesh.vertices, mesh.cells, n) + brute_force_mass(mesh.vertices, mesh.cells, n)
    b = np.random.default_rng(1).standard_normal(n)
    constrained = np.array([0, 5, 9])
    values = np.array([1.0, -2.0, 0.5])
    A, rhs = apply_dirichlet(sp.csr_matrix(K), b, constrained, values)
    x = sla.spsolve(A.tocsc(), rhs)
    np.testing.assert_allclose(x, dense_dirichlet(K, b, constrained, values), rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(x[constrained], values)


def test_dirichlet_does_not_mutate():
    K = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    b = np.ones(2)
    apply_dirichlet(K, b, [0], [3.0])
    np.testing.assert_array_equal(K.toarray(), [[2, -1], [-1, 2]])
    np.testing.assert_array_equal(b, [1, 1])


def test_l2_inner_matches_quadrature():
    mesh = strip_mesh(3)
    rng = np.random.default_rng(2)
    f, g = rng.standard_normal((2, mesh.n_vertices))
    assert l2_inner(f, g, mesh.vertices, mesh.cells) == pytest.approx(
        quadrature_l2(f, g, mesh.vertices, mesh.cells), rel=1e-13)
    F, G = rng.standard_normal((2, mesh.n_vertices, 2))
    assert l2_inner(F, G, mesh.vertices, mesh.cells) == pytest.approx(
        quadrature_l2(F, G, mesh.vertices, mesh.cells), rel=1e-13)
    assert l2_norm(np.ones(mesh.n_vertices), mesh.vertices, mesh.cells) == pytest.approx(np.sqrt(3.0))


def test_field_state_blocks():
    dm = DofMap(square_mesh())
    s = FieldState.zeros(dm, 1.5)
    s.values[:] = np.arange(dm.size)
    assert s.u.shape == (10,) and s.p.shape == (5,) and s.d.shape == (0,) and s.m.shape == (10,)
    assert s.p[0] == 10
    with pytest.raises(DimensionMismatch):
        FieldState(0.0, np.zeros(3), dict(dm.sizes))
