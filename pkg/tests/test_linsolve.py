import numpy as np
import pytest
import scipy.sparse as sps

from pimpes.linsolve import SaddleSystem, SolverError, relative_residual, solve_saddle, solve_spd
from pimpes.mesh import BoundaryTag, build_structured_triangulation, mesh_from_arrays, tag_boundary
from pimpes.rt0 import assemble_divergence, assemble_mass_matrix, dirichlet_vector


@pytest.mark.parametrize("backend", ["direct", "iterative"])
def test_spd_hand_solve(backend):
    log = []
    x = solve_spd(sps.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), backend=backend, log=log)
    np.testing.assert_allclose(x, [1.0, 1.0], rtol=1e-13)
    assert log[0].relative_residual <= 1e-10


def test_spd_identity_and_zero_rhs():
    b = np.array([0.5, -2.0, 7.0])
    np.testing.assert_array_equal(solve_spd(sps.identity(3), b), b)
    np.testing.assert_array_equal(solve_spd(sps.identity(3), np.zeros(3)), np.zeros(3))


def test_spd_singular_raises():
    with pytest.raises(SolverError):
        solve_spd(sps.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 0.0]))


def _single_cell():
    return mesh_from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


def test_single_cell_no_flow_with_gauge():
    m = _single_cell()
    A = assemble_mass_matrix(m, 1.0, 1.0)
    B = assemble_divergence(m)
    sys = SaddleSystem(A, B, B.T, np.zeros(3), np.zeros(1), fixed=np.arange(3), fixed_values=np.zeros(3),
                       gauge=(0, 0.0))
    u, p = solve_saddle(sys)
    assert not np.any(u) and p[0] == 0.0


def test_all_neumann_without_gauge_is_refused():
    m = build_structured_triangulation(2, 2, 1.0, 1.0)
    A = assemble_mass_matrix(m, 1.0, 1.0)
    B = assemble_divergence(m)
    bnd = m.boundary_edges
    sys = SaddleSystem(A, B, B.T, np.zeros(m.n_edges), np.zeros(m.n_cells), fixed=bnd,
                       fixed_values=np.zeros(bnd.size))
    with pytest.raises(SolverError, match="gauge"):
        solve_saddle(sys)


def test_gauge_pins_pressure_and_reports_defect():
    m = build_structured_triangulation(2, 2, 1.0, 1.0)
    A = assemble_mass_matrix(m, 1.0, 1.0)
    B = assemble_divergence(m)
    bnd = m.boundary_edges
    src = np.zeros(m.n_cells)
    src[0], src[-1] = 1.0, -1.0
    log = []
    sys = SaddleSystem(A, B, B.T, np.zeros(m.n_edges), src, fixed=bnd, fixed_values=np.zeros(bnd.size),
                       gauge=(0, 5.0))
    u, p = solve_saddle(sys, log=log)
    assert p[0] == 5.0
    assert log[0].compatibility_defect <= 1e-10
    np.testing.assert_allclose(B.T @ u, src, atol=1e-12)


def test_incompatible_all_neumann_data_rejected():
    m = build_structured_triangulation(2, 2, 1.0, 1.0)
    A = assemble_mass_matrix(m, 1.0, 1.0)
    B = assemble_divergence(m)
    bnd = m.boundary_edges
    sys = SaddleSystem(A, B, B.T, np.zeros(m.n_edges), np.ones(m.n_cells), fixed=bnd,
                       fixed_values=np.zeros(bnd.size), gauge=(0, 0.0))
    with pytest.raises(SolverError, match="incompatible"):
        solve_saddle(sys)


def _tagged_strip(nx, ny, lx, ly, left):
    m = build_structured_triangulation(nx, ny, lx, ly)
    return tag_boundary(m, [
        (lambda p: np.isclose(p[:, 0], 0.0), left),
        (lambda p: np.isclose(p[:, 0], lx), BoundaryTag("dirichlet", p_w=0.0)),
        (lambda p: ~np.isclose(p[:, 0], 0.0) & ~np.isclose(p[:, 0], lx), BoundaryTag("neumann")),
    ])


def _mixed_poisson(m, lam, backend="direct"):
    A = assemble_mass_matrix(m, lam, 1.0)
    B = assemble_divergence(m)
    bd = m.boundary
    r_u = -dirichlet_vector(m, bd.dirichlet, bd.p_w[bd.dirichlet])
    sys = SaddleSystem(A, B, B.T, r_u, np.zeros(m.n_cells), fixed=bd.neumann,
                       fixed_values=bd.flux[bd.neumann])
    return solve_saddle(sys, backend=backend)


def test_two_cell_shared_edge_carries_inflow(two_cells):
    m = _tagged_strip(1, 1, 1.0, 1.0, BoundaryTag("neumann", rate=2.0, s_w=1.0))
    u, _ = _mixed_poisson(m, 1.0)
    e = int(m.interior_edges[0])
    assert abs(abs(u[e] * m.geom.edge_length[e]) - 2.0) <= 1e-12


@pytest.mark.parametrize("backend", ["direct", "iterative"])
def test_linear_pressure_drop_gives_uniform_velocity(backend):
    lam, drop, length = 2.5, 1.0e5, 6.0
    m = _tagged_strip(6, 3, length, 3.0, BoundaryTag("dirichlet", p_w=drop))
    u, p = _mixed_poisson(m, lam, backend)
    exact = lam * drop / length
    np.testing.assert_allclose(u, exact * m.geom.normal[:, 0], rtol=0, atol=1e-10 * exact)
    np.testing.assert_allclose(p, drop * (1 - m.geom.centroid[:, 0] / length), rtol=1e-10)


def test_relative_residual_scale():
    M = sps.csr_matrix([[1.0, 0.0], [0.0, 2.0]])
    assert relative_residual(M, np.array([1.0, 1.0]), np.array([1.0, 2.0])) == 0.0
