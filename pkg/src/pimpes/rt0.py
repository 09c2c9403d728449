"""Lowest-order Raviart-Thomas / piecewise-constant assembly on triangles.

On cell K with local edge i opposite vertex P_i the basis function is
``phi_i(x) = sign_i * |F_i| / (2|K|) * (x - P_i)``. Its normal component along
the global edge normal is 1 on edge i and 0 on the other two edges, so an
edge DOF is the constant normal flux density across that edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import DIRICHLET, Mesh


class AssemblyError(ValueError):
    pass


def basis_scale(mesh: Mesh) -> np.ndarray:
    """``sign_i |F_i| / (2|K|)`` per cell and local edge, shape (M, 3)."""
    g = mesh.geom
    return mesh.cell_signs * g.edge_length[mesh.cell_edges] / (2.0 * g.cell_area[:, None])


def evaluate_basis(mesh: Mesh, cell: int, local: int, x) -> np.ndarray:
    """Value of the local basis function at points ``x`` of shape (k, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    p = mesh.vertices[mesh.cells[cell, local]]
    return basis_scale(mesh)[cell, local] * (x - p)


def divergence_of_basis(mesh: Mesh) -> np.ndarray:
    """Constant divergence ``sign_i |F_i| / |K|`` per cell and local edge."""
    return 2.0 * basis_scale(mesh)


def _inverse_coefficient(lam_perm: np.ndarray) -> np.ndarray:
    """Per-cell (M, 2, 2) inverse of a scalar or tensor coefficient."""
    c = np.asarray(lam_perm, dtype=float)
    if c.ndim == 1:
        bad = np.flatnonzero(~(c > 0))
        if bad.size:
            raise AssemblyError(f"nonpositive mobility-permeability product in cell {int(bad[0])}")
        return (1.0 / c)[:, None, None] * np.eye(2)
    if c.ndim == 3 and c.shape[1:] == (2, 2):
        det = c[:, 0, 0] * c[:, 1, 1] - c[:, 0, 1] * c[:, 1, 0]
        bad = np.flatnonzero(~((c[:, 0, 0] > 0) & (det > 0)))
        if bad.size:
            raise AssemblyError(f"coefficient tensor not positive definite in cell {int(bad[0])}")
        return np.linalg.inv(c)
    raise AssemblyError("coefficient must have shape (M,) or (M, 2, 2)")


def local_mass_matrices(mesh: Mesh, inv_coeff: np.ndarray) -> np.ndarray:
    """Exact (M, 3, 3) element matrices of ``int_K W phi_i . phi_j``.

    The integrand is quadratic on each cell, so the three-point edge-midpoint
    rule integrates it exactly.
    """
    g = mesh.geom
    pts = mesh.vertices[mesh.cells]  # (M, 3, 2)
    mids = 0.5 * (pts[:, [1, 2, 0]] + pts[:, [2, 0, 1]])  # midpoint of local edge q
    d = mids[:, :, None, :] - pts[:, None, :, :]  # (M, q, i, 2)
    w = np.einsum("cqia,cab,cqjb->cij", d, inv_coeff, d)
    s = basis_scale(mesh)
    return (g.cell_area / 3.0)[:, None, None] * s[:, :, None] * s[:, None, :] * w


def _scatter(mesh: Mesh, local: np.ndarray) -> sps.csr_matrix:
    rows = np.repeat(mesh.cell_edges, 3, axis=1).ravel()
    cols = np.tile(mesh.cell_edges, (1, 3)).ravel()
    n = mesh.n_edges
    return sps.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def weighted_mass_matrix(mesh: Mesh, inv_coeff) -> sps.csr_matrix:
    """``(int W phi_i . phi_j)`` for a per-cell weight (scalar or 2x2)."""
    w = np.asarray(inv_coeff, dtype=float)
    if w.ndim == 1:
        w = w[:, None, None] * np.eye(2)
    return _scatter(mesh, local_mass_matrices(mesh, w))


def assemble_mass_matrix(mesh: Mesh, lam_t, perm) -> sps.csr_matrix:
    """``A_h = (int (lam_t K)^-1 phi_i . phi_j)``; ``perm`` is (M,) or (M, 2, 2)."""
    lam_t = np.broadcast_to(np.asarray(lam_t, dtype=float), (mesh.n_cells,))
    perm = np.asarray(perm, dtype=float)
    if perm.ndim == 0:
        perm = np.full(mesh.n_cells, float(perm))
    prod = lam_t * perm if perm.ndim == 1 else lam_t[:, None, None] * perm
    return _scatter(mesh, local_mass_matrices(mesh, _inverse_coefficient(prod)))


def assemble_divergence(mesh: Mesh) -> sps.csr_matrix:
    """``B_h = (int q_j div phi_i)``: entry ``sign |F|`` for each incidence."""
    g = mesh.geom
    vals = (mesh.cell_signs * g.edge_length[mesh.cell_edges]).ravel()
    rows = mesh.cell_edges.ravel()
    cols = np.repeat(np.arange(mesh.n_cells), 3)
    return sps.coo_matrix((vals, (rows, cols)), shape=(mesh.n_edges, mesh.n_cells)).tocsr()


def assemble_edge_weighted_divergence(mesh: Mesh, edge_weight) -> sps.csr_matrix:
    """Divergence matrix with every edge row scaled by a single edge value."""
    w = np.asarray(edge_weight, dtype=float)
    return sps.diags(w) @ assemble_divergence(mesh)


def dirichlet_vector(mesh: Mesh, edges, values) -> np.ndarray:
    """``(int_{Gamma_D} p phi_i . n)`` with midpoint-rule edge integration."""
    edges = np.asarray(edges, dtype=np.int64)
    out = np.zeros(mesh.n_edges)
    if edges.size == 0:
        return out
    bd = mesh.boundary
    if bd is None or np.any(bd.kind[edges] != DIRICHLET):
        bad = edges[0] if bd is None else edges[np.flatnonzero(bd.kind[edges] != DIRICHLET)[0]]
        x, y = mesh.geom.edge_mid[bad]
        raise AssemblyError(f"Dirichlet data requested on non-Dirichlet edge at ({x:.6g}, {y:.6g})")
    # boundary normals point outward, so phi_i . n = 1 on its own edge
    out[edges] = np.broadcast_to(values, edges.shape) * mesh.geom.edge_length[edges]
    return out


def gravity_vector(mesh: Mesh, rho, g: float, grad_z) -> np.ndarray:
    """``(int rho g grad(z) . phi_i)`` for a per-cell (or scalar) density.

    With a constant integrand vector c on K,
    ``int_K c . phi_i = sign_i |F_i| / 2 * c . (centroid - P_i)``.
    """
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (mesh.n_cells,))
    c = (rho * g)[:, None] * np.asarray(grad_z, dtype=float)[None, :]
    geo = mesh.geom
    pts = mesh.vertices[mesh.cells]
    arm = geo.centroid[:, None, :] - pts
    loc = 0.5 * mesh.cell_signs * geo.edge_length[mesh.cell_edges] * np.einsum("ca,cia->ci", c, arm)
    return np.bincount(mesh.cell_edges.ravel(), weights=loc.ravel(), minlength=mesh.n_edges)


def source_vector(mesh: Mesh, density) -> np.ndarray:
    """``(int F q_j)`` for a per-cell source density (1/s)."""
    return np.broadcast_to(np.asarray(density, dtype=float), (mesh.n_cells,)) * mesh.geom.cell_area


def assemble_capillary_coupling(mesh: Mesh, xi, f_n, lam_t, perm) -> np.ndarray:
    """``b_c = (int (lam_t K)^-1 f_n xi . phi_i)`` with cell-centred ``f_n``."""
    lam_t = np.broadcast_to(np.asarray(lam_t, dtype=float), (mesh.n_cells,))
    f_n = np.broadcast_to(np.asarray(f_n, dtype=float), (mesh.n_cells,))
    perm = np.asarray(perm, dtype=float)
    if perm.ndim == 0:
        perm = np.full(mesh.n_cells, float(perm))
    prod = lam_t * perm if perm.ndim == 1 else lam_t[:, None, None] * perm
    inv = _inverse_coefficient(prod) * f_n[:, None, None]
    return _scatter(mesh, local_mass_matrices(mesh, inv)) @ np.asarray(xi, dtype=float)


def cell_velocity(mesh: Mesh, dofs, points=None) -> np.ndarray:
    """Evaluate an RT0 field at one point per cell (centroids by default)."""
    pts = mesh.geom.centroid if points is None else np.asarray(points, dtype=float)
    verts = mesh.vertices[mesh.cells]
    s = basis_scale(mesh) * np.asarray(dofs, dtype=float)[mesh.cell_edges]
    return np.einsum("ci,cia->ca", s, pts[:, None, :] - verts)


@dataclass(frozen=True)
class AssembledVectors:
    b_d: np.ndarray
    g_h: np.ndarray
    b_wd: np.ndarray
    b_nd: np.ndarray
    g_w: np.ndarray
    g_n: np.ndarray
    f_t: np.ndarray
    f_w: np.ndarray
    f_n: np.ndarray


def assemble_vectors(mesh: Mesh, fluids, p_w_bnd, p_n_bnd, src_w, src_n) -> AssembledVectors:
    """Boundary, gravity and source vectors for one step.

    ``p_w_bnd`` and ``p_n_bnd`` are per-edge arrays; only their Dirichlet
    entries are used. ``src_w`` and ``src_n`` are per-cell source densities.
    """
    dir_edges = mesh.boundary.dirichlet if mesh.boundary is not None else np.zeros(0, np.int64)
    pw = np.asarray(p_w_bnd, dtype=float)[dir_edges]
    pn = np.asarray(p_n_bnd, dtype=float)[dir_edges]
    b_wd = dirichlet_vector(mesh, dir_edges, pw)
    b_nd = dirichlet_vector(mesh, dir_edges, pn)
    g_w = gravity_vector(mesh, fluids.rho_w, fluids.g, fluids.grad_z)
    g_n = gravity_vector(mesh, fluids.rho_n, fluids.g, fluids.grad_z)
    f_w = source_vector(mesh, src_w)
    f_n = source_vector(mesh, src_n)
    return AssembledVectors(
        b_d=dirichlet_vector(mesh, dir_edges, pn - pw),
        g_h=gravity_vector(mesh, fluids.rho_n - fluids.rho_w, fluids.g, fluids.grad_z),
        b_wd=b_wd,
        b_nd=b_nd,
        g_w=g_w,
        g_n=g_n,
        f_t=f_w + f_n,
        f_w=f_w,
        f_n=f_n,
    )
