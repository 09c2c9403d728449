"""Phase-wise upwind edge traces and the upwinded divergence operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import DIRICHLET, NEUMANN, BoundaryConfigError, Mesh
from .physics import fractional_flow
from .rt0 import assemble_divergence


@dataclass(frozen=True)
class UpwindTraces:
    """Per-edge upwind wetting saturations, one for each phase direction.

    ``s_ww`` is read from the cell upstream of the wetting flux and ``s_wn``
    from the cell upstream of the non-wetting flux (the non-wetting trace is
    stored as the wetting saturation ``1 - S_n*``).
    """

    s_ww: np.ndarray
    s_wn: np.ndarray


def upwind_trace(mesh: Mesh, s_w, phase_flux) -> np.ndarray:
    """Upwind wetting saturation on every edge for one phase.

    ``phase_flux`` is the phase normal flux along the global edge normal
    (which leaves the lower-indexed cell K_i). Interior edges take K_i's value
    when the flux is ``>= 0`` and K_j's otherwise. Neumann edges are inflow
    when the prescribed total flux is negative; Dirichlet edges follow the
    phase flux sign. Inflow edges take the prescribed boundary saturation,
    outflow edges the interior value.
    """
    s_w = np.asarray(s_w, dtype=float)
    flux = np.asarray(phase_flux, dtype=float)
    ki, kj = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    trace = np.where(flux >= 0, s_w[ki], s_w[np.maximum(kj, 0)])

    bnd = mesh.boundary_edges
    trace[bnd] = s_w[ki[bnd]]
    bd = mesh.boundary
    if bd is None:
        return trace
    inflow = np.zeros(mesh.n_edges, dtype=bool)
    inflow[bnd] = np.where(bd.kind[bnd] == NEUMANN, bd.flux[bnd] < 0, False)
    dir_in = (bd.kind == DIRICHLET) & (flux < 0) & ~np.isnan(bd.s_w)
    missing = inflow & np.isnan(bd.s_w)
    if np.any(missing):
        x, y = mesh.geom.edge_mid[np.flatnonzero(missing)[0]]
        raise BoundaryConfigError(f"inflow edge at ({x:.6g}, {y:.6g}) has no inflow saturation")
    use = inflow | dir_in
    trace[use] = bd.s_w[use]
    return trace


def upwind_traces(mesh: Mesh, s_w, flux_w, flux_n) -> UpwindTraces:
    return UpwindTraces(upwind_trace(mesh, s_w, flux_w), upwind_trace(mesh, s_w, flux_n))


def edge_fractional_flows(traces: UpwindTraces, fluids, rock):
    """``(f_w(S*_ww), f_n(S*_wn))`` per edge."""
    f_w, _ = fractional_flow(traces.s_ww, fluids, rock)
    _, f_n = fractional_flow(traces.s_wn, fluids, rock)
    return f_w, f_n


def assemble_upwinded_divergence(mesh: Mesh, traces: UpwindTraces, phase: str, fluids, rock) -> sps.csr_matrix:
    """``B_alpha``: each incidence ``sign |F| f_alpha(S*_{w,alpha})``."""
    f_w, f_n = edge_fractional_flows(traces, fluids, rock)
    weight = {"w": f_w, "n": f_n}[phase]
    return (sps.diags(weight) @ assemble_divergence(mesh)).tocsr()


def assemble_capillary_upwind(mesh: Mesh, traces: UpwindTraces, fluids, rock) -> sps.csr_matrix:
    """``B_c``: each incidence ``sign |F| f_n(S*_wn) f_w(S*_ww)``."""
    f_w, f_n = edge_fractional_flows(traces, fluids, rock)
    return (sps.diags(f_n * f_w) @ assemble_divergence(mesh)).tocsr()
