import numpy as np
import pytest

from oracles import Topology, brooks_corey_fw, capillary_form, upwinded_form
from pimpes.mesh import BoundaryConfigError, BoundaryTag, build_structured_triangulation, no_flow, tag_boundary
from pimpes.physics import FluidPair, RockModel, fractional_flow
from pimpes.rt0 import assemble_divergence
from pimpes.upwind import (
    UpwindTraces,
    assemble_capillary_upwind,
    assemble_upwinded_divergence,
    upwind_trace,
    upwind_traces,
)

FLUIDS = FluidPair(1000.0, 800.0, 1.0, 0.45)


@pytest.fixture
def rock():
    return RockModel(perm=1.0)


def _shared(mesh):
    return int(mesh.interior_edges[0])


def test_trace_follows_flux_sign(two_cells):
    m = no_flow(two_cells)
    e = _shared(m)
    s = np.array([0.3, 0.7])
    flux = np.zeros(m.n_edges)
    flux[e] = 1.0
    assert upwind_trace(m, s, flux)[e] == 0.3
    flux[e] = -1.0
    assert upwind_trace(m, s, flux)[e] == 0.7
    flux[e] = 0.0  # ties go to the lower-indexed cell
    assert upwind_trace(m, s, flux)[e] == 0.3


def test_inflow_edge_takes_boundary_saturation(two_cells):
    m = tag_boundary(two_cells, [
        (lambda p: np.isclose(p[:, 0], 0.0), BoundaryTag("neumann", flux=-1.0, s_w=1.0)),
        (lambda p: ~np.isclose(p[:, 0], 0.0), BoundaryTag("dirichlet", p_w=0.0)),
    ])
    s = np.array([0.2, 0.4])
    trace = upwind_trace(m, s, np.zeros(m.n_edges))
    left = np.flatnonzero(np.isclose(m.geom.edge_mid[:, 0], 0.0))
    assert np.all(trace[left] == 1.0)
    right = m.boundary.dirichlet
    # Dirichlet edges without an inflow saturation read the interior cell
    assert np.all(trace[right] == s[m.edge_cells[right, 0]])


def test_missing_inflow_saturation_is_a_configuration_error(two_cells):
    m = tag_boundary(two_cells, [(lambda p: np.ones(len(p), bool), BoundaryTag("neumann", flux=0.0))])
    bd = m.boundary
    flux = bd.flux.copy()
    flux[m.boundary_edges[0]] = -1.0
    from dataclasses import replace
    m2 = replace(m, boundary=replace(bd, flux=flux))
    with pytest.raises(BoundaryConfigError, match="inflow"):
        upwind_trace(m2, np.array([0.5, 0.5]), np.zeros(m.n_edges))


def test_unit_fraction_reduces_to_plain_divergence(four_cells, rock):
    m = no_flow(four_cells)
    t = upwind_traces(m, np.ones(m.n_cells), np.zeros(m.n_edges), np.zeros(m.n_edges))
    Bw = assemble_upwinded_divergence(m, t, "w", FLUIDS, rock)
    assert abs(Bw - assemble_divergence(m)).max() == 0.0
    assert assemble_capillary_upwind(m, t, FLUIDS, rock).count_nonzero() == 0


def test_uniform_saturation_scales_divergence(four_cells, rock):
    m = no_flow(four_cells)
    s = np.full(m.n_cells, 0.4)
    t = upwind_traces(m, s, np.ones(m.n_edges), -np.ones(m.n_edges))
    f_w, f_n = fractional_flow(0.4, FLUIDS, rock)
    B = assemble_divergence(m)
    assert abs(assemble_upwinded_divergence(m, t, "w", FLUIDS, rock) - f_w * B).max() <= 1e-15
    assert abs(assemble_upwinded_divergence(m, t, "n", FLUIDS, rock) - f_n * B).max() <= 1e-15
    assert abs(assemble_capillary_upwind(m, t, FLUIDS, rock) - f_w * f_n * B).max() <= 1e-15


def test_two_cell_wetting_form_against_jump_oracle(two_cells, rock):
    m = no_flow(two_cells)
    s = np.array([0.2, 0.8])
    e = _shared(m)
    direction = np.zeros(m.n_edges)
    direction[e] = 1.0  # from cell 0 into cell 1
    t = upwind_traces(m, s, direction, direction)
    Bw = assemble_upwinded_divergence(m, t, "w", FLUIDS, rock).toarray()
    top = Topology(m.vertices, m.cells, m.edges)
    fw = np.array([brooks_corey_fw(x, 1.0, 0.45) for x in s])
    np.testing.assert_allclose(Bw, upwinded_form(top, fw, direction), atol=1e-13)
    assert abs(abs(Bw[e, 0]) - fw[0] * m.geom.edge_length[e]) <= 1e-14


def test_counter_current_capillary_form_against_jump_oracle(two_cells, rock):
    m = no_flow(two_cells)
    s = np.array([0.35, 0.75])
    e = _shared(m)
    dir_w = np.zeros(m.n_edges)
    dir_n = np.zeros(m.n_edges)
    dir_w[e], dir_n[e] = 1.0, -1.0
    t = upwind_traces(m, s, dir_w, dir_n)
    assert t.s_ww[e] == 0.35 and t.s_wn[e] == 0.75
    Bc = assemble_capillary_upwind(m, t, FLUIDS, rock).toarray()
    top = Topology(m.vertices, m.cells, m.edges)
    fw = np.array([brooks_corey_fw(x, 1.0, 0.45) for x in s])
    np.testing.assert_allclose(Bc, capillary_form(top, fw, 1 - fw, dir_w, dir_n), atol=1e-13)


def test_traces_are_single_valued(four_cells, rng, rock):
    m = no_flow(four_cells)
    s = rng.uniform(0, 1, m.n_cells)
    t = upwind_traces(m, s, rng.normal(size=m.n_edges), rng.normal(size=m.n_edges))
    assert isinstance(t, UpwindTraces)
    for e, (ki, kj) in enumerate(m.edge_cells):
        allowed = {s[ki]} if kj < 0 else {s[ki], s[kj]}
        assert t.s_ww[e] in allowed and t.s_wn[e] in allowed


def test_same_side_traces_sum_to_plain_divergence(rng, rock):
    m = no_flow(build_structured_triangulation(3, 2, 3.0, 2.0))
    s = rng.uniform(0, 1, m.n_cells)
    d = rng.normal(size=m.n_edges)
    t = upwind_traces(m, s, d, d)
    total = (assemble_upwinded_divergence(m, t, "w", FLUIDS, rock)
             + assemble_upwinded_divergence(m, t, "n", FLUIDS, rock))
    assert abs(total - assemble_divergence(m)).max() <= 1e-15
