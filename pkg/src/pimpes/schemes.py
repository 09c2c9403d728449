"""IMPES time steppers on RT0 x P0.

``pimpes_step`` conserves both phases: the pressure block enforces the sum of
the two upwinded phase divergences, and the capillary-potential field
``xi_c`` is solved first on its own. ``hfimpes_step`` and ``std_impes_step``
are the reference schemes it is compared against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sps

from . import physics
from .linsolve import SaddleSystem, solve_saddle, solve_spd
from .mesh import DIRICHLET, NEUMANN, Mesh
from .physics import FluidPair, RockModel
from .rt0 import (
    assemble_capillary_coupling,
    assemble_divergence,
    assemble_mass_matrix,
    assemble_vectors,
    dirichlet_vector,
)
from .upwind import UpwindTraces, edge_fractional_flows, upwind_trace, upwind_traces

log = logging.getLogger(__name__)

SCHEMES = ("pimpes", "hfimpes", "stdimpes")


class StepError(RuntimeError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class Problem:
    """Everything a step needs besides the state.

    ``source_rate`` is a per-cell total volumetric source density (1/s);
    positive entries inject with wetting fraction ``source_sw``, negative
    entries produce at the cell's current fractional flow.
    """

    mesh: Mesh
    fluids: FluidPair
    rock: RockModel
    source_rate: Optional[np.ndarray] = None
    source_sw: Optional[np.ndarray] = None
    p_ref: float = 0.0

    def __post_init__(self):
        if self.mesh.boundary is None:
            raise ValueError("mesh has no boundary tags")
        m = self.mesh.n_cells
        if self.rock.perm.size == 1:
            self.rock = replace(self.rock, perm=np.full(m, self.rock.perm[0]))
        if self.rock.perm.shape != (m,):
            raise ValueError("permeability must have one value per cell")
        if self.source_rate is None:
            self.source_rate = np.zeros(m)
        if self.source_sw is None:
            self.source_sw = np.ones(m)
        self.B = assemble_divergence(self.mesh)
        bd = self.mesh.boundary
        self.neumann = bd.neumann
        self.free = np.flatnonzero(bd.kind != NEUMANN)
        self.dirichlet = bd.dirichlet
        self.pore_volume = np.broadcast_to(self.rock.porosity, (m,)) * self.mesh.geom.cell_area

    @property
    def all_neumann(self) -> bool:
        return self.dirichlet.size == 0

    def sources(self, s_w):
        q = self.source_rate
        f_w, _ = physics.fractional_flow(s_w, self.fluids, self.rock)
        frac = np.where(q > 0, self.source_sw, f_w)
        q_w = q * frac
        return q_w, q - q_w

    def boundary_pressures(self, s_w):
        """Per-edge ``(p_w, p_n)`` Dirichlet values; derived ``p_n = p_w + p_c``."""
        bd = self.mesh.boundary
        pc_cell = physics.capillary_pressure(s_w, self.rock)
        cell = self.mesh.edge_cells[:, 0]
        p_n = np.where(np.isnan(bd.p_n), bd.p_w + pc_cell[cell], bd.p_n)
        return bd.p_w, p_n

    def vectors(self, s_w):
        p_w, p_n = self.boundary_pressures(s_w)
        q_w, q_n = self.sources(s_w)
        return assemble_vectors(self.mesh, self.fluids, p_w, p_n, q_w, q_n)

    def swapped(self) -> "Problem":
        """The same problem with the phase labels exchanged."""
        bd = self.mesh.boundary
        p_w, p_n = bd.p_w, bd.p_n
        derived = np.isnan(p_n)
        if np.any(derived[bd.dirichlet]):
            raise ValueError("phase swap needs explicit p_n on Dirichlet edges")
        new_bd = replace(bd, p_w=np.where(derived, 0.0, p_n), p_n=np.where(derived, np.nan, p_w),
                         s_w=1.0 - bd.s_w)
        return Problem(
            mesh=replace(self.mesh, boundary=new_bd),
            fluids=self.fluids.swapped(),
            rock=self.rock.swapped(),
            source_rate=self.source_rate.copy(),
            source_sw=1.0 - self.source_sw,
            p_ref=self.p_ref,
        )


@dataclass
class SimState:
    t: float
    s_w: np.ndarray
    p_w: np.ndarray
    p_n: np.ndarray
    u_t: np.ndarray
    xi_c: np.ndarray
    flux_w: np.ndarray  # phase normal flux densities along the global normals
    flux_n: np.ndarray
    step: int = 0
    # phase potential velocities whose signs pick next step's upwind cells
    dir_w: Optional[np.ndarray] = None
    dir_n: Optional[np.ndarray] = None

    def directions(self):
        if self.dir_w is None:
            return self.flux_w, self.flux_n
        return self.dir_w, self.dir_n

    @property
    def s_n(self) -> np.ndarray:
        return 1.0 - self.s_w

    def copy(self) -> "SimState":
        dirs = [None if d is None else d.copy() for d in (self.dir_w, self.dir_n)]
        return SimState(self.t, self.s_w.copy(), self.p_w.copy(), self.p_n.copy(), self.u_t.copy(),
                        self.xi_c.copy(), self.flux_w.copy(), self.flux_n.copy(), self.step, *dirs)


def initial_state(problem: Problem, s_w) -> SimState:
    m, n = problem.mesh.n_cells, problem.mesh.n_edges
    s = np.array(np.broadcast_to(np.asarray(s_w, dtype=float), (m,)))
    z = np.zeros(n)
    return SimState(0.0, s, np.zeros(m), np.zeros(m), z.copy(), z.copy(), z.copy(), z.copy())


@dataclass
class StepRecord:
    """What one step did, for ledgers and conservation checks."""

    dt: float
    s_old: np.ndarray
    s_raw: np.ndarray  # before any clamping
    s_w_direct: np.ndarray  # wetting saturation from its own balance
    s_n_direct: np.ndarray  # non-wetting saturation from its own balance
    edge_flux_w: np.ndarray
    edge_flux_n: np.ndarray
    cell_source_w: np.ndarray  # integrated over each cell, m^2/s
    cell_source_n: np.ndarray
    traces: Optional[UpwindTraces] = None
    x_c: Optional[np.ndarray] = None
    reports: list = field(default_factory=list)
    clamped: int = 0


@dataclass(frozen=True)
class SchemeConfig:
    """``dt`` fixes the step; otherwise ``cfl`` sets it adaptively."""

    scheme: str = "pimpes"
    dt: Optional[float] = None
    cfl: Optional[float] = None
    dt_min: float = 1e-6
    dt_max: float = 1e12
    steps: int = 100
    t_end: Optional[float] = None
    bounds_policy: str = "record"
    backend: str = "direct"
    rtol: float = 1e-10
    direction_check: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.dt is None and self.cfl is None:
            raise ValueError("either dt or cfl must be given")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.cfl is not None and not 0 < self.cfl <= 1:
            raise ValueError("cfl target must lie in (0, 1]")
        if self.bounds_policy not in ("record", "clamp"):
            raise ValueError("bounds_policy must be 'record' or 'clamp'")
        if self.bounds_policy == "clamp" and self.scheme == "pimpes":
            raise ValueError("clamping is only permitted for the reference schemes")
        if not 0 < self.dt_min <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_max")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


# --- helpers ------------------------------------------------------------------

def _coefficients(problem: Problem, s_w):
    lw, ln = physics.mobilities(s_w, problem.fluids, problem.rock)
    lam_t = lw + ln
    return lam_t, lw / lam_t, ln


def _projection(problem: Problem, A, rhs, log_) -> np.ndarray:
    """Solve ``A x = rhs`` on the non-Neumann edges; Neumann DOFs stay zero."""
    free = problem.free
    x = np.zeros(problem.mesh.n_edges)
    x[free] = solve_spd(A[free][:, free], rhs[free], log=log_)
    return x


def _gauge(problem: Problem):
    return (0, problem.p_ref) if problem.all_neumann else None


def _saddle(problem: Problem, A, C, r_u, r_p, fixed_values, config, log_):
    bd = problem.mesh.boundary
    sys = SaddleSystem(A, problem.B, C, r_u, r_p, fixed=problem.neumann,
                       fixed_values=fixed_values[problem.neumann], gauge=_gauge(problem))
    return solve_saddle(sys, rtol=config.rtol if config else 1e-10,
                        backend=config.backend if config else "direct", log=log_)


def _check_finite(state_new, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise StepError("non-finite values in the new state", state_new)


def phase_potential_velocities(u_t, xi_c, traces: UpwindTraces, fluids, rock):
    """``u_t - f_n* xi`` and ``u_t + f_w* xi``: the phase fluxes before the
    upwinded mobility factor. Their signs survive where ``f_alpha* = 0``."""
    fw, fn = edge_fractional_flows(traces, fluids, rock)
    return u_t - fn * xi_c, u_t + fw * xi_c


def reconstruct_phase_velocities(u_t, xi_c, traces: UpwindTraces, fluids, rock):
    """Phase normal fluxes ``f_w* u_t - f_n* f_w* xi`` and ``f_n* u_t + f_n* f_w* xi``.

    Their sum is ``(f_w* + f_n*) u_t``, which is ``u_t`` wherever both phases
    are upwinded from the same side.
    """
    fw, fn = edge_fractional_flows(traces, fluids, rock)
    cap = fn * fw * xi_c
    return fw * u_t - cap, fn * u_t + cap


# --- P-IMPES ------------------------------------------------------------------

class _PressureSystem:
    """Step-1 result plus what Step 2 needs, so Step 2 can be re-solved for
    different upwind traces without redoing Step 1."""

    def __init__(self, problem: Problem, s_w, config=None, log_=None):
        mesh, rock = problem.mesh, problem.rock
        self.problem, self.config, self.log = problem, config, log_
        lam_t, f_w_cell, _ = _coefficients(problem, s_w)
        self.A = assemble_mass_matrix(mesh, lam_t, rock.perm)
        self.vec = problem.vectors(s_w)
        self.pc = physics.capillary_pressure(s_w, rock)
        self.x_c = _projection(problem, self.A, problem.B @ self.pc - self.vec.b_d - self.vec.g_h, log_)
        self.r_u = (assemble_capillary_coupling(mesh, self.x_c, 1.0 - f_w_cell, lam_t, rock.perm)
                    - self.vec.b_wd - self.vec.g_w)

    def solve(self, traces: UpwindTraces):
        problem = self.problem
        fw_e, fn_e = edge_fractional_flows(traces, problem.fluids, problem.rock)
        C = (sps.diags(fw_e + fn_e) @ problem.B).T.tocsr()
        return _saddle(problem, self.A, C, self.r_u, self.vec.f_t, problem.mesh.boundary.flux,
                       self.config, self.log)


def pimpes_pressure(problem: Problem, state: SimState, traces: UpwindTraces, config=None, log_=None):
    """Steps 1 and 2: ``xi_c`` from the SPD solve, then ``(u_t, p_w)``."""
    ps = _PressureSystem(problem, state.s_w, config, log_)
    u_t, p_w = ps.solve(traces)
    return u_t, ps.x_c, p_w, p_w + ps.pc, ps.vec


def _safer_traces(problem: Problem, old: UpwindTraces, new: UpwindTraces) -> UpwindTraces:
    """On edges whose upwind cell changed, keep the trace with the lower phase mobility."""
    fw_old, fn_old = edge_fractional_flows(old, problem.fluids, problem.rock)
    fw_new, fn_new = edge_fractional_flows(new, problem.fluids, problem.rock)
    s_ww = np.where(fw_new < fw_old, new.s_ww, old.s_ww)
    s_wn = np.where(fn_new < fn_old, new.s_wn, old.s_wn)
    return UpwindTraces(s_ww, s_wn)


def pimpes_step(problem: Problem, state: SimState, dt: float, config: Optional[SchemeConfig] = None):
    reports: list = []
    s = state.s_w
    fluids, rock = problem.fluids, problem.rock
    traces = upwind_traces(problem.mesh, s, *state.directions())
    ps = _PressureSystem(problem, s, config, reports)
    x_c, vec = ps.x_c, ps.vec
    u_t, p_w = ps.solve(traces)
    if config is None or config.direction_check:
        current = upwind_traces(problem.mesh, s, *phase_potential_velocities(u_t, x_c, traces, fluids, rock))
        if np.any(current.s_ww != traces.s_ww) or np.any(current.s_wn != traces.s_wn):
            traces = _safer_traces(problem, traces, current)
            u_t, p_w = ps.solve(traces)
    p_n = p_w + ps.pc
    flux_w, flux_n = reconstruct_phase_velocities(u_t, x_c, traces, fluids, rock)
    dir_w, dir_n = phase_potential_velocities(u_t, x_c, traces, fluids, rock)

    scale = dt / problem.pore_volume
    BT = problem.B.T
    s_w_direct = s - scale * (BT @ flux_w - vec.f_w)
    s_n_direct = (1.0 - s) - scale * (BT @ flux_n - vec.f_n)
    # both balances hold to roundoff; updating the minority phase keeps a
    # saturation that no flux touches exactly at 0 or 1
    s_new = np.where(s <= 0.5, s_w_direct, 1.0 - s_n_direct)

    new = SimState(state.t + dt, s_new, p_w, p_n, u_t, x_c, flux_w, flux_n, state.step + 1,
                   dir_w, dir_n)
    _check_finite(new, s_new, p_w, u_t, x_c)
    rec = StepRecord(dt, s.copy(), s_new.copy(), s_w_direct, s_n_direct, flux_w, flux_n,
                     vec.f_w, vec.f_n, traces, x_c, reports)
    return new, rec


def bootstrap(problem: Problem, state: SimState, config: Optional[SchemeConfig] = None,
              passes: int = 2) -> SimState:
    """Initial velocities and upwind directions, starting from zero directions.

    The first pass reads every edge from its lower-indexed cell; later passes
    reuse the directions of the previous one. The saturation is not changed.
    """
    dir_w = dir_n = np.zeros(problem.mesh.n_edges)
    for _ in range(passes):
        traces = upwind_traces(problem.mesh, state.s_w, dir_w, dir_n)
        u_t, x_c, p_w, p_n, _ = pimpes_pressure(problem, state, traces, config)
        dir_w, dir_n = phase_potential_velocities(u_t, x_c, traces, problem.fluids, problem.rock)
    flux_w, flux_n = reconstruct_phase_velocities(u_t, x_c, traces, problem.fluids, problem.rock)
    return replace(state, u_t=u_t, xi_c=x_c, p_w=p_w, p_n=p_n, flux_w=flux_w, flux_n=flux_n,
                   dir_w=dir_w, dir_n=dir_n)


# --- reference schemes --------------------------------------------------------

def _finish_reference(problem, state, dt, config, s, flux_w, u_t, xi, p_w, p_n, vec, traces, reports):
    scale = dt / problem.pore_volume
    BT = problem.B.T
    flux_n = u_t - flux_w
    s_raw = s - scale * (BT @ flux_w - vec.f_w)
    s_n_direct = (1.0 - s) - scale * (BT @ flux_n - vec.f_n)
    clamped = 0
    s_new = s_raw
    if config is not None and config.bounds_policy == "clamp":
        s_new = np.clip(s_raw, 0.0, 1.0)
        clamped = int(np.count_nonzero(s_new != s_raw))
    new = SimState(state.t + dt, s_new, p_w, p_n, u_t, xi, flux_w, flux_n, state.step + 1)
    _check_finite(new, s_raw, p_w, u_t)
    rec = StepRecord(dt, s.copy(), s_raw.copy(), s_raw.copy(), s_n_direct, flux_w, flux_n,
                     vec.f_w, vec.f_n, traces, xi, reports, clamped)
    return new, rec


def hfimpes_step(problem: Problem, state: SimState, dt: float, config: Optional[SchemeConfig] = None):
    """Capillary-gravity velocity first, then the advective pressure solve."""
    mesh, rock, fluids = problem.mesh, problem.rock, problem.fluids
    reports: list = []
    s = state.s_w
    lam_t, _, lam_n = _coefficients(problem, s)
    # lam_n vanishes in pure wetting cells; floor it at the clamp saturation
    floor = rock.eps_s ** rock.beta / fluids.mu_n
    lam_n = np.maximum(lam_n, floor)
    vec = problem.vectors(s)
    pc = physics.capillary_pressure(s, rock)

    A_n = assemble_mass_matrix(mesh, lam_n, rock.perm)
    u_c = _projection(problem, A_n, problem.B @ pc - vec.b_d - vec.g_h, reports)

    A = assemble_mass_matrix(mesh, lam_t, rock.perm)
    r_p = vec.f_t - problem.B.T @ u_c
    u_a, p_w = _saddle(problem, A, problem.B.T.tocsr(), -vec.b_wd - vec.g_w, r_p,
                       mesh.boundary.flux, config, reports)
    u_t = u_a + u_c

    trace_w = upwind_trace(mesh, s, u_a)
    fw_e, _ = physics.fractional_flow(trace_w, fluids, rock)
    flux_w = fw_e * u_a
    traces = UpwindTraces(trace_w, upwind_trace(mesh, s, u_t - flux_w))
    return _finish_reference(problem, state, dt, config, s, flux_w, u_t, u_c, p_w, p_w + pc,
                             vec, traces, reports)


def std_impes_step(problem: Problem, state: SimState, dt: float, config: Optional[SchemeConfig] = None):
    """Capillary gradient linearised as ``p_c'(S) grad S`` (no jump across K contrasts)."""
    mesh, rock, fluids = problem.mesh, problem.rock, problem.fluids
    reports: list = []
    s = state.s_w
    lam_t, f_w_cell, _ = _coefficients(problem, s)
    f_n_cell = 1.0 - f_w_cell
    vec = problem.vectors(s)
    A = assemble_mass_matrix(mesh, lam_t, rock.perm)

    # psi ~ -lam_t K grad S, with zero-gradient data on Dirichlet edges
    cell = mesh.edge_cells[:, 0]
    b_s = dirichlet_vector(mesh, problem.dirichlet, s[cell[problem.dirichlet]])
    psi = _projection(problem, A, problem.B @ s - b_s, reports)
    x_g = _projection(problem, A, -vec.g_h, reports)
    dpc = physics.capillary_pressure_derivative(s, rock)
    ki, kj = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    dpc_e = np.where(kj >= 0, 0.5 * (dpc[ki] + dpc[np.maximum(kj, 0)]), dpc[ki])
    xi = dpc_e * psi + x_g

    r_u = assemble_capillary_coupling(mesh, xi, f_n_cell, lam_t, rock.perm) - vec.b_wd - vec.g_w
    u_t, p_w = _saddle(problem, A, problem.B.T.tocsr(), r_u, vec.f_t, mesh.boundary.flux, config, reports)

    f_w_c, f_n_c = physics.fractional_flow(s, fluids, rock)
    fn_avg = np.where(kj >= 0, 0.5 * (f_n_c[ki] + f_n_c[np.maximum(kj, 0)]), f_n_c[ki])
    fw_avg = 1.0 - fn_avg
    traces = upwind_traces(mesh, s, u_t - fn_avg * xi, u_t + fw_avg * xi)
    flux_w, _ = reconstruct_phase_velocities(u_t, xi, traces, fluids, rock)
    pc = physics.capillary_pressure(s, rock)
    return _finish_reference(problem, state, dt, config, s, flux_w, u_t, xi, p_w, p_w + pc,
                             vec, traces, reports)


STEPPERS: dict[str, Callable] = {
    "pimpes": pimpes_step,
    "hfimpes": hfimpes_step,
    "stdimpes": std_impes_step,
}


# --- time loop ----------------------------------------------------------------

def capillary_diffusion_rate(problem: Problem, s_w) -> np.ndarray:
    """Per-cell ``sum_F |F| D_F / (d_F phi |K|)`` (1/s) with
    ``D = K lam_w lam_n / lam_t |p_c'|`` and ``d_F`` the centroid distance.

    Bounds the explicit capillary-diffusion update the way the advective
    rate bounds transport; it dominates once velocities die out near
    capillary equilibrium.
    """
    mesh, g = problem.mesh, problem.mesh.geom
    lw, ln = physics.mobilities(s_w, problem.fluids, problem.rock)
    dpc = np.abs(physics.capillary_pressure_derivative(s_w, problem.rock))
    D = problem.rock.perm * lw * ln / (lw + ln) * dpc
    ki, kj = mesh.edge_cells[:, 0], mesh.edge_cells[:, 1]
    inner = kj >= 0
    ki, kj = ki[inner], kj[inner]
    dist = np.linalg.norm(g.centroid[ki] - g.centroid[kj], axis=1)
    w = g.edge_length[inner] * np.maximum(D[ki], D[kj]) / dist
    total = np.bincount(ki, w, mesh.n_cells) + np.bincount(kj, w, mesh.n_cells)
    return total / problem.pore_volume


def courant_rate(problem: Problem, state: SimState) -> float:
    """Largest per-cell advective plus capillary-diffusion rate (1/s).

    The advective part is ``sum_F |F| (|u_t.n| + |xi_c.n|) / (phi |K|)``:
    ``|u_t| + |xi_c|`` bounds both phase potential velocities, so ``dt``
    times it is the fraction of a cell's pore volume swept in one step.
    """
    speed = np.abs(state.u_t) + np.abs(state.xi_c)
    swept = abs(problem.B).T @ speed / problem.pore_volume
    rate = swept + capillary_diffusion_rate(problem, state.s_w)
    return float(rate.max(initial=0.0))


def choose_dt(problem: Problem, state: SimState, config: SchemeConfig) -> float:
    if config.dt is not None:
        return config.dt
    rate = courant_rate(problem, state)
    if rate == 0.0:
        return config.dt_max
    return float(np.clip(config.cfl / rate, config.dt_min, config.dt_max))


def run_time_loop(problem: Problem, state: SimState, config: SchemeConfig,
                  callbacks: Iterable[Callable] = (), ledger=None):
    """Advance ``config.steps`` steps (or to ``config.t_end``).

    Each callback is called as ``cb(state, record)`` after every step. Returns
    the final state and the mass ledger.
    """
    from .diagnostics import MassLedger

    ledger = MassLedger(problem) if ledger is None else ledger
    if config.steps == 0 or (config.t_end is not None and state.t >= config.t_end):
        return state, ledger
    stepper = STEPPERS[config.scheme]
    if state.step == 0 and not np.any(state.u_t) and not np.any(state.xi_c):
        try:
            state = bootstrap(problem, state, config)
        except Exception as exc:
            raise StepError(f"initial pressure solve failed: {exc}", state) from exc
    callbacks = list(callbacks)
    for _ in range(config.steps):
        dt = choose_dt(problem, state, config)
        if config.t_end is not None:
            if state.t >= config.t_end * (1 - 1e-12):
                break
            dt = min(dt, config.t_end - state.t)
        try:
            state, record = stepper(problem, state, dt, config)
        except Exception as exc:
            if isinstance(exc, StepError):
                raise
            raise StepError(f"step {state.step + 1} failed: {exc}", state) from exc
        ledger.update(state, record)
        for cb in callbacks:
            cb(state, record)
    return state, ledger
