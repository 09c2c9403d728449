"""Mass ledgers, the bounds-violation metric, CFL numbers and front probes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DAY = 86400.0
CSV_HEADER = ("step", "t_days", "S_IO_w", "S_ND_w", "S_O_n", "S_RD_n", "eta", "cfl", "minS", "maxS")


def in_bounds(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return (s >= 0.0) & (s <= 1.0)


class EtaAccumulator:
    """Running ``1 - ||S chi|| / ||S||`` with area weights in space and dt weights in time."""

    def __init__(self):
        self.num = 0.0
        self.den = 0.0
        self.steps = 0

    def add(self, s, area, dt: float) -> None:
        s = np.asarray(s, dtype=float)
        sq = area * s * s
        self.num += dt * float(sq[in_bounds(s)].sum())
        self.den += dt * float(sq.sum())
        self.steps += 1

    @property
    def value(self) -> float:
        if self.steps == 0:
            raise ValueError("eta needs at least one recorded step")
        if self.num == self.den:
            return 0.0
        if self.den == 0.0:
            return 0.0
        return 1.0 - math.sqrt(self.num / self.den)


def eta_metric(history, areas, dts) -> float:
    """Bounds-violation measure of a saturation history.

    ``history`` is a sequence of per-cell saturation arrays (pre-clamp),
    ``areas`` the cell areas and ``dts`` the step lengths. Zero exactly when
    every value lies in [0, 1], one when none does.
    """
    acc = EtaAccumulator()
    for s, dt in zip(history, dts, strict=True):
        acc.add(s, np.asarray(areas, dtype=float), float(dt))
    return acc.value


def cfl_number(u_t, dt: float, h: float) -> float:
    """``max |u_t . n| * dt / h`` over edges."""
    u = np.asarray(u_t, dtype=float)
    return float(np.abs(u).max(initial=0.0)) * dt / h


def front_position(centroids, s_w, threshold: float, direction=(1.0, 0.0), strata=None):
    """Farthest centroid coordinate along ``direction`` with ``S_w >= threshold``.

    With ``strata`` (per-cell labels, e.g. permeability) a dict keyed by
    label is returned. Groups with no cell above the threshold report 0.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    d = np.asarray(direction, dtype=float)
    coord = np.asarray(centroids, dtype=float) @ (d / np.linalg.norm(d))
    above = np.asarray(s_w, dtype=float) >= threshold

    def probe(mask):
        sel = above & mask
        return float(coord[sel].max()) if np.any(sel) else 0.0

    if strata is None:
        return probe(np.ones_like(above))
    labels = np.asarray(strata)
    return {float(k): probe(labels == k) for k in np.unique(labels)}


def boundary_volumes(problem, edge_flux, cell_source, dt: float):
    """``(inflow, outflow)`` volumes (m^2 in 2D) of one phase over a step.

    Boundary edge fluxes are oriented outward; sources count as inflow when
    positive and as outflow when negative.
    """
    mesh = problem.mesh
    bnd = mesh.boundary_edges
    q = np.asarray(edge_flux)[bnd] * mesh.geom.edge_length[bnd]
    src = np.asarray(cell_source)
    inflow = -q[q < 0].sum() + src[src > 0].sum()
    outflow = q[q > 0].sum() - src[src < 0].sum()
    return dt * float(inflow), dt * float(outflow)


def conservation_residual(problem, record, phase: str, s_new_phase=None) -> np.ndarray:
    """Per-cell ``phi|K| dS/dt + sum sigma|F| flux - int F`` for one phase.

    ``s_new_phase`` defaults to the stored saturation of that phase; the
    non-wetting value is taken as ``1 - S_w``.
    """
    B = problem.B
    if phase == "w":
        old, new = record.s_old, record.s_raw if s_new_phase is None else s_new_phase
        flux, src = record.edge_flux_w, record.cell_source_w
    elif phase == "n":
        old = 1.0 - record.s_old
        new = 1.0 - record.s_raw if s_new_phase is None else s_new_phase
        flux, src = record.edge_flux_n, record.cell_source_n
    else:
        raise ValueError("phase must be 'w' or 'n'")
    return problem.pore_volume * (new - old) / record.dt + B.T @ flux - src


@dataclass
class LedgerRow:
    step: int
    t: float
    s_io_w: float
    s_nd_w: float
    s_o_n: float
    s_rd_n: float
    eta: float
    cfl: float
    min_s: float
    max_s: float
    violations: int
    clamped: int


@dataclass
class MassLedger:
    """Per-step global balance of both phases plus the running bounds metric."""

    problem: object
    rows: list = field(default_factory=list)
    injected_w: float = 0.0
    injected_n: float = 0.0
    produced_w: float = 0.0
    produced_n: float = 0.0
    mean_w0: Optional[float] = None
    violations: int = 0
    reports: list = field(default_factory=list)

    def __post_init__(self):
        self.eta_acc = EtaAccumulator()
        self.pv = self.problem.pore_volume
        self.total_pv = float(self.pv.sum())

    def mean(self, s) -> float:
        return float(self.pv @ s) / self.total_pv

    def update(self, state, record) -> LedgerRow:
        return ledger_update(self, state, record)

    @property
    def eta(self) -> float:
        return self.eta_acc.value if self.eta_acc.steps else 0.0

    def defects(self):
        return np.array([[r.s_io_w - r.s_nd_w, r.s_o_n - r.s_rd_n] for r in self.rows]).reshape(-1, 2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.step, f"{r.t / DAY:.15g}"] + [f"{v:.15g}" for v in (
                    r.s_io_w, r.s_nd_w, r.s_o_n, r.s_rd_n, r.eta, r.cfl, r.min_s, r.max_s)])


def ledger_update(ledger: MassLedger, state, record) -> LedgerRow:
    """Append one step: cumulative in/out volumes and the four mean saturations."""
    problem = ledger.problem
    if ledger.mean_w0 is None:
        ledger.mean_w0 = ledger.mean(record.s_old)
    in_w, out_w = boundary_volumes(problem, record.edge_flux_w, record.cell_source_w, record.dt)
    in_n, out_n = boundary_volumes(problem, record.edge_flux_n, record.cell_source_n, record.dt)
    ledger.injected_w += in_w
    ledger.produced_w += out_w
    ledger.injected_n += in_n
    ledger.produced_n += out_n

    pv = ledger.total_pv
    s_new = state.s_w
    ledger.eta_acc.add(record.s_raw, problem.mesh.geom.cell_area, record.dt)
    bad = int(np.count_nonzero(~in_bounds(record.s_raw)))
    ledger.violations += bad
    ledger.reports.extend(record.reports)
    row = LedgerRow(
        step=state.step,
        t=state.t,
        s_io_w=ledger.mean_w0 + ledger.injected_w / pv,
        s_nd_w=ledger.mean(s_new) + ledger.produced_w / pv,
        s_o_n=(1.0 - ledger.mean_w0) + ledger.injected_n / pv,
        s_rd_n=ledger.mean(1.0 - s_new) + ledger.produced_n / pv,
        eta=ledger.eta_acc.value,
        cfl=cfl_number(state.u_t, record.dt, problem.mesh.geom.h),
        min_s=float(record.s_raw.min()),
        max_s=float(record.s_raw.max()),
        violations=bad,
        clamped=record.clamped,
    )
    ledger.rows.append(row)
    return row
