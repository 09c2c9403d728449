"""Acceptance checks 1-9. Each test prints one PASS/FAIL line before asserting."""

import contextlib
import csv
import dataclasses
import time

import numpy as np
import pytest

from conftest import SCENARIOS
from pimpes.cli import main
from pimpes.diagnostics import DAY, conservation_residual, front_position
from pimpes.linsolve import SaddleSystem, SolverError, solve_saddle
from pimpes.mesh import BoundaryTag, build_structured_triangulation, mesh_from_arrays, tag_boundary
from pimpes.physics import FluidPair, RockModel, total_mobility
from pimpes.scenario import build, load_scenario
from pimpes.schemes import Problem, SchemeConfig, bootstrap, initial_state, pimpes_step, run_time_loop
from oracles import operator_discrepancies

DESK = ["ex1_desk", "ex2_desk", "ex3_desk", "ex4_desk"]
SOLVE_REPORTS = []  # every linear-solve report produced by criteria 1-7


def verdict(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def serial():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(1)


def run(name, callbacks=(), **scheme):
    s = load_scenario(SCENARIOS / f"{name}.yaml")
    if scheme:
        s = dataclasses.replace(s, scheme=dataclasses.replace(s.scheme, **scheme))
    problem, state = build(s)
    state, ledger = run_time_loop(problem, state, s.scheme, list(callbacks))
    SOLVE_REPORTS.extend(ledger.reports)
    return problem, state, ledger


@pytest.fixture(scope="module")
def ex1():
    """Two-stratum drainage, CFL 0.3, 100 steps, with per-step residuals for both phases."""
    worst = {"w": 0.0, "n": 0.0}
    holder = {}

    def residuals(state, rec):
        pr = holder["problem"]
        for phase, old, new in (("w", rec.s_old, rec.s_raw), ("n", 1 - rec.s_old, 1 - rec.s_raw)):
            r = conservation_residual(pr, rec, phase)
            ref = pr.pore_volume / rec.dt * max(old.max(), new.max())
            worst[phase] = max(worst[phase], float(np.max(np.abs(r) / ref)))

    s = load_scenario(SCENARIOS / "ex1_desk.yaml")
    problem, state = build(s)
    holder["problem"] = problem
    with serial():
        t0 = time.perf_counter()
        state, ledger = run_time_loop(problem, state, s.scheme, [residuals])
        wall = time.perf_counter() - t0
    SOLVE_REPORTS.extend(ledger.reports)
    return {"problem": problem, "state": state, "ledger": ledger, "wall": wall, "worst": worst,
            "scheme": s.scheme}


def test_c1_local_conservation(ex1, capsys):
    w, n = ex1["worst"]["w"], ex1["worst"]["n"]
    steps = ex1["state"].step
    ok = steps == 100 and ex1["scheme"].cfl == 0.3 and max(w, n) <= 1e-9 and ex1["wall"] <= 60.0
    verdict(capsys, 1, ok, f"{steps} steps, worst residual w {w:.2e}, n {n:.2e} (<= 1e-9), "
                           f"serial runtime {ex1['wall']:.1f} s (<= 60)")


def test_c2_ledger_overlap(ex1, capsys):
    d = np.abs(ex1["ledger"].defects())
    ok = len(d) == 100 and d.max() <= 1e-8
    verdict(capsys, 2, ok, f"max |S_IO_w - S_ND_w| {d[:, 0].max():.2e}, "
                           f"max |S_O_n - S_RD_n| {d[:, 1].max():.2e} (<= 1e-8)")


def test_c3_bounds_on_desk_scenarios(ex1, capsys):
    results = {"ex1_desk": ex1["ledger"]}
    for name in DESK[1:]:
        results[name] = run(name)[2]
    cfls = {n: load_scenario(SCENARIOS / f"{n}.yaml").scheme.cfl for n in DESK}
    ok = all(led.eta == 0.0 and led.violations == 0 for led in results.values()) and \
        all(c is not None and c <= 0.3 for c in cfls.values())
    detail = ", ".join(f"{n} eta={led.eta:g} cfl={cfls[n]}" for n, led in results.items())
    verdict(capsys, 3, ok, detail)


def test_c4_scheme_contrast(tmp_path, capsys):
    out = tmp_path / "cmp"
    code = main(["compare", str(SCENARIOS / "ex3_desk.yaml"), "--dt-sweep", "0.025,0.05,0.1,0.2",
                 "--t-end", "2", "--out", str(out), "--no-outputs"])
    with open(out / "compare.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "feasible_dt.csv") as fh:
        feasible = {r["scheme"]: float(r["largest_feasible_dt_days"]) for r in csv.DictReader(fh)}
    by_dt = {}
    for r in rows:
        by_dt.setdefault(r["dt_days"], {})[r["scheme"]] = float(r["eta"])
    shared = [dt for dt, e in by_dt.items() if e.get("pimpes") == 0.0 and e.get("hfimpes", 0.0) > 0.0]
    ok = code == 0 and bool(shared) and feasible["pimpes"] > feasible["hfimpes"]
    verdict(capsys, 4, ok, f"dt with HF eta > 0 and P-IMPES eta = 0: {shared} day; largest feasible dt "
                           f"P-IMPES {feasible['pimpes']:g} day vs HF-IMPES {feasible['hfimpes']:g} day")


def test_c5_phase_relabelling(capsys):
    s = load_scenario(SCENARIOS / "ex3_desk.yaml")
    problem, state = build(s)
    cfg = s.scheme
    hist, direct = [], []

    def keep(st, rec):
        hist.append(st.s_w.copy())
        direct.append(float(np.abs(rec.s_w_direct - (1 - rec.s_n_direct)).max()))

    _, led = run_time_loop(problem, state, cfg, [keep])
    swapped = problem.swapped()
    hist2 = []
    _, led2 = run_time_loop(swapped, initial_state(swapped, 1 - state.s_w), cfg,
                            [lambda st, rec: hist2.append(st.s_w.copy())])
    SOLVE_REPORTS.extend(led.reports + led2.reports)
    err = max(float(np.abs(a - (1 - b)).max()) for a, b in zip(hist, hist2))
    ok = len(hist) == len(hist2) == cfg.steps and err <= 1e-9 and max(direct) <= 1e-10
    verdict(capsys, 5, ok, f"{len(hist)} steps, relabelled max error {err:.2e} (<= 1e-9), "
                           f"direct-update gap {max(direct):.2e} (<= 1e-10)")


def test_c6_operator_oracles(small_meshes, rng, capsys):
    gaps = {}
    for mesh in small_meshes:
        for k, v in operator_discrepancies(mesh, rng).items():
            gaps[k] = max(gaps.get(k, 0.0), v)
    ok = all(mesh.n_cells <= 4 for mesh in small_meshes) and max(gaps.values()) <= 1e-12
    verdict(capsys, 6, ok, ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()) + " (<= 1e-12)")


def test_c7_capillary_contrast_slows_front(capsys):
    s = load_scenario(SCENARIOS / "ex1_desk.yaml")
    t_end = 10 * DAY
    fronts, injected = {}, {}
    for label, b_c in (("B_c=60", s.rock.b_c), ("B_c=0", 0.0)):
        sc = dataclasses.replace(s, rock=dataclasses.replace(s.rock, b_c=b_c),
                                 scheme=dataclasses.replace(s.scheme, steps=100000, t_end=t_end))
        problem, state = build(sc)
        state, led = run_time_loop(problem, state, sc.scheme)
        SOLVE_REPORTS.extend(led.reports)
        strata = front_position(problem.mesh.geom.centroid, state.s_w, 0.5, (1.0, 0.0), problem.rock.perm)
        fronts[label] = strata[max(strata)]
        injected[label] = led.injected_w
    same_volume = np.isclose(injected["B_c=60"], injected["B_c=0"], rtol=1e-12)
    ok = same_volume and fronts["B_c=60"] < fronts["B_c=0"]
    verdict(capsys, 7, ok, f"high-K front at {t_end / DAY:g} day: {fronts['B_c=60']:.1f} m with B_c=60, "
                           f"{fronts['B_c=0']:.1f} m with B_c=0; injected {injected['B_c=60']:.4g} m^2 each")


def test_c8_solver_contracts(capsys):
    # the all-Neumann desk scenario is solved under the pin-cell gauge
    problem, state, led = run("ex3_desk", steps=20)
    SOLVE_REPORTS.extend(led.reports)
    assert not problem.mesh.boundary.has_dirichlet
    defects = [r.compatibility_defect for r in led.reports if r.kind == "saddle"]
    # without the gauge the same kind of system is refused
    m = build_structured_triangulation(1, 1, 1.0, 1.0)
    A = np.eye(m.n_edges)
    from pimpes.rt0 import assemble_divergence
    B = assemble_divergence(m)
    bnd = m.boundary_edges
    try:
        solve_saddle(SaddleSystem(A, B, B.T, np.zeros(m.n_edges), np.zeros(m.n_cells), fixed=bnd,
                                  fixed_values=np.zeros(len(bnd))))
        refused = False
    except SolverError:
        refused = True
    worst = max(r.worst for r in SOLVE_REPORTS)
    ok = len(SOLVE_REPORTS) > 0 and worst <= 1e-10 and defects and max(defects) <= 1e-10 and refused
    verdict(capsys, 8, ok, f"{len(SOLVE_REPORTS)} solves, worst relative residual {worst:.2e} (<= 1e-10); "
                           f"all-Neumann compatibility defect {max(defects):.2e} (<= 1e-10), "
                           f"ungauged solve refused: {refused}")


def test_c9_patch(capsys):
    nx, ny, lx, ly = 6, 3, 60.0, 30.0
    base = build_structured_triangulation(nx, ny, lx, ly)
    v = base.vertices.copy()
    inner = (v[:, 0] > 0) & (v[:, 0] < lx) & (v[:, 1] > 0) & (v[:, 1] < ly)
    v[inner] += np.random.default_rng(7).uniform(-3.0, 3.0, (inner.sum(), 2))
    drop = 2.0e5
    mesh = tag_boundary(mesh_from_arrays(v, base.cells), [
        (lambda p: np.isclose(p[:, 0], 0.0), BoundaryTag("dirichlet", p_w=drop, s_w=0.5)),
        (lambda p: np.isclose(p[:, 0], lx), BoundaryTag("dirichlet", p_w=0.0)),
        (lambda p: ~np.isclose(p[:, 0], 0.0) & ~np.isclose(p[:, 0], lx), BoundaryTag("neumann")),
    ])
    fluids = FluidPair(1000.0, 800.0, 1e-3, 1e-3, g=0.0)
    problem = Problem(mesh, fluids, RockModel(perm=1e-12, b_c=0.0))
    state = bootstrap(problem, initial_state(problem, 0.5))
    new, rec = pimpes_step(problem, state, DAY, SchemeConfig(dt=DAY))
    SOLVE_REPORTS.extend(rec.reports)
    exact = 1e-12 * float(total_mobility(0.5, fluids, problem.rock)) * drop / lx
    gap_u = float(np.abs(new.u_t - exact * mesh.geom.normal[:, 0]).max()) / exact
    div = problem.B.T @ new.u_t
    gap_div = float(np.abs(div).max()) / (exact * mesh.geom.edge_length.max())
    ok = gap_u <= 1e-10 and gap_div <= 1e-12
    verdict(capsys, 9, ok, f"jittered {mesh.n_cells}-cell mesh: u_t uniform to {gap_u:.1e} (<= 1e-10), "
                           f"cell divergence {gap_div:.1e} (<= 1e-12)")
