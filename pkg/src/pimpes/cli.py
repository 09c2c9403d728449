"""Command line: ``pimpes run|validate|compare <scenario.yaml>``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .diagnostics import DAY
from .io import write_checkpoint, write_vtk
from .linsolve import SolverError
from .mesh import BoundaryConfigError, MeshError
from .scenario import ScenarioError, Scenario, build, dump_scenario, load_scenario
from .schemes import SCHEMES, StepError, run_time_loop
from .units import UnitError

log = logging.getLogger("pimpes")

CONFIG_ERRORS = (ScenarioError, UnitError, BoundaryConfigError, MeshError)
RUNTIME_ERRORS = (StepError, SolverError, ValueError, ArithmeticError, OSError)
COMPARE_HEADER = ("scheme", "dt_days", "steps", "t_days", "eta", "violations", "min_s", "max_s",
                  "ledger_defect_w", "ledger_defect_n", "wall_time_s")


def _serial():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return contextlib.nullcontext()
    return threadpool_limits(1)


def _with_scheme(s: Scenario, **changes) -> Scenario:
    return dataclasses.replace(s, scheme=dataclasses.replace(s.scheme, **changes))


def run_scenario(s: Scenario, out: Path, write_outputs: bool = True):
    """Run one scenario; returns ``(state, ledger, problem, wall_time)``.

    On a step failure the state is dumped to ``FAILED_state.txt``, the
    partial CSV is still written and an ``INCOMPLETE`` marker is left.
    """
    problem, state = build(s)
    callbacks = []
    if write_outputs:
        out.mkdir(parents=True, exist_ok=True)
        (out / "INCOMPLETE").unlink(missing_ok=True)
        perm = problem.rock.perm / 9.869233e-16

        def snapshots(st, rec):
            if s.output.vtk_every and st.step % s.output.vtk_every == 0:
                write_vtk(st, problem.mesh, out / f"{s.name}_{st.step:06d}.vtk", perm)
            if s.output.checkpoint_every and st.step % s.output.checkpoint_every == 0:
                write_checkpoint(st, out / f"{s.name}_{st.step:06d}.state")

        callbacks.append(snapshots)
        if s.output.vtk_every:
            write_vtk(state, problem.mesh, out / f"{s.name}_{0:06d}.vtk", perm)

    from .diagnostics import MassLedger

    ledger = MassLedger(problem)
    t0 = time.perf_counter()
    try:
        state, ledger = run_time_loop(problem, state, s.scheme, callbacks, ledger=ledger)
    except StepError as exc:
        if write_outputs:
            ledger.write_csv(out / s.output.csv)
            if exc.state is not None:
                write_checkpoint(exc.state, out / "FAILED_state.txt")
            (out / "INCOMPLETE").write_text(f"{exc}\n")
        raise
    wall = time.perf_counter() - t0
    if write_outputs:
        ledger.write_csv(out / s.output.csv)
        write_checkpoint(state, out / f"{s.name}_final.state")
    return state, ledger, problem, wall


def _cmd_validate(args) -> int:
    s = load_scenario(args.config)
    build(s)  # mesh, boundary coverage and rasters are checked too
    sys.stdout.write(dump_scenario(s))
    return 0


def _cmd_run(args) -> int:
    s = load_scenario(args.config)
    if args.steps is not None:
        s = _with_scheme(s, steps=args.steps)
    out = Path(args.out) if args.out else Path(s.output.directory)
    state, ledger, _, wall = run_scenario(s, out)
    print(f"{s.name}: {state.step} steps to t = {state.t / DAY:.6g} day in {wall:.2f} s; "
          f"eta = {ledger.eta:.6g}, violations = {ledger.violations}; outputs in {out}")
    return 0


def _compare_row(name, dt, state, ledger, wall):
    d = np.abs(ledger.defects()) if ledger.rows else np.zeros((1, 2))
    return [name, f"{dt / DAY:.15g}" if dt else "adaptive", state.step, f"{state.t / DAY:.15g}",
            f"{ledger.eta:.15g}", ledger.violations,
            f"{min((r.min_s for r in ledger.rows), default=np.nan):.15g}",
            f"{max((r.max_s for r in ledger.rows), default=np.nan):.15g}",
            f"{d[:, 0].max():.6e}", f"{d[:, 1].max():.6e}", f"{wall:.3f}"]


def compare(s: Scenario, schemes, out: Path, dts=(None,), t_end=None, policy="record", write_outputs=False):
    """Run each scheme for each time step; returns CSV rows and the largest
    bounds-preserving step per scheme (0 when none is)."""
    rows, feasible = [], {name: 0.0 for name in schemes}
    for dt in dts:
        for name in schemes:
            changes = {"scheme": name, "bounds_policy": policy if name != "pimpes" else "record"}
            if dt is not None:
                changes.update(dt=dt, cfl=None)
                if t_end is not None:
                    changes.update(steps=int(np.ceil(t_end / dt - 1e-9)), t_end=t_end)
            sc = _with_scheme(s, **changes)
            tag = name if dt is None else f"{name}_dt{dt / DAY:g}"
            try:
                state, ledger, _, wall = run_scenario(sc, out / tag, write_outputs=write_outputs)
            except StepError as exc:
                log.warning("%s failed: %s", tag, exc)
                rows.append([name, f"{dt / DAY:.15g}" if dt else "adaptive", "", "", "nan", "", "", "", "",
                             "", ""])
                continue
            rows.append(_compare_row(name, dt, state, ledger, wall))
            if dt is not None and ledger.violations == 0 and ledger.eta == 0.0:
                feasible[name] = max(feasible[name], dt)
    return rows, feasible


def _cmd_compare(args) -> int:
    s = load_scenario(args.config)
    schemes = [x.strip().lower().replace("-", "") for x in args.schemes.split(",") if x.strip()]
    bad = [x for x in schemes if x not in SCHEMES]
    if bad:
        raise ScenarioError(f"--schemes: unknown scheme {bad[0]!r}; choose from {SCHEMES}")
    if args.steps is not None:
        s = _with_scheme(s, steps=args.steps)
    if args.dt_sweep:
        dts = [float(x) * DAY for x in args.dt_sweep.split(",")]
    elif args.dt is not None:
        dts = [args.dt * DAY]
    else:
        dts = [None]
    t_end = args.t_end * DAY if args.t_end is not None else None
    out = Path(args.out) if args.out else Path(s.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    rows, feasible = compare(s, schemes, out, dts, t_end, args.policy, write_outputs=not args.no_outputs)
    path = out / "compare.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_HEADER)
        w.writerows(rows)
    if any(dt is not None for dt in dts):
        with open(out / "feasible_dt.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("scheme", "largest_feasible_dt_days"))
            w.writerows([(k, f"{v / DAY:.15g}") for k, v in feasible.items()])
    for r in rows:
        print(f"{r[0]:>9} dt={r[1]}: eta = {r[4]}, violations = {r[5]}")
    print(f"comparison written to {path}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pimpes", description=__doc__.splitlines()[0])
    p.add_argument("--serial", action="store_true", help="limit native thread pools to one thread")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and print the normalized scenario")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("run", help="run a scenario and write VTK snapshots and the diagnostics CSV")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: from the scenario)")
    r.add_argument("--steps", type=int, help="override the step count")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="run several schemes on one scenario")
    c.add_argument("config")
    c.add_argument("--schemes", default="pimpes,hfimpes")
    c.add_argument("--dt", type=float, help="shared fixed time step in days")
    c.add_argument("--dt-sweep", help="comma-separated fixed time steps in days")
    c.add_argument("--t-end", type=float, help="end time in days for every sweep run")
    c.add_argument("--steps", type=int)
    c.add_argument("--policy", choices=("record", "clamp"), default="record",
                   help="bounds policy for the reference schemes")
    c.add_argument("--out")
    c.add_argument("--no-outputs", action="store_true", help="write only compare.csv")
    c.set_defaults(func=_cmd_compare)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx = _serial() if args.serial else contextlib.nullcontext()
    try:
        with ctx:
            return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
