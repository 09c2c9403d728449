"""Run the desk-scale scenarios and summarise conservation and bounds.

    python3 scripts/reproduce_examples.py                 # P-IMPES on all four
    python3 scripts/reproduce_examples.py --schemes pimpes,hfimpes --vtk

With ``--vtk`` each run writes its snapshots and diagnostics CSV under
``--out/<scenario>/<scheme>``; otherwise only ``summary.csv`` is written.
"""

import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from pimpes.cli import run_scenario
from pimpes.diagnostics import DAY
from pimpes.scenario import load_scenario
from pimpes.schemes import StepError

ROOT = Path(__file__).resolve().parent.parent
DESK = ["ex1_desk", "ex2_desk", "ex3_desk", "ex4_desk"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default=",".join(DESK))
    ap.add_argument("--schemes", default="pimpes")
    ap.add_argument("--vtk", action="store_true")
    ap.add_argument("--out", default="out/examples")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ("scenario", "scheme", "steps", "t_days", "eta", "violations", "max_ledger_defect",
              "worst_solve_residual", "wall_s")
    rows = []
    for name in args.scenarios.split(","):
        base = load_scenario(ROOT / "scenarios" / f"{name}.yaml")
        for scheme in args.schemes.split(","):
            s = dataclasses.replace(base, scheme=dataclasses.replace(base.scheme, scheme=scheme))
            try:
                state, led, _, wall = run_scenario(s, out / name / scheme, write_outputs=args.vtk)
            except StepError as exc:
                print(f"{name:>9} {scheme:>8}: failed: {exc}")
                continue
            defect = float(np.abs(led.defects()).max())
            worst = max((r.worst for r in led.reports), default=0.0)
            rows.append((name, scheme, state.step, f"{state.t / DAY:.6g}", f"{led.eta:.6g}", led.violations,
                         f"{defect:.3e}", f"{worst:.3e}", f"{wall:.2f}"))
            print(f"{name:>9} {scheme:>8}: {state.step} steps to {state.t / DAY:.4g} day, eta {led.eta:.3g}, "
                  f"ledger defect {defect:.1e}, worst solve residual {worst:.1e}, {wall:.1f} s")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


if __name__ == "__main__":
    main()
