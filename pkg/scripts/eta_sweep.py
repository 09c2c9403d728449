"""Bounds-violation metric versus fixed time step for several schemes.

    python3 scripts/eta_sweep.py scenarios/ex3_desk.yaml --dts 0.025,0.05,0.1,0.2 --t-end 2

Writes ``eta_sweep.csv`` (one row per scheme and step) and
``feasible_dt.csv`` (largest step with eta = 0 per scheme) into ``--out``.
"""

import argparse
import csv
from pathlib import Path

from pimpes.cli import COMPARE_HEADER, compare
from pimpes.diagnostics import DAY
from pimpes.scenario import load_scenario


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--dts", default="0.025,0.05,0.1,0.2", help="time steps in days")
    ap.add_argument("--t-end", type=float, default=2.0, help="simulated days per run")
    ap.add_argument("--schemes", default="pimpes,hfimpes,stdimpes")
    ap.add_argument("--out", default="out/eta_sweep")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dts = [float(x) * DAY for x in args.dts.split(",")]
    schemes = args.schemes.split(",")
    rows, feasible = compare(load_scenario(args.config), schemes, out, dts, args.t_end * DAY)

    with open(out / "eta_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARE_HEADER)
        w.writerows(rows)
    with open(out / "feasible_dt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("scheme", "largest_feasible_dt_days"))
        w.writerows((k, f"{v / DAY:.15g}") for k, v in feasible.items())

    print(f"{'scheme':>9} {'dt [day]':>9} {'eta':>12} {'violations':>10} {'min S':>10} {'max S':>10}")
    for r in rows:
        print(f"{r[0]:>9} {r[1]:>9} {r[4]:>12.12} {r[5]!s:>10} {r[6]:>10.8} {r[7]:>10.8}")
    for k, v in feasible.items():
        print(f"largest bounds-preserving dt for {k}: {v / DAY:g} day")


if __name__ == "__main__":
    main()
