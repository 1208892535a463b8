"""Print the lambda sweep summary next to the unguided and CFG baselines.

Reads ``<out>/lambda_sweep_summary.csv`` written by ``pladis sweep-lambda``
or ``scripts/run_all.py``.
"""
import sys
from pathlib import Path

from pladis.harness.report import read_csv


def main(out="runs"):
    rows = read_csv(Path(out) / "lambda_sweep_summary.csv")
    print(f"{'lambda':>9} {'active':>6} {'accuracy':>9} {'centroid':>9} {'energy':>9}")
    for r in rows:
        print(f"{r['lam']:>9} {r['pladis_active']:>6} {float(r['accuracy']):9.3f} "
              f"{float(r['centroid_error']):9.3f} {float(r['energy_distance']):9.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
