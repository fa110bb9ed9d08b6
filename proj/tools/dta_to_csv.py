#!/usr/bin/env python3
"""Convert a Stata .dta results file to CSV for simlens.

simlens reads csv/tsv/json only. Published simulation results are often
distributed as .dta; this converts one with pandas, keeping numeric columns at
full precision and value-labelled columns as their codes.

    python3 tools/dta_to_csv.py estimates.dta tests/fixtures/estimates.csv
"""

import argparse
import sys

import pandas as pd


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dta", help="input .dta file (path or URL)")
    ap.add_argument("csv", help="output .csv file, '-' for stdout")
    args = ap.parse_args()

    # Codes, not labels: the methods are referred to as 1, 2, 3.
    frame = pd.read_stata(args.dta, convert_categoricals=False)
    out = sys.stdout if args.csv == "-" else args.csv
    frame.to_csv(out, index=False)  # repr floats: shortest exact round trip
    return 0


if __name__ == "__main__":
    sys.exit(main())
