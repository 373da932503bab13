"""Run every scenario in ``demos/scenarios`` through the command line entry point.

Outputs land in ``demos/out/<name>``; the summary table of each run is echoed.
"""

import csv
import sys
from pathlib import Path

from hjnet.cli import main

here = Path(__file__).parent
status = 0
for sc in sorted((here / "scenarios").glob("*.json")):
    if sc.name == "star3.json":  # a network file, referenced by star_hopf_lax.json
        continue
    out = here / "out" / sc.stem
    code = main(["--scenario", str(sc), "--out", str(out), "--quiet"])
    status = max(status, code)
    print(f"== {sc.stem} (exit {code})")
    with open(out / "summary.csv") as fh:
        for row in csv.DictReader(fh):
            print(f"   {row['check']:<32} {row['value']:>24}  {'ok' if row['pass'] == '1' else 'FAILED'}")
sys.exit(status)
