"""Cohomologous time-changes of a torus flow are conjugate.

Runs the shipped conjugacy manifest and prints the largest defect of the
transfer-function conjugacy and of the perturbed control.

    python3 demos/conjugacy_torus.py [outdir]
"""
import json
import sys
import tempfile
from pathlib import Path

from nilflows.cli import main

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
if main(["run", "conjugacy-torus2", "--out", str(out)]) != 0:
    sys.exit("run failed")
for run in ("conjugacy", "conjugacy-control"):
    meta = json.loads((out / f"{run}.meta.json").read_text())
    print(f"{run:18s} max defect over tau in [0, 50]: {meta['max_defect']:.3e}")
