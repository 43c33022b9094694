"""
Error against DOF for the di-vacancy
====================================

Runs a short sweep (K = 3, 4, 5) and prints the table and the fitted slopes.
The full sweep is ``grac-bench run`` with a config file; this one takes a
minute or two.
"""

import tempfile

from grac.bench import ExperimentSpec, fit_slope, run_experiment

out = tempfile.mkdtemp()
spec = ExperimentSpec(problem="divacancy", methods=["ATM", "QCE", "M1-L1-S1", "M2-L1-S1"],
                      K_list=[3, 4, 5], n_ref_factor=2, output_dir=out)
rows = run_experiment(spec)

print(f"{'method':10s} {'K':>2s} {'DOF':>6s} {'H1':>10s} {'ghost':>9s}")
for r in rows:
    print(f"{r['method']:10s} {r['K']:2d} {r['DOF']:6d} {r['H1']:10.4g} {r['ghost_force_max']:9.2g}")

for m in spec.methods:
    print(m, "slope", round(fit_slope(rows, "H1", m), 3))
print("csv and plot data in", out)
