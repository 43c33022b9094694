"""
Reconstruction coefficients
===========================

Solving the consistency equations with an l1 objective gives sparse
coefficients; the minimum-norm solution spreads weight over every entry.
"""

import numpy as np

from grac.bench import ExperimentSpec, Problem
from grac.consistency import assemble_system, continuum_reconstruction_nnn, sparsity

prob = Problem(ExperimentSpec(problem="divacancy"))
space, volumes = prob.geometry(3, "M1", remove_defect=False)
system = assemble_system(space, volumes)
print("unknowns:", system.A.shape[1], " equations:", system.A.shape[0])

C1 = prob.coefficients(3, "M1", 1)
C2 = prob.coefficients(3, "M1", 2)
for label, C in (("l1", C1), ("min-norm", C2)):
    print(f"{label:9s} residual {np.abs(system.residual(C)).max():.1e}  "
          f"zeros {100 * sparsity(C):.1f}%  l1 norm {np.abs(C).sum():.2f}")

# the first interface site, nearest-neighbour rows only
np.set_printoptions(precision=3, suppress=True, linewidth=120)
print("site", space.sites[space.interface][0])
print(C1[0, :6, :6])

# the continuum template for the second-neighbour stencil
print(continuum_reconstruction_nnn(prob.st)[[0, 6, 7]])
