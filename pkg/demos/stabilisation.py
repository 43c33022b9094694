"""
Stabilisation of the interface
==============================

Adding kappa * |second differences|^2 to the interface sites changes the
Hessian but never the forces of a homogeneous deformation.
"""

import numpy as np

from grac.bench import ExperimentSpec, MethodId, Problem
from grac.energy import ghost_force, hess_ac
from grac.geometry import affine_state
from grac.solve import min_eigenvalue, minimize

prob = Problem(ExperimentSpec(problem="microcrack11"))
mid = MethodId.parse("M1-L1-S1")

fn0 = prob.functional(3, mid, remove_defect=False)
for kappa in (0.0, 1.0, 4.0):
    _, field = ghost_force(prob.F0, fn0.with_kappa(kappa))
    print(f"kappa={kappa}: max ghost force {np.abs(field).max():.1e}")

# smallest Hessian eigenvalue at the relaxed micro-crack
fn = prob.functional(3, mid)
for kappa in (0.0, 1.0):
    f = fn.with_kappa(kappa)
    y, info = minimize(f, affine_state(f.space, prob.B))
    print(f"kappa={kappa}: {info.iterations} Newton steps, "
          f"min eigenvalue {min_eigenvalue(hess_ac(y, f)):.4f}")
