"""The integral relation between total-space and reduced diffusions.

Take any function phi0 on the total space.  Projecting it onto the charge
lambda sector with a Haar quadrature gives an equivariant section Phi.
Diffusing Phi on the total space, or transporting it with the reduced
matrix kernel (and the (gamma_b/gamma_a)^{1/4} Jacobian), must give the
same number.  Both sides share the Wiener increments, so their
difference is much less noisy than either side.

    python demos/reduction_identity.py [flat|hopf|warped]
"""
import sys

import numpy as np

from bundlediff import greens, harness, models, sde

name = sys.argv[1] if len(sys.argv) > 1 else "hopf"
model = models.make_model(name)
phi0 = harness.default_base_function(model)
cfg = sde.SimConfig(n_paths=16384, n_steps=100, t_b=0.5, seed=3, q_start=(0.3, -0.2, 0.0))

for lam in (-1, 0, 1):
    r = greens.reduction_residual(model, model.group.irrep(lam), phi0, cfg, quad_order=16)
    lhs, rhs = complex(r["lhs"].value[0, 0]), complex(r["rhs"].value[0, 0])
    print(f"lambda={lam:+d}  reduced {lhs:.5f}  total {rhs:.5f}  "
          f"|diff|/sigma = {r['max_ratio']:.2f}")
