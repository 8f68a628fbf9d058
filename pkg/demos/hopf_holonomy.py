"""Holonomy weights on the Hopf bundle S^3 -> S^2.

A charged particle on S^3 reduced to the base sphere picks up a U(1)
phase from the connection along every base path.  Averaging the phase
weighted end value of the test function z1 over reduced paths gives back
the exact decay exp(-3 t / 2) of the degree-one harmonic on S^3.  Here the
orbit length is constant and J~ vanishes, so F2 and F3 agree path by path.

    python demos/hopf_holonomy.py
"""
import jax.numpy as jnp
import numpy as np

from bundlediff import greens, group, models, sde

model = models.Hopf()
irrep = group.U1().irrep(1)
q0 = (0.3, -0.4, 0.0)
z0 = complex(np.asarray(model.embed(0, jnp.asarray(q0)))[0])
section = greens.section_from_equivariant(model, lambda z: z[:, :1], 1)

print(f"z1 at the start point: {z0:.4f}")
for t in (0.25, 0.5, 1.0):
    cfg = sde.SimConfig(n_paths=8192, n_steps=int(200 * t), t_b=t, seed=1, q_start=q0)
    for kernel in ("F2", "F3"):
        est = greens.semigroup_apply_mc(model, irrep, kernel, section, cfg)
        print(f"t={t:4.2f} {kernel}: {complex(est.value[0]):.4f} +- {float(est.stderr[0]):.4f}"
              f"   exact {np.exp(-1.5 * t) * z0:.4f}")
