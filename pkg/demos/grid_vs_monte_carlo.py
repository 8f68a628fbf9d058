"""Reduced semigroup two ways: Crank-Nicolson on two stereographic charts
and Monte Carlo over reduced paths.

The grid evolves the dual section with H_kappa; conjugating back gives the
semigroup acting on the original section, which the path integral
estimates at a handful of start points.

    python demos/grid_vs_monte_carlo.py
"""
import numpy as np

from bundlediff import harness

for lam in (0, 1):
    v = harness.mc_pde_crosscheck(lam, n_paths=8 * 4096, n_points=8, h=0.04, dt_pde=0.01)
    print(f"lambda={lam}: L2 relative discrepancy {v.metrics['l2_relative']:.4f} "
          f"(Monte Carlo noise {v.metrics['mc_noise']:.4f})")
    for m, p in zip(v.metrics["mc"][:3], v.metrics["pde"][:3]):
        print(f"   mc {complex(m):.4f}   grid {complex(p):.4f}")
