"""Independent closed-form and symbolic oracles used by the tests.

The curvature oracle works from scratch: it pulls the Euclidean metric back
through the embedding of S^3 in C^2 (and of the base sphere in R^3) with
sympy and contracts the Riemann tensor in the textbook convention

    R^r_{s m n} = d_m Gam^r_{n s} - d_n Gam^r_{m s} + Gam^r_{m l} Gam^l_{n s} - Gam^r_{n l} Gam^l_{m s},

in which round spheres have positive scalar curvature.  The library uses
the opposite sign, so ``R_lib = -R_oracle`` for the two Riemannian scalars
while the curvature square of the connection is sign-free.
"""
from functools import lru_cache

import numpy as np
import sympy as sp

u, v, phi, r = sp.symbols("u v phi r", real=True)


def _pullback(X, coords):
    Jm = sp.Matrix(X).jacobian(coords)
    return sp.simplify(Jm.T * Jm)


def _scalar_curvature(g, coords):
    n = len(coords)
    gi = sp.simplify(g.inv())
    Gam = [[[sum(gi[a, d] * (sp.diff(g[d, b], coords[c]) + sp.diff(g[d, c], coords[b])
                             - sp.diff(g[b, c], coords[d])) for d in range(n)) / 2
             for c in range(n)] for b in range(n)] for a in range(n)]
    Gam = [[[sp.simplify(Gam[a][b][c]) for c in range(n)] for b in range(n)] for a in range(n)]

    def riem(rr, s, m, nn):
        out = sp.diff(Gam[rr][nn][s], coords[m]) - sp.diff(Gam[rr][m][s], coords[nn])
        for l in range(n):
            out += Gam[rr][m][l] * Gam[l][nn][s] - Gam[rr][nn][l] * Gam[l][m][s]
        return out

    ric = sp.Matrix(n, n, lambda s, nn: sum(riem(k, s, k, nn) for k in range(n)))
    return sp.simplify(sum(gi[s, nn] * ric[s, nn] for s in range(n) for nn in range(n)))


@lru_cache(maxsize=None)
def hopf_oracle():
    """Callables (u, v, r) -> R(S^3), R(base), F^2 in the textbook convention."""
    rho2 = u**2 + v**2
    s = r / sp.sqrt(1 + rho2)
    # z1 = s e^{i phi}, z2 = s e^{i phi} (u + i v)
    x1, y1 = s * sp.cos(phi), s * sp.sin(phi)
    x2 = s * (u * sp.cos(phi) - v * sp.sin(phi))
    y2 = s * (u * sp.sin(phi) + v * sp.cos(phi))
    G = _pullback([x1, y1, x2, y2], [u, v, phi])
    R_P = _scalar_curvature(G, [u, v, phi])
    # base: sphere of radius r/2 through inverse stereographic projection
    X = [r * u / (1 + rho2), r * v / (1 + rho2), r / 2 * (1 - rho2) / (1 + rho2)]
    h = _pullback(X, [u, v])
    HR = _scalar_curvature(h, [u, v])
    # connection one-form and curvature of the fibration, read off the S^3 metric
    gam = sp.simplify(G[2, 2])
    A = [sp.simplify(G[0, 2] / gam), sp.simplify(G[1, 2] / gam)]
    F12 = sp.simplify(sp.diff(A[1], u) - sp.diff(A[0], v))
    hi = sp.simplify(h.inv())
    F2 = sp.simplify(gam * 2 * F12**2 * (hi[0, 0] * hi[1, 1] - hi[0, 1] * hi[1, 0]))
    f = lambda e: sp.lambdify((u, v, r), e, "numpy")
    return f(R_P), f(HR), f(F2)


def heat_smoothed_gaussian(x, center, s2, diff_t):
    """Gaussian bump exp(-|x-c|^2/(2 s2)) in 2-d after the heat flow exp(diff_t/2 Laplacian)."""
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - np.asarray(center)) ** 2, axis=-1)
    return s2 / (s2 + diff_t) * np.exp(-d2 / (2 * (s2 + diff_t)))


def casimir_su2(spin):
    """Brute-force sum_a J_a J_a for the spin-j representation built from ladder operators."""
    m = np.arange(spin, -spin - 1, -1)
    d = len(m)
    jp = np.zeros((d, d))
    for k in range(1, d):
        jp[k - 1, k] = np.sqrt(spin * (spin + 1) - m[k] * (m[k] + 1))
    jx = (jp + jp.T) / 2
    jy = (jp - jp.T) / 2j
    jz = np.diag(m)
    return jx @ jx + jy @ jy + jz @ jz
