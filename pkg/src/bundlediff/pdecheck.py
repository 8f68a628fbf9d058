"""Matrix differential generators, grid evolution and the operator identity.

Every generator is stored in coefficient form acting on a section
``psi: Sigma -> C^d``:

    (L psi) = a^{AB} d_A d_B psi + b^A d_A psi + bJ^A d_A psi + C psi

with a real scalar principal part ``a``, real scalar first-order part ``b``,
matrix-valued first-order part ``bJ`` (built from the generators) and a
matrix zero-order part ``C``.  All coefficients are read from the geometry
tensors; two different displays of the same operator are assembled along
independent code paths and compared by :func:`operator_identity_residual`.

Labels:

* ``op2``: generator of the kernel before the Girsanov step (both mean curvature drifts);
* ``operator_2``: after the Girsanov step (``j_I`` only, ``-Jtilde/4`` and the
  ``Lambda gamma nabla_K K`` term);
* ``operator_3_plus_casimir``: ``D/2 [horizontal Laplacian + gamma^{mn} J_m J_n]
  + V/(D m) - D/8 Jtilde``;
* ``H_kappa``: the same on the associated vector bundle (generators ``-J^T``);
* ``total_space``: the scalar generator of the original diffusion.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry
from .errors import ConfigError, Instability, StencilOutOfDomain

LABELS = ("op2", "operator_2", "operator_3_plus_casimir", "H_kappa", "total_space")


@dataclass(frozen=True)
class Coefficients:
    a: np.ndarray       # (..., N, N) real
    b: np.ndarray       # (..., N) real
    bJ: np.ndarray      # (..., N, d, d) complex
    C: np.ndarray       # (..., d, d) complex


def _JJ(M, J):
    return jnp.einsum("...ab,aij,bjk->...ik", M, J, J)


def _lin(v, J):
    return jnp.einsum("...a,aij->...ij", v, J)


def assemble(label, geom, J, diff=1.0, V=0.0, mass=1.0):
    """Coefficients of a labelled generator from (possibly batched) geometry tensors."""
    if label not in LABELS:
        raise ConfigError(f"unknown operator label {label!r}")
    J = jnp.asarray(J, dtype=complex)
    d = J.shape[-1]
    eye = jnp.eye(d, dtype=complex)
    V = jnp.asarray(V, dtype=float)
    s = 0.5 * diff
    h, GH_, N = geom["h"], geom["christoffel_H"], geom["N"]
    if label == "total_space":
        a = s * geom["Ginv"]
        b = diff * geom["drift_orig"]
        n = a.shape[-1]
        bJ = jnp.zeros(a.shape[:-2] + (n, d, d), dtype=complex)
        C = (V / (diff * mass))[..., None, None] * eye
        return Coefficients(a, b, bJ, C)
    if label in ("op2", "operator_2"):
        hG = jnp.einsum("...em,...aem->...a", h, GH_)
        b = -hG + 2 * geom["jI"]
        if label == "op2":
            b = b + 2 * geom["jII"]
        NGL = jnp.einsum("...ac,...cp,...xp->...ax", N, geom["Ginv"], geom["Lam"])
        bJ = 2 * jnp.einsum("...ax,xij->...aij", NGL, J)
        LGL = jnp.einsum("...xb,...bs,...ys->...xy", geom["Lam"], geom["Ginv"], geom["Lam"])
        C = (2 * V / (diff**2 * mass))[..., None, None] * eye - _lin(geom["lin_F1"], J) + _JJ(LGL, J)
        if label == "operator_2":
            lk = jnp.einsum("...xc,...mn,...cmn->...x", geom["Lam"], geom["gammaInv"], geom["nablaKK"])
            C = C - 0.25 * geom["Jtilde"][..., None, None] * eye + _lin(lk, J)
        return Coefficients(s * h, s * b, s * bJ, s * C)
    # horizontal Laplacian on the covector bundle, plus Casimir and potentials
    if label == "H_kappa":
        J = -jnp.swapaxes(J, -1, -2)
    conn = geom["conn"]
    b = (jnp.einsum("...ec,...bec->...b", h, geom["dN"])
         - jnp.einsum("...ec,...bec,...db->...d", h, GH_, N))
    bJ = -2 * jnp.einsum("...ec,...xe,xij->...cij", h, conn, J)
    hAA = jnp.einsum("...ec,...ye,...xc->...yx", h, conn, conn)
    C = _lin(geom["lin_op3"], J) + _JJ(hAA, J) + _JJ(geom["gammaInv"], J)
    C0 = (V / (diff * mass) - diff / 8.0 * geom["Jtilde"])[..., None, None] * eye
    return Coefficients(s * h, s * b, s * bJ, s * C + C0)


def apply_coefficients(co: Coefficients, psi, dpsi, ddpsi):
    """Apply coefficients to a value, gradient (d, N) and Hessian (d, N, N) of a section."""
    out = jnp.einsum("...ab,...pab->...p", co.a, ddpsi)
    out = out + jnp.einsum("...a,...pa->...p", co.b, dpsi)
    out = out + jnp.einsum("...apq,...qa->...p", co.bJ, dpsi)
    return out + jnp.einsum("...pq,...q->...p", co.C, psi)


def _section_derivs(section, Q):
    """Value, gradient and Hessian of a complex section by forward-mode autodiff."""
    re = lambda q: jnp.real(section(q))
    im = lambda q: jnp.imag(section(q))
    val = section(Q)
    d1 = jax.jacfwd(re)(Q) + 1j * jax.jacfwd(im)(Q)
    d2 = jax.jacfwd(jax.jacfwd(re))(Q) + 1j * jax.jacfwd(jax.jacfwd(im))(Q)
    return val, d1, d2


def point_geometry(model, Q, chart=0, derivatives="analytic"):
    rep = geometry.geometry_report(model, Q, chart, derivatives)
    g = {k: jnp.asarray(rep[k]) for k in (
        "h", "christoffel_H", "N", "jI", "jII", "Ginv", "gammaInv", "lin_F1", "lin_op3",
        "nablaKK", "dN", "conn", "drift_orig")}
    g["Lam"] = jnp.asarray(rep.Lambda)
    g["Jtilde"] = jnp.asarray(rep["Jtilde"])
    return g


def apply_generator(label, model, irrep, section, point, chart=0, mu2=1.0, kappa=1.0, mass=1.0,
                    derivatives="analytic"):
    """Apply a labelled generator to ``section`` (jax callable Q -> C^d) at one Sigma point."""
    Q = jnp.asarray(point, dtype=float)
    geom = point_geometry(model, Q, chart, derivatives)
    V = model.potential(Q, chart)
    co = assemble(label, geom, irrep.generators, mu2 * kappa, V, mass)
    val, d1, d2 = _section_derivs(section, Q)
    if not bool(jnp.all(jnp.isfinite(d2))):
        raise StencilOutOfDomain("section is not twice differentiable at the point")
    return np.asarray(apply_coefficients(co, jnp.atleast_1d(val), jnp.atleast_2d(d1),
                                         d2.reshape(val.size, Q.size, Q.size)))


def random_trig_section(rng, dim, n_modes=2, scale=1.0):
    """Random complex trigonometric polynomial in the first two chart coordinates."""
    ks = np.array([(i, j) for i in range(-n_modes, n_modes + 1) for j in range(-n_modes, n_modes + 1)])
    coef = (rng.normal(size=(dim, len(ks))) + 1j * rng.normal(size=(dim, len(ks)))) / len(ks)
    kj = jnp.asarray(ks * scale, dtype=float)
    cj = jnp.asarray(coef)

    def section(Q):
        ph = kj @ Q[:2]
        return cj @ jnp.exp(1j * ph)
    return section


def operator_identity_residual(model, irrep, n_points=50, n_sections=20, mu2=1.0, kappa=1.0,
                               derivatives="analytic", rng=None, pair=("operator_2", "operator_3_plus_casimir")):
    """Max relative difference between two assemblies of the same operator.

    Relative to the size of the applied operator (floored at 1), over random
    trigonometric sections and random gauge-surface points.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    charts, pts = model.random_sigma_points(n_points, rng)
    J = irrep.generators
    rep = geometry.geometry_report(model, pts, charts, derivatives)
    geom = {k: jnp.asarray(rep[k]) for k in (
        "h", "christoffel_H", "N", "jI", "jII", "Ginv", "gammaInv", "lin_F1", "lin_op3",
        "nablaKK", "dN", "conn", "drift_orig")}
    geom["Lam"] = jnp.asarray(rep.Lambda)
    geom["Jtilde"] = jnp.asarray(rep["Jtilde"])
    V = np.asarray(jax.vmap(lambda q, c: model.potential(q, c))(jnp.asarray(pts), jnp.asarray(charts)))
    c1 = assemble(pair[0], geom, J, mu2 * kappa, V)
    c2 = assemble(pair[1], geom, J, mu2 * kappa, V)
    worst = 0.0
    for _ in range(n_sections):
        sec = random_trig_section(rng, irrep.dim)
        val, d1, d2 = jax.vmap(lambda q: _section_derivs(sec, q))(jnp.asarray(pts))
        r1 = apply_coefficients(c1, val, d1, d2)
        r2 = apply_coefficients(c2, val, d1, d2)
        scale = jnp.maximum(jnp.max(jnp.abs(r1)), 1.0)
        worst = max(worst, float(jnp.max(jnp.abs(r1 - r2)) / scale))
    return worst


def term_residuals(model, irrep, n_points=50, derivatives="analytic", rng=None):
    """Coefficient-wise differences between operator_2 and operator_3_plus_casimir."""
    rng = np.random.default_rng(0) if rng is None else rng
    charts, pts = model.random_sigma_points(n_points, rng)
    rep = geometry.geometry_report(model, pts, charts, derivatives)
    geom = {k: jnp.asarray(rep[k]) for k in (
        "h", "christoffel_H", "N", "jI", "jII", "Ginv", "gammaInv", "lin_F1", "lin_op3",
        "nablaKK", "dN", "conn", "drift_orig")}
    geom["Lam"] = jnp.asarray(rep.Lambda)
    geom["Jtilde"] = jnp.asarray(rep["Jtilde"])
    c1 = assemble("operator_2", geom, irrep.generators)
    c2 = assemble("operator_3_plus_casimir", geom, irrep.generators)
    mx = lambda x: float(np.max(np.abs(np.asarray(x))))
    return {"second_order": mx(c1.a - c2.a), "first_order_scalar": mx(c1.b - c2.b),
            "first_order_J": mx(c1.bJ - c2.bJ), "zero_order": mx(c1.C - c2.C)}


# --- grids -----------------------------------------------------------------------

@dataclass
class Grid:
    """Chart-aligned square lattices on the gauge surface.

    ``charts`` holds one lattice per chart; every lattice has ``m x m`` nodes
    with coordinates ``origin + h * index`` in the first two chart
    coordinates.  ``active`` marks the unknowns; for periodic grids all nodes
    are active and neighbours wrap around.
    """

    kind: str
    h: float
    m: int
    origin: float
    n_charts: int
    active: np.ndarray            # (n_charts, m, m) bool
    model: object = field(repr=False, default=None)
    r_active: float = np.inf

    @property
    def axis(self):
        return self.origin + self.h * np.arange(self.m)

    def node_xy(self):
        """Chart index and (x1, x2) of every active node, in unknown order."""
        c, i, j = np.nonzero(self.active)
        return c, np.stack([self.axis[i], self.axis[j]], -1)

    def sigma_points(self):
        c, xy = self.node_xy()
        Q = np.concatenate([xy, np.zeros((len(xy), 1))], 1)
        Q = np.asarray(self.model.project(jnp.asarray(Q), 0)[0])
        return c, Q

    @property
    def n_active(self):
        return int(self.active.sum())

    def index_map(self):
        idx = -np.ones(self.active.shape, dtype=np.int64)
        idx[self.active] = np.arange(self.n_active)
        return idx

    def cell_weights(self):
        """Quadrature weights per active node (partition of unity across charts)."""
        c, xy = self.node_xy()
        w = np.full(len(c), self.h**2)
        if self.kind == "hopf":
            w = w * _chart_partition(np.linalg.norm(xy, axis=1), self.r_active)
        return w


def _bump(x):
    return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)


def _chart_partition(rho, r_active):
    """Smooth weight of chart 0 at |w| = rho; it pairs with its value at 1/rho to give 1."""
    delta = 0.9 * np.log(r_active)
    u = np.log(np.maximum(rho, 1e-300))
    a, b = _bump(delta - u), _bump(delta + u)
    return a / (a + b)


@dataclass
class GridSection:
    grid: Grid
    values: np.ndarray  # (n_active, d) complex

    def copy(self):
        return GridSection(self.grid, self.values.copy())


def periodic_grid(model, h):
    """Periodic lattice over the model's base box (side ``model.box``)."""
    if getattr(model, "tilt", 0.0) != 0.0:
        raise ConfigError("grid operators need an untilted gauge surface")
    L = float(model.box)
    m = int(round(L / h))
    if m < 8:
        raise ConfigError("grid too coarse")
    return Grid("periodic", L / m, m, -L / 2, 1, np.ones((1, m, m), dtype=bool), model)


def hopf_grid(model, h, r_active=1.2):
    """Two stereographic disk lattices |w| <= r_active with ghost layers."""
    if getattr(model, "tilt", 0.0) != 0.0:
        raise ConfigError("grid operators need an untilted gauge surface")
    if r_active <= 1.0:
        raise ConfigError("charts must overlap: r_active > 1")
    k = int(np.ceil(r_active / h)) + 3
    m = 2 * k + 1
    axis = h * (np.arange(m) - k)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    act = (X**2 + Y**2) <= r_active**2 + 1e-12
    return Grid("hopf", h, m, -k * h, 2, np.stack([act, act]), model, r_active)


def make_grid(model, h, **kw):
    return hopf_grid(model, h, **kw) if model.name == "hopf" else periodic_grid(model, h)


def _lagrange4(t):
    """Cubic Lagrange weights for nodes at -1, 0, 1, 2 and fractional offset t in [0, 1)."""
    return np.stack([-t * (t - 1) * (t - 2) / 6, (t + 1) * (t - 1) * (t - 2) / 2,
                     -(t + 1) * t * (t - 2) / 2, (t + 1) * t * (t - 1) / 6], -1)


def _interp_rows(grid, chart, xy):
    """Sparse-row description of cubic interpolation at points of one chart.

    Returns (cols, weights) with shapes (n, 16): unknown indices and weights.
    """
    idx = grid.index_map()
    t = (xy - grid.origin) / grid.h
    base = np.floor(t).astype(int) - 1
    frac = t - np.floor(t)
    wx = _lagrange4(frac[:, 0])
    wy = _lagrange4(frac[:, 1])
    cols = np.empty((len(xy), 16), dtype=np.int64)
    wts = np.empty((len(xy), 16))
    for a in range(4):
        for b in range(4):
            ii = base[:, 0] + a
            jj = base[:, 1] + b
            if np.any(ii < 0) or np.any(jj < 0) or np.any(ii >= grid.m) or np.any(jj >= grid.m):
                raise StencilOutOfDomain("interpolation stencil leaves the lattice")
            cols[:, 4 * a + b] = idx[chart, ii, jj]
            wts[:, 4 * a + b] = wx[:, a] * wy[:, b]
    if np.any(cols < 0):
        raise StencilOutOfDomain("interpolation stencil uses inactive nodes")
    return cols, wts


def _resolution(grid, irrep):
    """Sparse map from unknowns to all lattice nodes (ghosts interpolated with gauge factors)."""
    d = irrep.dim
    m = grid.m
    n_full = grid.n_charts * m * m
    idx = grid.index_map()
    full_id = np.arange(n_full).reshape(grid.n_charts, m, m)
    rows, cols, vals = [], [], []
    # active nodes: identity blocks
    act = grid.active
    r = full_id[act]
    c = idx[act]
    for p in range(d):
        rows.append(r * d + p)
        cols.append(c * d + p)
        vals.append(np.ones(len(r), dtype=complex))
    if grid.kind == "hopf":
        model = grid.model
        for ch in range(2):
            ghost = ~act[ch]
            gi, gj = np.nonzero(ghost)
            xy = np.stack([grid.axis[gi], grid.axis[gj]], -1)
            rho = np.linalg.norm(xy, axis=1)
            keep = rho > grid.r_active  # only ghosts near the disk are ever referenced
            keep &= rho <= grid.r_active + 3 * grid.h
            gi, gj, xy = gi[keep], gj[keep], xy[keep]
            Q = jnp.asarray(np.concatenate([xy, np.zeros((len(xy), 1))], 1))
            c2, Q2, beta = model.switch_chart(jnp.full(len(xy), ch), Q)
            icol, w = _interp_rows(grid, 1 - ch, np.asarray(Q2)[:, :2])
            Dt = np.swapaxes(np.asarray(irrep.matrix(np.asarray(beta))).reshape(-1, d, d), -1, -2)
            rfull = full_id[ch, gi, gj]
            for p in range(d):
                for q in range(d):
                    rows.append(np.repeat(rfull * d + p, 16))
                    cols.append((icol * d + q).ravel())
                    vals.append((w * Dt[:, p, q][:, None]).ravel())
    R = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_full * d, grid.n_active * d))
    return R


def _stencil(grid, co: Coefficients):
    """Sparse second-order central-difference operator from full lattice values to active nodes."""
    n = co.a.shape[-1]
    if n > 2:
        extra = max(float(np.max(np.abs(np.asarray(co.a)[:, 2:, :]))),
                    float(np.max(np.abs(np.asarray(co.b)[:, 2:]))),
                    float(np.max(np.abs(np.asarray(co.bJ)[:, 2:]))))
        if extra > 1e-12:
            raise ConfigError("operator has components off the chart grid (tilted gauge?)")
    a = np.asarray(co.a)[:, :2, :2]
    b = np.asarray(co.b)[:, :2]
    bJ = np.asarray(co.bJ)[:, :2]
    C = np.asarray(co.C)
    d = C.shape[-1]
    h = grid.h
    m = grid.m
    eye = np.eye(d)
    c, i, j = np.nonzero(grid.active)
    nA = len(c)
    blocks = {}
    first = lambda A: b[:, A, None, None] * eye + bJ[:, A]
    blocks[(0, 0)] = (-2 * (a[:, 0, 0] + a[:, 1, 1]) / h**2)[:, None, None] * eye + C
    blocks[(1, 0)] = (a[:, 0, 0] / h**2)[:, None, None] * eye + first(0) / (2 * h)
    blocks[(-1, 0)] = (a[:, 0, 0] / h**2)[:, None, None] * eye - first(0) / (2 * h)
    blocks[(0, 1)] = (a[:, 1, 1] / h**2)[:, None, None] * eye + first(1) / (2 * h)
    blocks[(0, -1)] = (a[:, 1, 1] / h**2)[:, None, None] * eye - first(1) / (2 * h)
    mix = (a[:, 0, 1] + a[:, 1, 0]) / (4 * h**2)
    for s1 in (1, -1):
        for s2 in (1, -1):
            blocks[(s1, s2)] = (s1 * s2 * mix)[:, None, None] * eye
    rows, cols, vals = [], [], []
    for (di, dj), B in blocks.items():
        ii, jj = i + di, j + dj
        if grid.kind == "periodic":
            ii %= m
            jj %= m
        elif np.any(ii < 0) or np.any(jj < 0) or np.any(ii >= m) or np.any(jj >= m):
            raise StencilOutOfDomain("difference stencil leaves the lattice")
        nbr = (c * m + ii) * m + jj
        for p in range(d):
            for q in range(d):
                rows.append(np.arange(nA) * d + p)
                cols.append(nbr * d + q)
                vals.append(B[:, p, q])
    n_full = grid.n_charts * m * m
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(nA * d, n_full * d))


def grid_geometry(grid, derivatives="analytic"):
    c, Q = grid.sigma_points()
    rep = geometry.geometry_report(grid.model, Q, c, derivatives)
    g = {k: jnp.asarray(rep[k]) for k in (
        "h", "christoffel_H", "N", "jI", "jII", "Ginv", "gammaInv", "lin_F1", "lin_op3",
        "nablaKK", "dN", "conn", "drift_orig")}
    g["Lam"] = jnp.asarray(rep.Lambda)
    g["Jtilde"] = jnp.asarray(rep["Jtilde"])
    return c, Q, g, rep


def assemble_operator(label, grid, irrep, mu2=1.0, kappa=1.0, mass=1.0, with_potential=True,
                      derivatives="analytic"):
    """Sparse matrix of a labelled generator acting on the grid unknowns."""
    if label == "total_space":
        raise ConfigError("total_space acts on functions of the total space, not on sections")
    c, Q, g, _ = grid_geometry(grid, derivatives)
    model = grid.model
    V = np.asarray(jax.vmap(lambda q, ch: model.potential(q, ch))(jnp.asarray(Q), jnp.asarray(c)))
    if not with_potential:
        V = np.zeros_like(V)
    co = assemble(label, g, irrep.generators, mu2 * kappa, V, mass)
    L = _stencil(grid, co)
    # H_kappa acts on sections of the dual bundle: ghost values use conj D
    R = _resolution(grid, irrep.dual() if label == "H_kappa" else irrep)
    return (L @ R).tocsc()


def section_on_grid(grid, irrep, func):
    """Sample an equivariant function of the embedding coordinates at the active nodes."""
    c, Q = grid.sigma_points()
    z = np.asarray(grid.model.embed(jnp.asarray(c), jnp.asarray(Q)))
    vals = np.asarray(func(z), dtype=complex).reshape(len(c), irrep.dim)
    return GridSection(grid, vals)


def interpolate(section: GridSection, chart, Q):
    """Cubic interpolation of a grid section at chart points (n, >=2); returns (n, d)."""
    grid = section.grid
    xy = np.atleast_2d(np.asarray(Q, dtype=float))[:, :2]
    chart = np.broadcast_to(np.asarray(chart), (len(xy),))
    out = np.zeros((len(xy), section.values.shape[1]), dtype=complex)
    for ch in np.unique(chart):
        sel = chart == ch
        p = xy[sel]
        if grid.kind == "periodic":
            L = grid.h * grid.m
            p = np.mod(p - grid.origin, L) + grid.origin
            t = (p - grid.origin) / grid.h
            base = np.floor(t).astype(int) - 1
            fr = t - np.floor(t)
            wx, wy = _lagrange4(fr[:, 0]), _lagrange4(fr[:, 1])
            idx = grid.index_map()[0]
            acc = 0
            for a_ in range(4):
                for b_ in range(4):
                    ii = (base[:, 0] + a_) % grid.m
                    jj = (base[:, 1] + b_) % grid.m
                    acc = acc + (wx[:, a_] * wy[:, b_])[:, None] * section.values[idx[ii, jj]]
            out[sel] = acc
        else:
            cols, w = _interp_rows(grid, int(ch), p)
            out[sel] = np.einsum("nk,nkd->nd", w, section.values[cols])
    return out


def evolve(label, model, irrep, initial: GridSection, t_span, dt, scheme="cn", mu2=1.0,
           kappa=1.0, mass=1.0, with_potential=True, operator=None):
    """Integrate ``d psi/dt = L psi`` over ``t_span`` and return (section, diagnostics)."""
    grid = initial.grid
    if t_span == 0:
        return initial.copy(), {"steps": 0}
    if dt <= 0 or t_span < 0:
        raise ConfigError("need dt > 0 and t_span >= 0")
    n_steps = int(np.ceil(t_span / dt - 1e-9))
    dt = t_span / n_steps
    A = assemble_operator(label, grid, irrep, mu2, kappa, mass, with_potential) if operator is None else operator
    u = initial.values.reshape(-1).astype(complex)
    w = np.repeat(grid.cell_weights(), irrep.dim)
    norm0 = float(np.sqrt(np.sum(w * np.abs(u) ** 2)))
    if scheme == "explicit":
        bound = float(np.max(np.abs(A).sum(axis=1)))
        if dt * bound > 2.0:
            raise Instability(f"explicit step unstable: dt * |A| = {dt * bound:.3g} > 2")
        for _ in range(n_steps):
            u = u + dt * (A @ u)
            if not np.all(np.isfinite(u)):
                raise Instability("explicit evolution diverged")
    elif scheme == "cn":
        I = sp.identity(A.shape[0], dtype=complex, format="csc")
        lu = spla.splu((I - 0.5 * dt * A).tocsc())
        B = (I + 0.5 * dt * A).tocsr()
        for _ in range(n_steps):
            u = lu.solve(B @ u)
    else:
        raise ConfigError("scheme must be 'cn' or 'explicit'")
    out = GridSection(grid, u.reshape(initial.values.shape))
    diag = {"steps": n_steps, "dt": dt, "norm_initial": norm0,
            "norm_final": float(np.sqrt(np.sum(w * np.abs(u) ** 2))),
            "mass_initial": complex(np.sum(w * initial.values.reshape(-1))),
            "mass_final": complex(np.sum(w * u))}
    return out, diag


def volume_density(grid, weight="scal_product"):
    """det^{1/2} of the horizontal metric on the surface, times det^{1/2} gamma for ``eq33``."""
    if weight not in ("scal_product", "eq33"):
        raise ConfigError("weight must be 'scal_product' or 'eq33'")
    c, Q = grid.sigma_points()
    rep = geometry.geometry_report(grid.model, Q, c, level="first")
    n = grid.model.n_total
    g = grid.model.n_group
    P = rep.Pperp
    GHp = np.einsum("nda,ndc,ncb->nab", P, rep.Ghoriz, P)
    E = np.stack([geometry.tangent_basis(p, n - g) for p in P])
    # express the tangent basis in the first two coordinates (area element of the lattice)
    red = np.einsum("nai,nab,nbj->nij", E, GHp, E)
    jac = np.abs(np.linalg.det(E[:, :2, :]))
    dens = np.sqrt(np.linalg.det(red)) / jac
    if weight == "eq33":
        dens = dens * np.sqrt(np.linalg.det(rep.gamma))
    return dens


def scalar_product(section_a: GridSection, section_b: GridSection, model=None, weight="scal_product"):
    """Quadrature of <psi_a, psi_b> against the chosen volume density."""
    grid = section_a.grid
    if section_b.grid is not grid:
        raise ConfigError("sections must share a grid")
    dens = volume_density(grid, weight)
    w = grid.cell_weights() * dens
    return complex(np.sum(w * np.sum(np.conj(section_a.values) * section_b.values, axis=1)))


def self_adjointness(label, grid, irrep, f: GridSection, g: GridSection, weight="scal_product",
                     mu2=1.0, kappa=1.0):
    """|<A f, g> - <f, A g>| relative to |<A f, g>| (potentials switched off)."""
    A = assemble_operator(label, grid, irrep, mu2, kappa, with_potential=False)
    Af = GridSection(grid, (A @ f.values.reshape(-1)).reshape(f.values.shape))
    Ag = GridSection(grid, (A @ g.values.reshape(-1)).reshape(g.values.shape))
    lhs = scalar_product(Af, g, weight=weight)
    rhs = scalar_product(f, Ag, weight=weight)
    return abs(lhs - rhs) / max(abs(lhs), 1e-300)


def symmetry_table(grid, irrep, f: GridSection, g: GridSection, labels=("op2", "operator_3_plus_casimir", "H_kappa")):
    """Symmetry defect of each operator under both measures, {label: {weight: residual}}."""
    return {lab: {w: float(self_adjointness(lab, grid, irrep, f, g, weight=w))
                  for w in ("eq33", "scal_product")} for lab in labels}


def stencil_error(label, model, irrep, section, h, mu2=1.0, kappa=1.0, n_check=25):
    """Max |grid operator - pointwise generator| on a periodic lattice for a jax section of Q."""
    grid = periodic_grid(model, h)
    c, Q = grid.sigma_points()
    vals = np.asarray(jax.vmap(section)(jnp.asarray(Q))).reshape(len(Q), irrep.dim)
    A = assemble_operator(label, grid, irrep, mu2, kappa)
    approx = (A @ vals.reshape(-1)).reshape(vals.shape)
    pick = np.linspace(0, len(Q) - 1, n_check).astype(int)
    exact = np.stack([apply_generator(label, model, irrep, section, Q[i], int(c[i]), mu2, kappa)
                      for i in pick])
    return float(np.max(np.abs(approx[pick] - exact)))
