"""Pointwise reduction geometry on the gauge surface.

Index layout: a mixed tensor ``T^A_B`` is stored as ``T[A, B]`` (row = upper
index); derivatives are appended as the last axis, ``dT[..., M] = dT/dQ^M``.
Structure constants follow :mod:`bundlediff.group`.

Curvature sign convention: every scalar curvature is obtained from the
contraction

    R_{SEC}^M = d_S Gam^M_{CE} - d_E Gam^M_{CS} + Gam^K_{CE} Gam^M_{KS} - Gam^P_{CS} Gam^M_{PE}

traced over ``E = M`` and then contracted with the inverse metric on ``S, C``.
With this convention round spheres have *negative* scalar curvature
(S^3 of radius r gives -6/r^2), consistent with the orbit curvature
formula for ``R_G``.  In this convention the reduction Jacobian integrand
``Jtilde`` vanishes whenever the orbits are totally geodesic with constant
volume, as it must.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from .errors import DerivativeFailure, GaugeNotTransversal, NotPositiveDefinite, SingularOrbitMetric

FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4
PHI_COND_MAX = 1e8


def derivative(f, scheme="analytic", h=FD_STEP, richardson=False):
    """Jacobian of a pytree-valued function of a single point, derivative axis last."""
    if scheme == "analytic":
        return jax.jacfwd(f)
    if scheme != "fd":
        raise ValueError(f"unknown derivative scheme {scheme!r}")

    def central(Q, step):
        cols = []
        for i in range(Q.shape[0]):
            e = jnp.zeros_like(Q).at[i].set(step)
            cols.append(jax.tree_util.tree_map(lambda p, m: (p - m) / (2 * step), f(Q + e), f(Q - e)))
        return jax.tree_util.tree_map(lambda *xs: jnp.stack(xs, -1), *cols)

    def df(Q):
        d = central(Q, h)
        if richardson:
            d2 = central(Q, h / 2)
            d = jax.tree_util.tree_map(lambda a, b: (4 * b - a) / 3, d, d2)
        return d

    return df


def small_inv(A):
    """Inverse via the adjugate for 1x1..3x3 (batched LU is slow for tiny matrices)."""
    n = A.shape[-1]
    if n == 1:
        return 1.0 / A
    if n == 2:
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        return jnp.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    if n == 3:
        cof = jnp.stack([jnp.cross(A[1], A[2]), jnp.cross(A[2], A[0]), jnp.cross(A[0], A[1])])
        det = jnp.dot(A[0], cof[0])
        return cof.T / det
    return jnp.linalg.inv(A)


def _frame(model, chart, scheme, Q):
    """Zeroth-order tensors (no derivatives of the metric)."""
    n = model.n_total
    G = model.metric(Q, chart)
    K = model.killing(Q, chart)
    chiB = derivative(lambda q: model.gauge(q, chart), scheme)(Q)
    Ginv = small_inv(G)
    gamma = K.T @ G @ K
    gammaInv = small_inv(gamma)
    Phi = chiB @ K
    PhiInv = small_inv(Phi)
    Lam = PhiInv @ chiB
    eye = jnp.eye(n)
    N = eye - K @ Lam
    Pi = eye - K @ gammaInv @ K.T @ G
    Pperp = eye - Ginv @ chiB.T @ small_inv(chiB @ Ginv @ chiB.T) @ chiB
    GH = Pi.T @ G @ Pi
    conn = gammaInv @ K.T @ G
    return {
        "G": G, "Ginv": Ginv, "K": K, "chiB": chiB, "gamma": gamma, "gammaInv": gammaInv,
        "Phi": Phi, "PhiInv": PhiInv, "Lam": Lam, "N": N, "Pi": Pi, "Pperp": Pperp,
        "GH": GH, "conn": conn,
        "h": N @ Ginv @ N.T,
        "Hinv": Pi @ Ginv @ Pi.T,
    }


def _christoffels(F, dF):
    dG = dF["G"]
    # Gt[C, A, B] = 1/2 G^{CE} (d_A G_EB + d_B G_EA - d_E G_AB)
    low = 0.5 * (jnp.einsum("eba->eab", dG) + dG - jnp.einsum("abe->eab", dG))
    Gt = jnp.einsum("ce,eab->cab", F["Ginv"], low)
    dGH = dF["GH"]
    lowH = 0.5 * (jnp.einsum("acd->acd", dGH) + jnp.einsum("adc->acd", dGH) - jnp.einsum("cda->acd", dGH))
    GamH = jnp.einsum("ba,acd->bcd", F["Hinv"], lowH)
    return Gt, GamH


def _first(model, chart, scheme, c, Q):
    F = _frame(model, chart, scheme, Q)
    dF = derivative(lambda q: _differentiated(model, chart, scheme, q), scheme)(Q)
    Gt, GamH = _christoffels(F, dF)
    Ginv, h, N, K = F["Ginv"], F["h"], F["N"], F["K"]
    conn, gamma, gInv, Lam = F["conn"], F["gamma"], F["gammaInv"], F["Lam"]
    dK, dN, dLam, dconn = dF["K"], dF["N"], dF["Lam"], dF["conn"]

    curvF = (jnp.einsum("ape->aep", dconn) - dconn
             + jnp.einsum("ans,ne,sp->aep", c, conn, conn))
    Dg = (dF["gamma"]
          - jnp.einsum("sma,me,sb->abe", c, conn, gamma)
          - jnp.einsum("smb,me,sa->abe", c, conn, gamma))
    secff = -0.5 * jnp.einsum("be,xye->bxy", h, Dg)
    jnorm2 = jnp.einsum("ab,xm,yn,axy,bmn->", F["GH"], gInv, gInv, secff, secff)
    nablaKK = (jnp.einsum("ax,cya->cxy", K, dK)
               + jnp.einsum("ax,by,cab->cxy", K, K, Gt))
    jII = -0.5 * jnp.einsum("ac,xy,cxy->a", N, gInv, nablaKK)
    jI = (-0.5 * jnp.einsum("ab,bcd,cd->a", N, GamH, h)
          + 0.5 * jnp.einsum("alm,lm->a", dN, h)
          + 0.5 * jnp.einsum("cb,acb->a", h, GamH))
    F2 = jnp.einsum("fb,pa,mn,mpf,nab->", h, h, gamma, curvF, curvF)
    R_G = (0.5 * jnp.einsum("mn,sma,ans->", gInv, c, c)
           + 0.25 * jnp.einsum("ms,ab,en,mea,snb->", gamma, gInv, gInv, c, c))
    lin_F1 = (jnp.einsum("rs,brs,xb->x", Ginv, Gt, Lam)
              + jnp.einsum("rp,sr,xb,bsp->x", Ginv, Lam, Lam, dK)
              - jnp.einsum("ca,mc,xam->x", Ginv, N, dLam))
    # -h^{AB} N^E_A d_E(N^C_B A_C) + h^{AC} HGam^B_{AC} N^D_B A_D
    dNA = jnp.einsum("cbe,xc->xbe", dN, conn) + jnp.einsum("cb,xce->xbe", N, dconn)
    lin_F3 = (-jnp.einsum("ab,ea,xbe->x", h, N, dNA)
              + jnp.einsum("ac,bac,db,xd->x", h, GamH, N, conn))
    # J-linear zero-order part of the horizontal Laplacian display
    lin_op3 = (-jnp.einsum("ec,xb,bce->x", h, conn, dN)
               - jnp.einsum("ec,xce->x", h, dconn)
               + jnp.einsum("ec,bec,db,xd->x", h, GamH, N, conn))
    dG = dF["G"]
    drift_orig = 0.5 * (-jnp.einsum("ac,cdb,db->a", Ginv, dG, Ginv)
                        + 0.5 * jnp.einsum("ab,cd,dcb->a", Ginv, Ginv, dG))
    out = dict(F)
    out.update(
        dG=dG, dK=dK, dN=dN, dLam=dLam, dconn=dconn, dgamma=dF["gamma"],
        christoffel_tilde=Gt, christoffel_H=GamH, curvF=curvF, Dgamma=Dg, secff=secff,
        nablaKK=nablaKK, jI=jI, jII=jII, jnorm2=jnorm2, F2=F2, R_G=R_G,
        lin_F1=lin_F1, lin_F3=lin_F3, lin_op3=lin_op3, drift_orig=drift_orig,
        Xtilde=jnp.linalg.cholesky(Ginv),
    )
    return out


def _riemann_trace(Gam, dGam, Ginv_sc, N_em):
    R = (jnp.einsum("mces->secm", dGam) - jnp.einsum("mcse->secm", dGam)
         + jnp.einsum("kce,mks->secm", Gam, Gam) - jnp.einsum("pcs,mpe->secm", Gam, Gam))
    return jnp.einsum("sc,em,secm->", Ginv_sc, N_em, R)


def _full(model, chart, scheme, c, Q):
    first = lambda q: _first(model, chart, scheme, c, q)
    out = first(Q)
    chris = lambda q: _christoffels_only(model, chart, scheme, q)
    h2 = FD_STEP_SECOND
    dchris = (jax.jacfwd(chris) if scheme == "analytic" else derivative(chris, "fd", h=h2))(Q)
    n = model.n_total
    R_P = _riemann_trace(out["christoffel_tilde"], dchris[0], out["Ginv"], jnp.eye(n))
    HR = _riemann_trace(out["christoffel_H"], dchris[1], out["h"], out["N"])
    Jt = R_P - HR - out["R_G"] - out["F2"] / 4 - out["jnorm2"]
    out.update(R_P=R_P, HR=HR, Jtilde=Jt)
    return out


_DIFF_KEYS = ("G", "GH", "N", "K", "Lam", "conn", "gamma")


def _differentiated(model, chart, scheme, Q):
    F = _frame(model, chart, scheme, Q)
    return {k: F[k] for k in _DIFF_KEYS}


def _christoffels_only(model, chart, scheme, Q):
    def metrics(q):
        F = _frame(model, chart, scheme, q)
        return {"G": F["G"], "GH": F["GH"]}
    F = _frame(model, chart, scheme, Q)
    return _christoffels(F, derivative(metrics, scheme)(Q))


@lru_cache(maxsize=None)
def compiled(model, scheme="analytic", level="full"):
    """Jitted, vectorized evaluator ``(Q[n, N_P], chart[n]) -> dict of arrays``."""
    c = jnp.asarray(model.group.structure_constants)
    body = _full if level == "full" else _first

    def one(Q, chart):
        return body(model, chart, scheme, c, Q)

    return jax.jit(jax.vmap(one))


SCALAR_KEYS = ("R_P", "HR", "R_G", "F2", "jnorm2", "Jtilde")


@dataclass(frozen=True)
class GeometryReport:
    """All reduction tensors at one or many points of the gauge surface."""

    Phi: np.ndarray
    PhiInv: np.ndarray
    Lambda: np.ndarray
    N: np.ndarray
    Pi: np.ndarray
    Pperp: np.ndarray
    gamma: np.ndarray
    gammaInv: np.ndarray
    Ghoriz: np.ndarray
    conn: np.ndarray
    curvF: np.ndarray
    christoffel_tilde: np.ndarray
    christoffel_H: np.ndarray
    jI: np.ndarray
    jII: np.ndarray
    secff: np.ndarray
    scalars: dict
    extras: dict = field(repr=False, default_factory=dict)

    def __getitem__(self, key):
        for f in fields(self):
            if f.name == key:
                return getattr(self, key)
        if key in self.scalars:
            return self.scalars[key]
        return self.extras[key]


_RENAME = {"Lam": "Lambda", "GH": "Ghoriz"}


def _to_report(raw: dict) -> GeometryReport:
    raw = {_RENAME.get(k, k): np.asarray(v) for k, v in raw.items()}
    names = [f.name for f in fields(GeometryReport) if f.name not in ("scalars", "extras")]
    main = {k: raw.pop(k) for k in names}
    scalars = {k: raw.pop(k) for k in SCALAR_KEYS if k in raw}
    return GeometryReport(**main, scalars=scalars, extras=raw)


def _batch(Q, chart):
    Q = np.asarray(Q, dtype=float)
    single = Q.ndim == 1
    Q2 = np.atleast_2d(Q)
    ch = np.broadcast_to(np.asarray(chart, dtype=int), Q2.shape[:1]).copy()
    return Q2, ch, single


def _unbatch(rep: GeometryReport) -> GeometryReport:
    def first(x):
        return x[0]

    kw = {f.name: first(getattr(rep, f.name)) for f in fields(rep) if f.name not in ("scalars", "extras")}
    return GeometryReport(**kw, scalars={k: float(v[0]) for k, v in rep.scalars.items()},
                          extras={k: first(v) for k, v in rep.extras.items()})


def _validate(model, rep: GeometryReport, Q, tol):
    chi = np.asarray(jax.vmap(lambda q: model.gauge(q, 0))(jnp.asarray(Q)))
    if np.max(np.abs(chi)) > tol:
        raise ValueError(f"point not on the gauge surface: |chi| = {np.max(np.abs(chi)):.3g}")
    if not np.all(np.isfinite(rep.Ghoriz)):
        raise DerivativeFailure("non-finite tensors (derivative stencil left the chart?)")
    ev = np.linalg.eigvalsh(rep.gamma)
    if np.any(ev <= 0):
        raise SingularOrbitMetric("orbit metric gamma is not positive definite")
    cond = np.linalg.cond(rep.Phi)
    if np.any(cond > PHI_COND_MAX):
        raise GaugeNotTransversal(f"Faddeev-Popov matrix condition number {np.max(cond):.3g}")


def geometry_report(model, Q, chart=0, derivatives="analytic", constraint_tol=1e-10,
                    level="full") -> GeometryReport:
    """Evaluate every reduction tensor at Sigma point(s) ``Q`` (shape (N_P,) or (n, N_P))."""
    Q2, ch, single = _batch(Q, chart)
    raw = compiled(model, derivatives, level)(jnp.asarray(Q2), jnp.asarray(ch))
    rep = _to_report(raw)
    _validate(model, rep, Q2, constraint_tol)
    return _unbatch(rep) if single else rep


def metric_sqrt(G) -> np.ndarray:
    """Lower-triangular X with X X^T = G^{-1}."""
    G = np.asarray(G, dtype=float)
    try:
        np.linalg.cholesky(G)
        return np.linalg.cholesky(np.linalg.inv(G))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("metric is not positive definite") from exc


def tangent_basis(Pperp, rank):
    """Orthonormal basis (columns) of the range of the projector P_perp."""
    U, _, _ = np.linalg.svd(Pperp)
    return U[:, :rank]


def metric_block(model, Q, a, chart=0, derivatives="analytic") -> dict:
    """Bundle-coordinate metric, its pseudoinverse and both sides of the determinant factorization."""
    rep = geometry_report(model, Q, chart, derivatives)
    grp = model.group
    a = grp.check_chart(np.asarray(a, dtype=float))
    u = np.asarray(grp.ubar(a))
    v = np.asarray(grp.vbar(a))
    G, Ginv, K = rep["G"], rep["Ginv"], rep["K"]
    P, N, Lam, gam = rep.Pperp, rep.N, rep.Lambda, rep.gamma
    tl = P.T @ G @ P
    tr = P.T @ G @ K @ u
    Gt = np.block([[tl, tr], [tr.T, u.T @ gam @ u]])
    itl = N @ Ginv @ N.T
    itr = N @ Ginv @ Lam.T @ v.T
    ibr = v @ Lam @ Ginv @ Lam.T @ v.T
    Gti = np.block([[itl, itr], [itr.T, ibr]])
    n, g = model.n_total, model.n_group
    target = np.block([[P, np.zeros((n, g))], [np.zeros((g, n)), np.eye(g)]])
    E = tangent_basis(P, n - g)
    Eb = np.block([[E, np.zeros((n, g))], [np.zeros((g, n - g)), np.eye(g)]])
    lhs = np.linalg.det(Eb.T @ Gt @ Eb)
    rhs = (np.linalg.det(E.T @ P.T @ rep.Ghoriz @ P @ E) * np.linalg.det(gam)
           * np.linalg.det(u) ** 2)
    return {
        "Gtilde": Gt,
        "GtildeInv": Gti,
        "pseudo_inverse_residual": float(np.max(np.abs(Gti @ Gt - target))),
        "det_factorization": {"det_Gtilde": float(lhs), "factorized": float(rhs),
                              "rel_diff": float(abs(lhs - rhs) / abs(lhs))},
    }


def projector_residuals(rep: GeometryReport) -> dict:
    """Max-norm residuals of the projector identities (batched reports allowed)."""
    N, P, Pi, K = rep.N, rep.Pperp, rep.Pi, rep["K"]
    mm = lambda A, B: np.einsum("...ij,...jk->...ik", A, B)
    mx = lambda x: float(np.max(np.abs(x)))
    return {
        "NN-N": mx(mm(N, N) - N),
        "NK": mx(mm(N, K)),
        "NPperp-Pperp": mx(mm(N, P) - P),
        "PperpN-N": mx(mm(P, N) - N),
        "PiN-Pi": mx(mm(Pi, N) - Pi),
        "NPi-N": mx(mm(N, Pi) - N),
        "connK-I": mx(mm(rep.conn, K) - np.eye(K.shape[-1])),
    }


def killing_residual(model, Q, chart=0) -> float:
    """Max |L_K G| over the Killing fields at point(s) Q (autodiff)."""
    def lie(q):
        G = model.metric(q, chart)
        K = model.killing(q, chart)
        dG = jax.jacfwd(lambda x: model.metric(x, chart))(q)
        dK = jax.jacfwd(lambda x: model.killing(x, chart))(q)
        return (jnp.einsum("cm,abc->mab", K, dG)
                + jnp.einsum("cb,cma->mab", G, dK)
                + jnp.einsum("ac,cmb->mab", G, dK))
    Q = jnp.atleast_2d(jnp.asarray(Q, dtype=float))
    return float(jnp.max(jnp.abs(jax.vmap(lie)(Q))))


def isometry_residual(model, Q, a, chart=0) -> float:
    """Max |G(Q) - F_Q^T G(F(Q,a)) F_Q| for the group action."""
    def res(q, g):
        Fq = jax.jacfwd(lambda x: model.action(x, g, chart))(q)
        return model.metric(q, chart) - Fq.T @ model.metric(model.action(q, g, chart), chart) @ Fq
    Q = jnp.atleast_2d(jnp.asarray(Q, dtype=float))
    a = jnp.atleast_2d(jnp.asarray(a, dtype=float))
    return float(jnp.max(jnp.abs(jax.vmap(res)(Q, a))))


def equivariance_check(model, irrep, test_function, n_samples=100, rng=None) -> float:
    """Max residual of psi(p g) = D(g)^T psi(p) over random p and g.

    ``test_function`` maps the model's total-space embedding coordinates to
    a vector of length ``irrep.dim``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    chart, Q = model.random_sigma_points(n_samples, rng)
    grp = model.group
    a = grp.normalize(rng.uniform(-np.pi, np.pi, size=(n_samples, grp.n_group)))
    g = grp.normalize(rng.uniform(-np.pi, np.pi, size=(n_samples, grp.n_group)))
    p = np.asarray(jax.vmap(lambda q, x: model.action(q, x, 0))(jnp.asarray(Q), jnp.asarray(a)))
    pg = np.asarray(jax.vmap(lambda q, x: model.action(q, x, 0))(jnp.asarray(p), jnp.asarray(g)))
    f_p = np.asarray(test_function(model.embed(jnp.asarray(chart), jnp.asarray(p))))
    f_pg = np.asarray(test_function(model.embed(jnp.asarray(chart), jnp.asarray(pg))))
    f_p = f_p.reshape(n_samples, irrep.dim)
    f_pg = f_pg.reshape(n_samples, irrep.dim)
    D = np.asarray(irrep.matrix(g)).reshape(n_samples, irrep.dim, irrep.dim)
    pred = np.einsum("nmq,nm->nq", D, f_p)
    return float(np.max(np.abs(f_pg - pred)))


def metric_block_residuals(model, Q, a, chart=0, derivatives="analytic", rep=None) -> dict:
    """Batched version of :func:`metric_block` returning only the two residuals.

    ``Q`` (n, N_P), ``a`` (n, N_G); the determinant check is relative.
    """
    rep = geometry_report(model, Q, chart, derivatives) if rep is None else rep
    grp = model.group
    a = grp.check_chart(np.asarray(a, dtype=float))
    u = np.asarray(jax.vmap(grp.ubar)(jnp.asarray(a)))
    v = np.asarray(jax.vmap(grp.vbar)(jnp.asarray(a)))
    G, Ginv, K = rep["G"], rep["Ginv"], rep["K"]
    P, N, Lam, gam = rep.Pperp, rep.N, rep.Lambda, rep.gamma
    T = lambda A: np.swapaxes(A, -1, -2)
    tl = T(P) @ G @ P
    tr = T(P) @ G @ K @ u
    Gt = np.concatenate([np.concatenate([tl, tr], -1),
                         np.concatenate([T(tr), T(u) @ gam @ u], -1)], -2)
    itl = N @ Ginv @ T(N)
    itr = N @ Ginv @ T(Lam) @ T(v)
    ibr = v @ Lam @ Ginv @ T(Lam) @ T(v)
    Gti = np.concatenate([np.concatenate([itl, itr], -1),
                          np.concatenate([T(itr), ibr], -1)], -2)
    n, g = model.n_total, model.n_group
    m = len(P)
    target = np.zeros((m, n + g, n + g))
    target[:, :n, :n] = P
    target[:, n:, n:] = np.eye(g)
    E = np.stack([tangent_basis(p, n - g) for p in P])
    Eb = np.zeros((m, n + g, n))
    Eb[:, :n, :n - g] = E
    Eb[:, n:, n - g:] = np.eye(g)
    lhs = np.linalg.det(T(Eb) @ Gt @ Eb)
    rhs = (np.linalg.det(T(E) @ T(P) @ rep.Ghoriz @ P @ E) * np.linalg.det(gam)
           * np.linalg.det(u) ** 2)
    return {"pseudo_inverse": float(np.max(np.abs(Gti @ Gt - target))),
            "det_factorization": float(np.max(np.abs(lhs - rhs) / np.abs(lhs)))}
