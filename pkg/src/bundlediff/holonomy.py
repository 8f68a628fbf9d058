"""Time-ordered multiplicative integrals along gauge-surface paths.

A kernel supplies, at every point, a drift matrix ``A`` and noise matrices
``B_M`` acting in the representation space.  One step multiplies the
accumulated matrix on the right (later times to the right):

    M_{k+1} = M_k (I + (A + 1/2 sum_M B_M B_M) dt + sum_M B_M dW^M)      ("euler")
    M_{k+1} = M_k expm(A dt + sum_M B_M dW^M)                           ("expm")

Both are first-order versions of the same ordered exponential; the
``1/2 B B`` term is the Ito correction of ``expm`` at this order.  The
literal ``I + A dt + B dW`` product is available as ``"euler_plain"``.

Worked two-step example: after steps 1 and 2 the accumulator is
``M = m_1 m_2``, and the estimator is ``M psi(endpoint)``.

Kernels (``D = mu^2 kappa``, ``J_a`` the representation generators):

* F1 (full process): ``A = D/2 [gamma^{ab} J_a J_b - l1^b J_b]``,
  ``B_M = sqrt(D) (Lambda Pi Xtilde)^b_M J_b``;
* F2 (reduced process): ``A = A_F1 - D (Lambda Pi j_II)^a J_a``, same ``B``,
  scalar weight ``-D/8 Jtilde``;
* F3 (reduced process, horizontal form): ``A = D/2 [gamma^{ab} J_a J_b + l3^a J_a]``,
  ``B_M = -sqrt(D) (conn N Xtilde)^a_M J_a``, scalar weight ``-D/8 Jtilde``.

Every kernel adds ``V / (D m)`` to the scalar log-weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import expm

from .errors import ConfigError, MatrixOverflow, SingularOrbitMetric

KERNELS = ("F1", "F2", "F3")
PAIRING = {"F1": "sigma_full", "F2": "sigma_reduced", "F3": "sigma_reduced"}
MODES = ("euler", "expm", "euler_plain")
OVERFLOW = 1e12


@dataclass(frozen=True)
class KernelVariant:
    tag: str
    mode: str = "euler"
    jacobian_weight: bool = True  # include -D/8 Jtilde for F2/F3

    def __post_init__(self):
        if self.tag not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}")
        if self.mode not in MODES:
            raise ConfigError(f"multiplier mode must be one of {MODES}")

    @property
    def process(self):
        return PAIRING[self.tag]

    @property
    def uses_jtilde(self):
        return self.tag != "F1" and self.jacobian_weight


def kernel_matrices(tag, geom, J, diff):
    """(A, B) for one point; ``B`` has shape (N_P, d, d), indexed by noise component."""
    gi = geom["gammaInv"]
    JJ = jnp.einsum("ab,aij,bjk->ik", gi, J, J)
    if tag in ("F1", "F2"):
        lin = geom["lin_F1"]
        A = 0.5 * diff * (JJ - jnp.einsum("b,bij->ij", lin, J))
        coef = geom["Lam"] @ geom["Pi"] @ geom["Xtilde"]
        B = jnp.sqrt(diff) * jnp.einsum("bm,bij->mij", coef, J)
        if tag == "F2":
            v = geom["Lam"] @ geom["Pi"] @ geom["jII"]
            A = A - diff * jnp.einsum("a,aij->ij", v, J)
    else:
        A = 0.5 * diff * (JJ + jnp.einsum("a,aij->ij", geom["lin_F3"], J))
        coef = geom["conn"] @ geom["N"] @ geom["Xtilde"]
        B = -jnp.sqrt(diff) * jnp.einsum("am,aij->mij", coef, J)
    return A, B


def multiplier(A, B, dt, dW, mode):
    d = A.shape[-1]
    BdW = jnp.einsum("m,mij->ij", dW.astype(B.dtype), B)
    if mode == "expm":
        return expm(A * dt + BdW)
    eye = jnp.eye(d, dtype=A.dtype)
    if mode == "euler_plain":
        return eye + A * dt + BdW
    BB = jnp.einsum("mij,mjk->ik", B, B)
    return eye + (A + 0.5 * BB) * dt + BdW


def scalar_rate(variant, geom, potential, diff, mass, jtilde_const=None):
    """Increment rate of the scalar log-weight."""
    r = potential / (diff * mass)
    if variant.uses_jtilde:
        jt = geom["Jtilde"] if jtilde_const is None else jtilde_const
        r = r - diff / 8.0 * jt
    return r


class HolonomyAccumulator:
    """Jittable per-path accumulator used inside :func:`bundlediff.sde.simulate_paths`.

    State: ``M`` (n, d, d) complex, ``logW`` (n,), and optionally ``logM``
    (n,) for one-dimensional representations (log of the product, accumulated
    as a sum; an independent check of the matrix product).
    """

    def __init__(self, model, irrep, variant: KernelVariant, mu2=1.0, kappa=1.0, mass=1.0,
                 track_log=False, jtilde="auto"):
        self.model = model
        self.irrep = irrep
        self.variant = variant
        self.diff = float(mu2 * kappa)
        self.mass = float(mass)
        self.J = jnp.asarray(irrep.generators, dtype=complex)
        self.track_log = bool(track_log and irrep.dim == 1)
        # "auto": use the model's declared constant Jtilde when it has one
        # (checked against the geometry by the test-suite), else evaluate per step
        const = model.descriptor().constants.get("Jtilde") if jtilde == "auto" else None
        if jtilde not in ("auto", "geometry"):
            raise ConfigError("jtilde must be 'auto' or 'geometry'")
        self.jtilde_const = None if const is None else float(const)
        per_step = variant.uses_jtilde and self.jtilde_const is None
        self.level = "full" if per_step else "first"

    def init(self, n):
        d = self.irrep.dim
        st = {"M": jnp.tile(jnp.eye(d, dtype=complex), (n, 1, 1)), "logW": jnp.zeros(n)}
        if self.track_log:
            st["logM"] = jnp.zeros(n, dtype=complex)
        return st

    def update(self, acc, geom, dW, dt, Q, chart=0):
        A, B = kernel_matrices(self.variant.tag, geom, self.J, self.diff)
        m = multiplier(A, B, dt, dW, self.variant.mode)
        V = self.model.potential(Q, chart)
        out = {"M": acc["M"] @ m,
               "logW": acc["logW"] + scalar_rate(self.variant, geom, V, self.diff, self.mass,
                                                 self.jtilde_const) * dt}
        if self.track_log:
            out["logM"] = acc["logM"] + jnp.log(m[0, 0])
        return out

    def regauge(self, acc, beta):
        """Chart change ``s_old = s_new * beta``: ``M <- M D(beta)^T``."""
        D = self.irrep.matrix(beta)
        out = dict(acc)
        out["M"] = acc["M"] @ D.T
        if self.track_log:
            out["logM"] = acc["logM"] + jnp.log(D[0, 0])
        return out


class PotentialAccumulator:
    """Feynman-Kac weight ``exp(int V/(D m) dt)`` for the total-space process."""

    level = "first"

    def __init__(self, model, mu2=1.0, kappa=1.0, mass=1.0):
        self.model = model
        self.scale = 1.0 / float(mu2 * kappa * mass)

    def init(self, n):
        return {"logW": jnp.zeros(n)}

    def update_original(self, acc, Q, chart, dt):
        return {"logW": acc["logW"] + self.scale * self.model.potential(Q, chart) * dt}


@dataclass
class PathState:
    """Single-path holonomy state."""

    t: float
    point: np.ndarray
    M: np.ndarray
    logW: float = 0.0
    chart: int = 0

    @classmethod
    def start(cls, t, point, irrep, chart=0):
        return cls(t, np.asarray(point, dtype=float), np.eye(irrep.dim, dtype=complex), 0.0, chart)


def holonomy_step(variant: KernelVariant, state: PathState, report, irrep, dt, dW, model=None,
                  mu2=1.0, kappa=1.0, mass=1.0) -> PathState:
    """Advance a single path's multiplicative integral by one step.

    ``report`` is a :class:`~bundlediff.geometry.GeometryReport` at ``state.point``
    (level ``full`` when the kernel uses the Jacobian weight).
    """
    diff = mu2 * kappa
    keys = ("gammaInv", "lin_F1", "lin_F3", "Lam", "Pi", "Xtilde", "jII", "conn", "N")
    geom = {k: jnp.asarray(report["Lambda" if k == "Lam" else k]) for k in keys}
    if variant.uses_jtilde:
        geom["Jtilde"] = report["Jtilde"]
    J = jnp.asarray(irrep.generators, dtype=complex)
    A, B = kernel_matrices(variant.tag, geom, J, diff)
    m = np.asarray(multiplier(A, B, dt, jnp.asarray(dW, dtype=float), variant.mode))
    V = float(model.potential(jnp.asarray(state.point), state.chart)) if model is not None else 0.0
    M = state.M @ m
    if not np.all(np.isfinite(M)) or np.max(np.abs(M)) > OVERFLOW:
        raise MatrixOverflow("multiplicative integral overflow; reduce the step size")
    logW = state.logW + float(scalar_rate(variant, geom, V, diff, mass)) * dt
    return PathState(state.t + dt, state.point, M, logW, state.chart)


def check_overflow(M):
    M = np.asarray(M)
    if not np.all(np.isfinite(M)) or np.max(np.abs(M)) > OVERFLOW:
        raise MatrixOverflow("multiplicative integral overflow; reduce the step size")


def jacobian_prefactor(gamma_a, gamma_b):
    """(gamma_b / gamma_a)^{1/4} from orbit-metric determinants."""
    ga = np.asarray(gamma_a, dtype=float)
    gb = np.asarray(gamma_b, dtype=float)
    if np.any(ga <= 0) or np.any(gb <= 0):
        raise SingularOrbitMetric("orbit metric determinant must be positive")
    return (gb / ga) ** 0.25


def orbit_det(model, chart, Q):
    """det gamma at chart points (batched)."""
    def one(q, c):
        K = model.killing(q, c)
        return jnp.linalg.det(K.T @ model.metric(q, c) @ K)
    Q = jnp.atleast_2d(jnp.asarray(Q, dtype=float))
    c = jnp.broadcast_to(jnp.asarray(chart), Q.shape[:1])
    return np.asarray(jax.vmap(one)(Q, c))
