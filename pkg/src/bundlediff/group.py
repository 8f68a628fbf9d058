"""Compact groups U(1) and SU(2) in exponential coordinates.

Elements are stored as real parameter vectors ``a`` (length ``n_group``).
Representations act from the left, ``D(a) D(b) = D(compose(a, b))``, and the
generators are ``J_mu = dD/da^mu`` at the identity.  Structure constants are
stored as ``c[sigma, mu, nu] = c^sigma_{mu nu}`` and fixed by the
right-invariant vector fields, ``[L_mu, L_nu] = c^sigma_{mu nu} L_sigma``,
which gives ``[J_mu, J_nu] = -c^sigma_{mu nu} J_sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import jax.numpy as jnp
import numpy as np
from jax.scipy.linalg import expm as _jexpm

from .errors import ChartOverflow

_EPS = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS[_i, _j, _k] = 1.0
    _EPS[_i, _k, _j] = -1.0

PAULI = np.array(
    [[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex
)


def _wrap_angle(x):
    """Map angles to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


@dataclass(frozen=True)
class Irrep:
    """Irreducible unitary representation with anti-Hermitian generators."""

    group: "CompactGroup"
    label: object
    dim: int
    generators: np.ndarray = field(repr=False)  # (n_group, dim, dim)

    @property
    def identity(self) -> np.ndarray:
        return np.eye(self.dim, dtype=complex)

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.generators)

    def matrix(self, a):
        """D(a) for parameters of shape (..., n_group); returns (..., d, d)."""
        a = jnp.asarray(a, dtype=float)
        X = jnp.einsum("...m,mpq->...pq", a, jnp.asarray(self.generators))
        if self.dim == 1:
            return jnp.exp(X)
        if X.ndim == 2:
            return _jexpm(X)
        flat = X.reshape((-1, self.dim, self.dim))
        return _batched_expm(flat).reshape(X.shape)

    def dual(self) -> "Irrep":
        """Contragredient representation, generators -J^T."""
        gens = -np.transpose(self.generators, (0, 2, 1))
        return Irrep(self.group, ("dual", self.label), self.dim, gens)

    def table(self) -> dict:
        return {
            "group": self.group.name,
            "label": str(self.label),
            "dim": self.dim,
            "generators": [
                {"re": g.real.tolist(), "im": g.imag.tolist()} for g in self.generators
            ],
        }


def _batched_expm(X):
    import jax

    return jax.vmap(_jexpm)(X)


class CompactGroup:
    name = "abstract"
    n_group = 0
    semisimple = False
    chart_radius = np.inf

    def identity(self) -> np.ndarray:
        return np.zeros(self.n_group)

    @property
    def structure_constants(self) -> np.ndarray:
        raise NotImplementedError

    def check_chart(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if np.any(np.linalg.norm(np.atleast_2d(a), axis=-1) >= self.chart_radius):
            raise ChartOverflow(f"{self.name}: parameter outside exponential chart")
        return a

    def jacobi_residual(self) -> float:
        c = self.structure_constants
        # c^s_{ab} c^t_{sc} + cyclic
        t = np.einsum("sab,tsc->tabc", c, c)
        cyc = t + np.transpose(t, (0, 2, 3, 1)) + np.transpose(t, (0, 3, 1, 2))
        return float(np.max(np.abs(cyc))) if cyc.size else 0.0

    def invariant_frames(self, a) -> dict:
        a = self.check_chart(a)
        u = np.asarray(self.ubar(a))
        v = np.asarray(self.vbar(a))
        return {"ubar": u, "vbar": v, "det_ubar": np.linalg.det(u)}


class U1(CompactGroup):
    """The circle group, parameter = angle in (-pi, pi]."""

    name = "U1"
    n_group = 1
    semisimple = False  # abelian; every structure-constant term vanishes
    chart_radius = np.pi + 1e-12

    @property
    def structure_constants(self):
        return np.zeros((1, 1, 1))

    def normalize(self, a):
        return _wrap_angle(a)

    def compose(self, g, h):
        return self.normalize(np.asarray(g, dtype=float) + np.asarray(h, dtype=float))

    def inverse(self, g):
        return self.normalize(-np.asarray(g, dtype=float))

    def ubar(self, a):
        a = jnp.asarray(a, dtype=float)
        return jnp.ones(a.shape[:-1] + (1, 1))

    def vbar(self, a):
        return self.ubar(a)

    def irrep(self, lam) -> Irrep:
        lam = int(lam)
        return Irrep(self, lam, 1, np.array([[[1j * lam]]]))

    def haar_quadrature(self, order: int):
        if order < 1:
            raise ValueError("quadrature order must be >= 1")
        nodes = self.normalize(2 * np.pi * np.arange(order) / order)[:, None]
        return nodes, np.full(order, 1.0 / order)


def _spin_matrices(j: Fraction):
    m = np.array([j - k for k in range(int(2 * j) + 1)], dtype=float)
    jj = float(j * (j + 1))
    sp = np.zeros((m.size, m.size))
    for k in range(1, m.size):
        # |m_k> -> |m_k + 1> = |m_{k-1}>
        sp[k - 1, k] = np.sqrt(jj - m[k] * (m[k] + 1))
    sm = sp.T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    sz = np.diag(m)
    return np.array([sx, sy, sz], dtype=complex)


def _skew(a):
    """Matrix of b -> a x b (adjoint action in so(3) ~ su(2))."""
    a = np.asarray(a, dtype=float)
    z = np.zeros(a.shape[:-1])
    return np.stack(
        [
            np.stack([z, -a[..., 2], a[..., 1]], -1),
            np.stack([a[..., 2], z, -a[..., 0]], -1),
            np.stack([-a[..., 1], a[..., 0], z], -1),
        ],
        -2,
    )


def _jskew(a):
    z = jnp.zeros(a.shape[:-1])
    return jnp.stack(
        [
            jnp.stack([z, -a[..., 2], a[..., 1]], -1),
            jnp.stack([a[..., 2], z, -a[..., 0]], -1),
            jnp.stack([-a[..., 1], a[..., 0], z], -1),
        ],
        -2,
    )


class SU2(CompactGroup):
    """SU(2) with basis e_mu = -(i/2) sigma_mu, so [e_mu, e_nu] = eps_{mu nu s} e_s.

    The exponential chart is the open ball of radius 2*pi (it misses only -I).
    """

    name = "SU2"
    n_group = 3
    semisimple = True
    chart_radius = 2 * np.pi

    @property
    def structure_constants(self):
        # c^s_{mu nu} = -eps_{mu nu s}, stored [s, mu, nu]
        return -np.transpose(_EPS, (2, 0, 1))

    def to_matrix(self, a):
        a = np.asarray(a, dtype=float)
        th = np.linalg.norm(a, axis=-1)
        n = np.where(th[..., None] > 0, a / np.where(th > 0, th, 1.0)[..., None], 0.0)
        ns = np.einsum("...m,mpq->...pq", n, PAULI)
        eye = np.broadcast_to(np.eye(2), ns.shape)
        return np.cos(th / 2)[..., None, None] * eye - 1j * np.sin(th / 2)[..., None, None] * ns

    def from_matrix(self, U):
        U = np.asarray(U)
        c = np.real(np.trace(U, axis1=-2, axis2=-1)) / 2
        A = (U - np.conj(np.swapaxes(U, -1, -2))) / 2
        # A = -i sin(th/2) n.sigma; recover v = sin(th/2) n
        v = np.stack(
            [
                -np.imag(A[..., 0, 1] + A[..., 1, 0]) / 2,
                np.real(A[..., 1, 0] - A[..., 0, 1]) / 2,
                -np.imag(A[..., 0, 0] - A[..., 1, 1]) / 2,
            ],
            -1,
        )
        s = np.linalg.norm(v, axis=-1)
        th = 2 * np.arctan2(s, c)
        scale = np.where(s > 1e-300, th / np.where(s > 1e-300, s, 1.0), 2.0)
        a = v * scale[..., None]
        if np.any(th >= self.chart_radius - 1e-12):
            raise ChartOverflow("SU2 element -I is outside the exponential chart")
        return a

    def normalize(self, a):
        return self.from_matrix(self.to_matrix(a))

    def compose(self, g, h):
        return self.from_matrix(self.to_matrix(g) @ self.to_matrix(h))

    def inverse(self, g):
        return -np.asarray(g, dtype=float)

    def ubar(self, a):
        """u(a) = (exp(ad_a) - 1)/ad_a, closed form for so(3)."""
        a = jnp.asarray(a, dtype=float)
        X = _jskew(a)
        th2 = jnp.sum(a * a, axis=-1)[..., None, None]
        small = th2 < 1e-8
        th2s = jnp.where(small, 1.0, th2)
        th = jnp.sqrt(th2s)
        c1 = jnp.where(small, 0.5 - th2 / 24, (1 - jnp.cos(th)) / th2s)
        c2 = jnp.where(small, 1.0 / 6 - th2 / 120, (th - jnp.sin(th)) / (th2s * th))
        eye = jnp.eye(3)
        return eye + c1 * X + c2 * (X @ X)

    def vbar(self, a):
        """v(a) = ad_a/(exp(ad_a) - 1), the inverse of ubar."""
        a = jnp.asarray(a, dtype=float)
        X = _jskew(a)
        th2 = jnp.sum(a * a, axis=-1)[..., None, None]
        small = th2 < 1e-8
        th2s = jnp.where(small, 1.0, th2)
        th = jnp.sqrt(th2s)
        c2 = jnp.where(small, 1.0 / 12 + th2 / 720, (1 - (th / 2) / jnp.tan(th / 2)) / th2s)
        return jnp.eye(3) - 0.5 * X + c2 * (X @ X)

    def irrep(self, spin) -> Irrep:
        j = Fraction(spin).limit_denominator(2)
        if j < 0 or (2 * j).denominator != 1:
            raise ValueError(f"invalid spin {spin}")
        gens = -1j * _spin_matrices(j)
        return Irrep(self, j, int(2 * j) + 1, gens)

    def haar_quadrature(self, order: int):
        """Euler-angle (ZYZ) product rule: trapezoid x Gauss-Legendre(cos b) x trapezoid."""
        if order < 1:
            raise ValueError("quadrature order must be >= 1")
        n = order
        al = 2 * np.pi * np.arange(n) / n
        ga = 4 * np.pi * np.arange(2 * n) / (2 * n)
        x, wb = np.polynomial.legendre.leggauss(n)
        be = np.arccos(x)
        A, B, G = np.meshgrid(al, be, ga, indexing="ij")
        W = np.broadcast_to(wb[None, :, None], A.shape) / (2.0 * n * 2 * n)
        ez = np.array([0.0, 0.0, 1.0])
        ey = np.array([0.0, 1.0, 0.0])
        U = (
            self.to_matrix(A.reshape(-1, 1) * ez)
            @ self.to_matrix(B.reshape(-1, 1) * ey)
            @ self.to_matrix(G.reshape(-1, 1) * ez)
        )
        w = W.reshape(-1)
        return self.from_matrix(U), w / w.sum()


def get_group(name: str) -> CompactGroup:
    key = name.upper().replace("(", "").replace(")", "")
    if key == "U1":
        return U1()
    if key == "SU2":
        return SU2()
    raise ValueError(f"unknown group {name!r}")
