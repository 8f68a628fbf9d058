"""Concrete bundle models.

Every built-in model is a U(1) bundle written in adapted chart coordinates
``Q = (x^1, x^2, phi)``: the group acts by translating the last (fiber)
coordinate, the gauge function is ``chi(Q) = phi`` and the gauge surface is
the coordinate slice ``phi = 0``.  The metric has Kaluza-Klein form

    G = [[h + f^2 A A^T, f^2 A], [f^2 A^T, f^2]]

with a base metric ``h``, a connection one-form ``A`` and a fiber length
function ``f`` (all independent of ``phi``).  The geometry module never uses
this structure; it only sees the generic callables of :class:`BundleModel`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from .errors import ConfigError, UnknownModel
from .group import U1, CompactGroup


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    n_total: int
    n_group: int
    n_charts: int
    chart_notes: str
    analytic: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)


class BundleModel:
    """Geometric input of the reduction: metric, action, Killing fields, gauge.

    Callables take a single chart point ``Q`` (shape ``(n_total,)``) and a
    chart index, and must be written with ``jax.numpy`` so they can be
    differentiated and vectorized.
    """

    name = "abstract"
    n_total = 0
    group: CompactGroup
    free: tuple = ()
    pinned: tuple = ()
    n_charts = 1

    def metric(self, Q, chart=0):
        raise NotImplementedError

    def killing(self, Q, chart=0):
        raise NotImplementedError

    def gauge(self, Q, chart=0):
        raise NotImplementedError

    def action(self, Q, a, chart=0):
        raise NotImplementedError

    def potential(self, Q, chart=0):
        return jnp.zeros(())

    @property
    def n_group(self):
        return self.group.n_group

    def project(self, Q, chart=0):
        """Return the point of the gauge surface on the orbit of ``Q`` and the group shift."""
        raise NotImplementedError

    def normalize(self, chart, Q):
        """Chart bookkeeping after a step: returns ``(chart, Q, beta)``.

        ``beta`` is the group element relating the old local section to the
        new one, ``s_old(x) = s_new(x) * beta``.
        """
        return chart, Q, jnp.zeros(Q.shape[:-1] + (self.n_group,))

    def embed(self, chart, Q):
        raise NotImplementedError

    def random_sigma_points(self, n, rng):
        raise NotImplementedError

    def descriptor(self) -> ModelDescriptor:
        raise NotImplementedError


class FiberTranslationModel(BundleModel):
    """U(1) bundle with Kaluza-Klein metric in adapted coordinates."""

    n_total = 3
    free = (0, 1)
    pinned = (2,)

    def __init__(self, potential_quadratic=0.0, gauge_tilt=0.0):
        self.group = U1()
        self.v2 = float(potential_quadratic)
        self.tilt = float(gauge_tilt)

    def section(self, x):
        """Fiber coordinate of the gauge surface over base point x (zero unless tilted)."""
        return self.tilt * jnp.sin(x[..., 0]) * jnp.cos(x[..., 1])

    # pieces supplied by subclasses, each a function of the base point x (shape (2,))
    def base_metric(self, x):
        raise NotImplementedError

    def connection(self, x):
        return jnp.zeros(2)

    def fiber_length(self, x):
        return jnp.ones(())

    def metric(self, Q, chart=0):
        x = Q[:2]
        h = self.base_metric(x)
        A = self.connection(x)
        f2 = self.fiber_length(x) ** 2
        top = jnp.concatenate([h + f2 * jnp.outer(A, A), (f2 * A)[:, None]], axis=1)
        bot = jnp.concatenate([f2 * A, f2[None]])[None, :]
        return jnp.concatenate([top, bot], axis=0)

    def killing(self, Q, chart=0):
        return jnp.array([[0.0], [0.0], [1.0]]) + 0.0 * Q[:, None]

    def gauge(self, Q, chart=0):
        return Q[2:3] - self.section(Q[:2])

    def action(self, Q, a, chart=0):
        return Q + jnp.concatenate([jnp.zeros(2), jnp.atleast_1d(a)])

    def potential(self, Q, chart=0):
        return -self.v2 * jnp.sum(self.base_offset(Q[:2]) ** 2)

    def base_offset(self, x):
        return x

    def project(self, Q, chart=0):
        Q = jnp.asarray(Q)
        s = self.section(Q[..., :2])
        a = Q[..., 2:3] - s[..., None]
        return Q.at[..., 2].set(s), a


class FlatTrivial(FiberTranslationModel):
    """R^2 x U(1) with the product metric on a periodic box of side L."""

    name = "flat"

    def __init__(self, box=20.0, potential_quadratic=0.0, gauge_tilt=0.0):
        super().__init__(potential_quadratic, gauge_tilt)
        self.box = float(box)

    def base_metric(self, x):
        return jnp.eye(2) + 0.0 * x[0]

    def normalize(self, chart, Q):
        L = self.box
        x = jnp.mod(Q[..., :2] + L / 2, L) - L / 2
        phi = jnp.mod(Q[..., 2:3] + jnp.pi, 2 * jnp.pi) - jnp.pi
        return chart, jnp.concatenate([x, phi], -1), jnp.zeros(Q.shape[:-1] + (1,))

    def embed(self, chart, Q):
        return jnp.asarray(Q)

    def random_sigma_points(self, n, rng):
        x = rng.uniform(-self.box / 2, self.box / 2, size=(n, 2))
        return np.zeros(n, dtype=int), np.concatenate([x, np.asarray(self.section(x))[:, None]], 1)

    def descriptor(self):
        z = {k: 0.0 for k in ("R_P", "HR", "R_G", "F2", "jnorm2", "Jtilde")}
        return ModelDescriptor("flat", 3, 1, 1, f"periodic box side {self.box}",
                               {"metric": True}, z)


class Warped(FiberTranslationModel):
    """Warped product T^2 x_f U(1), metric dx^2 + dy^2 + f(x,y)^2 dphi^2.

    The orbits have varying length, so the mean-curvature vector j_II and
    the reduction Jacobian are non-trivial.  Period of the base torus: 2 pi.
    """

    name = "warped"

    def __init__(self, eps=0.3, potential_quadratic=0.0, gauge_tilt=0.0):
        super().__init__(potential_quadratic, gauge_tilt)
        self.eps = float(eps)
        self.box = 2 * np.pi

    def base_metric(self, x):
        return jnp.eye(2) + 0.0 * x[0]

    def fiber_length(self, x):
        return 1.0 + self.eps * jnp.cos(x[0]) * jnp.cos(x[1])

    def base_offset(self, x):
        return jnp.sin(x)

    def normalize(self, chart, Q):
        L = self.box
        x = jnp.mod(Q[..., :2] + L / 2, L) - L / 2
        phi = jnp.mod(Q[..., 2:3] + jnp.pi, 2 * jnp.pi) - jnp.pi
        return chart, jnp.concatenate([x, phi], -1), jnp.zeros(Q.shape[:-1] + (1,))

    def embed(self, chart, Q):
        return jnp.asarray(Q)

    def random_sigma_points(self, n, rng):
        x = rng.uniform(-np.pi, np.pi, size=(n, 2))
        return np.zeros(n, dtype=int), np.concatenate([x, np.asarray(self.section(x))[:, None]], 1)

    def jtilde_exact(self, x):
        """Closed form 4 (Lap sqrt f)/sqrt f = 2 Lap f/f - |grad f|^2/f^2."""
        x = np.asarray(x)
        e = self.eps
        f = 1 + e * np.cos(x[..., 0]) * np.cos(x[..., 1])
        lap = -2 * e * np.cos(x[..., 0]) * np.cos(x[..., 1])
        g2 = e**2 * (np.sin(x[..., 0]) ** 2 * np.cos(x[..., 1]) ** 2
                     + np.cos(x[..., 0]) ** 2 * np.sin(x[..., 1]) ** 2)
        return 2 * lap / f - g2 / f**2

    def descriptor(self):
        return ModelDescriptor("warped", 3, 1, 1, "periodic base torus, period 2 pi",
                               {"metric": True}, {"F2": 0.0, "HR": 0.0, "R_G": 0.0})


class Hopf(FiberTranslationModel):
    """S^3 of radius r with the Hopf U(1) action, base S^2(r/2).

    Chart 0: (z1, z2) = r e^{i phi} (1, w) / sqrt(1 + |w|^2),
    chart 1: (z1, z2) = r e^{i phi} (w, 1) / sqrt(1 + |w|^2), w = x^1 + i x^2.
    A chart is left when |w| > switch_radius; the new coordinates are
    w' = 1/w and phi' = phi + arg w.
    """

    name = "hopf"

    def __init__(self, radius=1.0, switch_radius=2.0, potential_quadratic=0.0, gauge_tilt=0.0):
        super().__init__(potential_quadratic, gauge_tilt)
        self.r = float(radius)
        self.switch_radius = float(switch_radius)
        self.n_charts = 2

    def base_metric(self, x):
        rho2 = jnp.sum(x * x)
        return self.r**2 / (1 + rho2) ** 2 * jnp.eye(2)

    def connection(self, x):
        return jnp.stack([-x[1], x[0]]) / (1 + jnp.sum(x * x))

    def fiber_length(self, x):
        return self.r + 0.0 * x[0]

    def base_offset(self, x):
        # height of the base point on S^2: invariant under the action
        rho2 = jnp.sum(x * x)
        return jnp.atleast_1d((1 - rho2) / (1 + rho2))

    def switch_chart(self, chart, Q):
        """Coordinates of the same point in the other chart: ``(chart', Q', beta)``."""
        return self._switch(chart, Q, jnp.ones(jnp.shape(Q)[:-1], dtype=bool))

    def normalize(self, chart, Q):
        u, v = Q[..., 0], Q[..., 1]
        return self._switch(chart, Q, u * u + v * v > self.switch_radius**2)

    def _switch(self, chart, Q, out):
        u, v = Q[..., 0], Q[..., 1]
        rho2 = u * u + v * v
        safe = jnp.where(out, rho2, 1.0)
        arg = jnp.where(out, jnp.arctan2(v, u), 0.0)
        nu = jnp.where(out, u / safe, u)
        nv = jnp.where(out, -v / safe, v)
        phi = Q[..., 2] + arg
        # old section point = new section point * beta
        beta = arg + jnp.where(out, self.section(Q[..., :2]) - self.section(jnp.stack([nu, nv], -1)), 0.0)
        phi = jnp.mod(phi + jnp.pi, 2 * jnp.pi) - jnp.pi
        chart = jnp.where(out, 1 - chart, chart)
        return chart, jnp.stack([nu, nv, phi], -1), beta[..., None]

    def embed(self, chart, Q):
        """Complex coordinates (z1, z2) of the point on S^3."""
        Q = jnp.asarray(Q)
        w = Q[..., 0] + 1j * Q[..., 1]
        s = self.r * jnp.exp(1j * Q[..., 2]) / jnp.sqrt(1 + jnp.abs(w) ** 2)
        chart = jnp.asarray(chart)
        z1 = jnp.where(chart == 0, s, s * w)
        z2 = jnp.where(chart == 0, s * w, s)
        return jnp.stack([z1, z2], -1)

    def chart_from_embedding(self, z):
        """Chart point with |w| <= 1 for complex coordinates z of shape (..., 2)."""
        z = np.asarray(z)
        z1, z2 = z[..., 0], z[..., 1]
        use0 = np.abs(z1) >= np.abs(z2)
        w = np.where(use0, z2 / np.where(use0, z1, 1), z1 / np.where(use0, 1, z2))
        base = np.where(use0, z1, z2)
        phi = np.angle(base)
        Q = np.stack([w.real, w.imag, phi], -1)
        return np.where(use0, 0, 1), Q

    def random_sigma_points(self, n, rng):
        z = rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2))
        z /= np.linalg.norm(z, axis=-1, keepdims=True)
        chart, Q = self.chart_from_embedding(z * self.r)
        Q[:, 2] = np.asarray(self.section(Q[:, :2]))
        return chart, Q

    def descriptor(self):
        r2 = self.r**2
        # curvature scalars in the sign convention used by geometry.py
        return ModelDescriptor(
            "hopf", 3, 1, 2, f"two stereographic charts, switch at |w| > {self.switch_radius}",
            {"metric": True},
            {"R_P": -6 / r2, "HR": -8 / r2, "R_G": 0.0, "F2": 8 / r2, "jnorm2": 0.0,
             "Jtilde": 0.0},
        )


class FileModel(FiberTranslationModel):
    """Fiber-translation model read from a JSON table of trigonometric terms.

    Schema::

        {"name": str, "period": L,
         "base_metric": {"xx": terms, "xy": terms, "yy": terms},
         "connection": {"x": terms, "y": terms},
         "fiber_length": terms}

    where ``terms`` is a list of ``{"coef": c, "kx": i, "ky": j, "kind": "cos"|"sin"}``
    meaning ``c * cos(2 pi (i x + j y)/L)`` (or ``sin``).  Missing entries are
    zero, except ``xx``/``yy``/``fiber_length`` which default to 1.
    """

    _KEYS = {"name", "period", "base_metric", "connection", "fiber_length", "potential_quadratic"}

    def __init__(self, spec: dict):
        unknown = set(spec) - self._KEYS
        if unknown:
            raise ConfigError(f"unknown model-file key(s): {sorted(unknown)}")
        super().__init__(spec.get("potential_quadratic", 0.0))
        self.name = spec.get("name", "file")
        self.box = float(spec.get("period", 2 * np.pi))
        bm = spec.get("base_metric", {})
        cn = spec.get("connection", {})
        self._h = {k: self._parse(bm.get(k), 1.0 if k != "xy" else 0.0) for k in ("xx", "xy", "yy")}
        self._A = [self._parse(cn.get(k), 0.0) for k in ("x", "y")]
        self._f = self._parse(spec.get("fiber_length"), 1.0)

    @classmethod
    def from_path(cls, path):
        return cls(json.loads(Path(path).read_text()))

    @staticmethod
    def _parse(terms, default):
        if terms is None:
            return [(default, 0, 0, "cos")]
        out = []
        for t in terms:
            kind = t.get("kind", "cos")
            if kind not in ("cos", "sin"):
                raise ConfigError(f"bad term kind {kind!r}")
            out.append((float(t["coef"]), int(t.get("kx", 0)), int(t.get("ky", 0)), kind))
        return out

    def _eval(self, terms, x):
        k = 2 * jnp.pi / self.box
        val = 0.0 * x[0]
        for c, i, j, kind in terms:
            arg = k * (i * x[0] + j * x[1])
            val = val + c * (jnp.cos(arg) if kind == "cos" else jnp.sin(arg))
        return val

    def base_metric(self, x):
        xx, xy, yy = (self._eval(self._h[k], x) for k in ("xx", "xy", "yy"))
        return jnp.stack([jnp.stack([xx, xy]), jnp.stack([xy, yy])])

    def connection(self, x):
        return jnp.stack([self._eval(t, x) for t in self._A])

    def fiber_length(self, x):
        return self._eval(self._f, x)

    def normalize(self, chart, Q):
        L = self.box
        x = jnp.mod(Q[..., :2] + L / 2, L) - L / 2
        phi = jnp.mod(Q[..., 2:3] + jnp.pi, 2 * jnp.pi) - jnp.pi
        return chart, jnp.concatenate([x, phi], -1), jnp.zeros(Q.shape[:-1] + (1,))

    def embed(self, chart, Q):
        return jnp.asarray(Q)

    def random_sigma_points(self, n, rng):
        x = rng.uniform(-self.box / 2, self.box / 2, size=(n, 2))
        return np.zeros(n, dtype=int), np.concatenate([x, np.asarray(self.section(x))[:, None]], 1)

    def descriptor(self):
        return ModelDescriptor(self.name, 3, 1, 1, f"periodic box {self.box}", {"metric": False}, {})


def make_model(name: str, **params) -> BundleModel:
    """Build a model by name: ``flat``, ``hopf``, ``warped`` or ``file`` (``path=``)."""
    key = name.lower()
    if key == "flat":
        return FlatTrivial(**params)
    if key == "hopf":
        return Hopf(**params)
    if key == "warped":
        return Warped(**params)
    if key == "file":
        if "path" in params:
            return FileModel.from_path(params["path"])
        if "spec" in params:
            return FileModel(params["spec"])
        raise ConfigError("file model needs path= or spec=")
    raise UnknownModel(f"unknown model {name!r}")
