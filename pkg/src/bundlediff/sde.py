"""Euler-Maruyama integration of the bundle diffusions.

Three processes are supported:

* ``original``: the diffusion on the total space, ``dQ = mu^2 kappa b dt + mu sqrt(kappa) X dW``
  with ``X X^T = G^{-1}``;
* ``sigma_full``: the process on the gauge surface with both mean-curvature drifts;
* ``sigma_reduced``: the same without the orbit mean-curvature term ``j_II``.

All steps are Ito (coefficients at the start of the step).  Noise is counter
based: the increment of path ``p`` at step ``k`` depends only on
``(seed, p, k)``, so results do not depend on chunking or thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import jax
import jax.numpy as jnp
import numpy as np

from . import geometry
from .errors import ChartExit, ConfigError, ProjectionFailure

VARIANTS = ("original", "sigma_full", "sigma_reduced")
CHUNK = 8192


def thread_count() -> int:
    """Worker cap from BUNDLEDIFF_THREADS (default 1)."""
    raw = os.environ.get("BUNDLEDIFF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"BUNDLEDIFF_THREADS must be an integer, got {raw!r}") from exc
    return max(1, n)


# --- noise ----------------------------------------------------------------

def _path_keys(seed, paths):
    base = jax.random.PRNGKey(seed)
    return jax.vmap(lambda p: jax.random.fold_in(base, p))(paths)


@jax.jit
def _normals(keys, step, dim_proto):
    f = lambda k: jax.random.normal(jax.random.fold_in(k, step), dim_proto.shape)
    return jax.vmap(f)(keys)


def increments(seed, step, paths, dim, dt):
    """Wiener increments (n_paths, dim) for the given step and path indices."""
    keys = _path_keys(int(seed), jnp.asarray(paths, dtype=jnp.uint32))
    return np.sqrt(dt) * np.asarray(_normals(keys, jnp.uint32(step), jnp.zeros(dim)))


@dataclass
class NoiseStream:
    """Single-path view of the counter-based generator."""

    seed: int
    path_index: int
    counter: int = 0

    def next(self, dim, dt=1.0):
        dw = increments(self.seed, self.counter, [self.path_index], dim, dt)[0]
        self.counter += 1
        return dw


# --- configuration ----------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    mu2: float = 1.0
    kappa: float = 1.0
    mass: float = 1.0
    t_a: float = 0.0
    t_b: float = 0.5
    n_steps: int = 200
    n_paths: int = 10000
    seed: int = 0
    variant: str = "sigma_full"
    include_group: bool = False
    derivatives: str = "analytic"
    chart_start: int = 0
    q_start: tuple | None = None
    a_start: tuple | None = None

    def __post_init__(self):
        if not self.t_b > self.t_a:
            raise ConfigError("t_b must exceed t_a")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps must be >= 1")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be >= 1")
        if not (np.isreal(self.kappa) and self.kappa > 0):
            raise ConfigError("kappa must be real and positive")
        if self.mu2 <= 0 or self.mass <= 0:
            raise ConfigError("mu2 and mass must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.derivatives not in ("analytic", "fd"):
            raise ConfigError("derivatives must be 'analytic' or 'fd'")

    @property
    def dt(self):
        return (self.t_b - self.t_a) / self.n_steps

    @property
    def sigma(self):
        return float(np.sqrt(self.mu2 * self.kappa))

    @property
    def diff(self):
        """mu^2 kappa, the diffusion constant."""
        return self.mu2 * self.kappa


def start_point(model, config: SimConfig):
    """Chart index and chart point at t_a (default: section over the chart origin)."""
    if config.q_start is None:
        Q = np.zeros(model.n_total)
    else:
        Q = np.asarray(config.q_start, dtype=float)
    if config.variant != "original" or config.q_start is None:
        Q = np.asarray(model.project(jnp.asarray(Q), config.chart_start)[0])
    return int(config.chart_start), Q


# --- single steps -------------------------------------------------------------

def _original_coefficients(model, chart, Q):
    G = model.metric(Q, chart)
    dG = jax.jacfwd(lambda q: model.metric(q, chart))(Q)
    Ginv = geometry.small_inv(G)
    b = 0.5 * (-jnp.einsum("ac,cdb,db->a", Ginv, dG, Ginv)
               + 0.5 * jnp.einsum("ab,cd,dcb->a", Ginv, Ginv, dG))
    return b, jnp.linalg.cholesky(Ginv)


def sigma_drift(geom, include_jII=True):
    """Geometric drift on the gauge surface (to be multiplied by mu^2 kappa)."""
    d = -0.5 * jnp.einsum("...cb,...acb->...a", geom["h"], geom["christoffel_H"]) + geom["jI"]
    if include_jII:
        d = d + geom["jII"]
    return d


def sigma_diffusion(geom):
    """N Xtilde, the noise matrix on the gauge surface (times mu sqrt(kappa))."""
    return jnp.einsum("...ac,...cm->...am", geom["N"], geom["Xtilde"])


def group_increment(group, geom, a, dt, dW, diff):
    """Ito increment of the group coordinate at fixed start-of-step coefficients."""
    a = jnp.asarray(a, dtype=float)
    vb = group.vbar(a)
    dvb = jax.jacfwd(group.vbar)(a) if group.n_group > 1 else jnp.zeros(vb.shape + (1,))
    Lam, Ginv = geom["Lam"], geom["Ginv"]
    LGL = Lam @ Ginv @ Lam.T
    lin = geom["lin_F1"]
    drift = -0.5 * diff * (vb @ lin - jnp.einsum("eb,ne,abn->a", LGL, vb, dvb))
    noise = jnp.sqrt(diff) * vb @ Lam @ geom["Xtilde"] @ dW
    return drift * dt + noise


def step_original(model, Q, dt, dW, chart=0, mu2=1.0, kappa=1.0):
    """One Euler step of the total-space process; returns (chart, Q')."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Q = jnp.asarray(Q, dtype=float)
    b, X = _original_coefficients(model, chart, Q)
    Qn = Q + mu2 * kappa * b * dt + np.sqrt(mu2 * kappa) * X @ jnp.asarray(dW)
    if not bool(jnp.all(jnp.isfinite(Qn))):
        raise ChartExit("step left the chart")
    c, Qn, _ = model.normalize(jnp.asarray(chart), Qn)
    return int(c), np.asarray(Qn)


def step_sigma(model, Q, dt, dW, include_jII=True, chart=0, mu2=1.0, kappa=1.0,
               derivatives="analytic", constraint_tol=1e-10):
    """One Euler step on the gauge surface followed by re-projection; returns (chart, Q', beta)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    rep = geometry.geometry_report(model, Q, chart, derivatives, level="first")
    geom = {k: rep[k] for k in ("h", "christoffel_H", "jI", "jII", "N", "Xtilde")}
    drift = np.asarray(sigma_drift(geom, include_jII))
    Qn = np.asarray(Q) + mu2 * kappa * drift * dt + np.sqrt(mu2 * kappa) * np.asarray(sigma_diffusion(geom)) @ dW
    c, Qn, beta = model.normalize(jnp.asarray(chart), jnp.asarray(Qn))
    Qn = np.asarray(model.project(Qn, c)[0])
    if abs(float(model.gauge(jnp.asarray(Qn), c)[0])) > constraint_tol:
        raise ProjectionFailure("re-projection did not reach the gauge surface")
    return int(c), Qn, np.asarray(beta)


def step_group(model, Q, a, dt, dW, chart=0, mu2=1.0, kappa=1.0, derivatives="analytic"):
    """Group-coordinate step sharing the noise ``dW`` of the paired :func:`step_sigma` call."""
    if dt == 0:
        return np.asarray(a, dtype=float)
    grp = model.group
    grp.check_chart(a)
    rep = geometry.geometry_report(model, Q, chart, derivatives, level="first")
    geom = {k: jnp.asarray(rep[k]) for k in ("Ginv", "lin_F1", "Xtilde")}
    geom["Lam"] = jnp.asarray(rep.Lambda)
    da = group_increment(grp, geom, a, dt, jnp.asarray(dW), mu2 * kappa)
    return grp.normalize(np.asarray(a) + np.asarray(da))


# --- ensembles ------------------------------------------------------------------

@dataclass
class Ensemble:
    """Final state of a path ensemble (arrays indexed by path)."""

    config: SimConfig
    chart: np.ndarray
    Q: np.ndarray
    a: np.ndarray | None
    acc: dict = field(default_factory=dict)
    max_constraint: float = 0.0
    n_chart_switches: int = 0

    def summary(self) -> dict:
        out = {
            "n_paths": int(self.Q.shape[0]),
            "mean": self.Q.mean(0).tolist(),
            "cov": np.atleast_2d(np.cov(self.Q.T)).tolist(),
            "stderr_mean": (self.Q.std(0, ddof=1) / np.sqrt(self.Q.shape[0])).tolist(),
            "max_constraint": self.max_constraint,
            "n_chart_switches": self.n_chart_switches,
        }
        if self.a is not None:
            out["a_mean"] = self.a.mean(0).tolist()
        return out


@lru_cache(maxsize=None)
def _step_kernel(model, variant, derivatives, level, accumulator, include_group):
    """Jitted one-step update for a chunk of paths."""
    c = jnp.asarray(model.group.structure_constants)
    body = geometry._full if level == "full" else geometry._first
    grp = model.group

    def one(chart, Q, a, acc, dW, dt, diff):
        if variant == "original":
            b, X = _original_coefficients(model, chart, Q)
            Qn = Q + diff * b * dt + jnp.sqrt(diff) * X @ dW
            if accumulator is not None:
                acc = accumulator.update_original(acc, Q, chart, dt)
            chart_n, Qn, beta = model.normalize(chart, Qn)
            return chart_n, Qn, a, acc, beta, jnp.zeros(())
        geom = body(model, chart, derivatives, c, Q)
        drift = sigma_drift(geom, include_jII=(variant == "sigma_full"))
        Qn = Q + diff * drift * dt + jnp.sqrt(diff) * sigma_diffusion(geom) @ dW
        if include_group:
            a = a + group_increment(grp, geom, a, dt, dW, diff)
        if accumulator is not None:
            acc = accumulator.update(acc, geom, dW, dt, Q, chart)
        chart_n, Qn, beta = model.normalize(chart, Qn)
        Qn, _ = model.project(Qn, chart_n)
        if accumulator is not None:
            acc = accumulator.regauge(acc, beta)
        if include_group:
            a = a + beta  # s_old = s_new * beta (abelian composition)
        resid = jnp.abs(model.gauge(Qn, chart_n)[0])
        return chart_n, Qn, a, acc, beta, resid

    vm = jax.vmap(one, in_axes=(0, 0, 0, 0, 0, None, None))
    return jax.jit(vm)


def _initial_chunk(model, config, n, accumulator, start_state):
    if start_state is not None:
        return start_state
    chart, Q = start_point(model, config)
    a0 = np.zeros(model.n_group) if config.a_start is None else np.asarray(config.a_start, float)
    st = {
        "chart": jnp.full((n,), chart, dtype=jnp.int32),
        "Q": jnp.tile(jnp.asarray(Q), (n, 1)),
        "a": jnp.tile(jnp.asarray(a0), (n, 1)),
        "acc": accumulator.init(n) if accumulator is not None else jnp.zeros((n,)),
    }
    return st


def _run_chunk(model, config, lo, hi, accumulator, hook, start_state, step_offset, n_steps, level):
    n = hi - lo
    pad = CHUNK - n if n < CHUNK else 0
    paths = np.arange(lo, hi + pad, dtype=np.int64)
    st = _initial_chunk(model, config, n + pad, accumulator, None)
    if start_state is not None:
        st = jax.tree_util.tree_map(lambda x: _pad(jnp.asarray(x)[lo:hi], pad), start_state)
    kern = _step_kernel(model, config.variant, config.derivatives, level, accumulator,
                        config.include_group and config.variant != "original")
    dt = config.dt
    if config.include_group and model.group.n_group > 1:
        raise ConfigError("ensemble group process is implemented for abelian groups only")
    max_res = 0.0
    switches = np.zeros(n + pad, dtype=np.int64)
    keys = _path_keys(int(config.seed), jnp.asarray(paths, dtype=jnp.uint32))
    proto = jnp.zeros(model.n_total)
    for k in range(step_offset, step_offset + n_steps):
        dW = np.sqrt(dt) * _normals(keys, jnp.uint32(k), proto)
        old = st["chart"]
        chart, Q, a, acc, beta, resid = kern(st["chart"], st["Q"], st["a"], st["acc"], dW, dt, config.diff)
        switches += np.asarray(chart != old)
        st = {"chart": chart, "Q": Q, "a": a, "acc": acc}
        if config.variant != "original":
            max_res = max(max_res, float(jnp.max(resid[:n])))
        if hook is not None:
            hook(config.t_a + (k + 1) * dt, jax.tree_util.tree_map(lambda x: x[:n], st), dt,
                 np.asarray(dW)[:n])
    st = jax.tree_util.tree_map(lambda x: np.asarray(x)[:n], st)
    if not np.all(np.isfinite(st["Q"])):
        raise ChartExit("non-finite state: a path left its chart")
    return st, max_res, int(switches[:n].sum())


def _pad(x, pad):
    if pad == 0:
        return x
    return jnp.concatenate([x, jnp.repeat(x[-1:], pad, axis=0)], 0)


def simulate_paths(model, config: SimConfig, per_step_hook=None, accumulator=None,
                   start_state=None, step_offset=0, n_steps=None, level=None) -> Ensemble:
    """Simulate ``config.n_paths`` independent paths and return the final ensemble.

    ``accumulator`` (see :mod:`bundlediff.holonomy`) is updated inside the
    compiled step with the start-of-step geometry and the same noise as the
    position.  ``per_step_hook(t, state, dt, dW)`` is a plain Python callback
    invoked once per step and chunk.  ``start_state``/``step_offset`` continue
    a previous run, which makes splitting a time interval exact.
    """
    n_steps = config.n_steps if n_steps is None else int(n_steps)
    if level is None:
        level = accumulator.level if accumulator is not None else "first"
    bounds = [(lo, min(lo + CHUNK, config.n_paths)) for lo in range(0, config.n_paths, CHUNK)]
    job = lambda b: _run_chunk(model, config, b[0], b[1], accumulator, per_step_hook,
                               start_state, step_offset, n_steps, level)
    workers = min(thread_count(), len(bounds))
    if workers > 1 and per_step_hook is None:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    # merge in path order, independent of scheduling
    st = jax.tree_util.tree_map(lambda *xs: np.concatenate(xs, 0), *[p[0] for p in parts])
    if config.include_group:
        st["a"] = model.group.normalize(st["a"])
    return Ensemble(
        config=config,
        chart=st["chart"],
        Q=st["Q"],
        a=st["a"] if config.include_group else None,
        acc=st["acc"] if accumulator is not None else {},
        max_constraint=max(p[1] for p in parts),
        n_chart_switches=sum(p[2] for p in parts),
    )


def ensemble_state(ens: Ensemble) -> dict:
    """State dict that can be fed back as ``start_state``."""
    return {"chart": ens.chart, "Q": ens.Q,
            "a": ens.a if ens.a is not None else np.zeros((ens.Q.shape[0], 1)),
            "acc": ens.acc if ens.acc is not None else np.zeros(ens.Q.shape[0])}


def with_(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
