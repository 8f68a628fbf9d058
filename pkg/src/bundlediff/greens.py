"""Monte-Carlo estimators for both sides of the reduction identity.

Everything is in smeared form: kernels are applied to smooth initial data and
the resulting numbers are compared, never pointwise kernel values.

Conventions.  An equivariant vector function on the total space satisfies
``psi(p g) = D(g)^T psi(p)``; its restriction to the gauge surface is the
section that the reduced kernels act on.  From an arbitrary base function
``phi0`` on the total space the quadrature projection

    Phi[p, q](P) = sum_i w_i D_qp(theta_i) phi0(P theta_i^{-1})

has equivariant columns, and the reduction identity states

    E_reduced[(gamma_b/gamma_a)^{1/4} e^{logW} M Phi(xi_b)] = E_total[Phi(eta_b)].
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np

from . import holonomy as hol
from . import sde


@dataclass(frozen=True)
class SemigroupEstimate:
    value: np.ndarray
    stderr: np.ndarray
    n_paths: int
    config: dict = field(default_factory=dict)

    def within(self, target, n_sigma=3.0, floor=1e-12):
        """Entrywise |value - target| <= n_sigma * stderr (+ floor)."""
        return bool(np.all(np.abs(self.value - target) <= n_sigma * self.stderr + floor))


@dataclass(frozen=True)
class TestSection:
    """Section of the associated bundle given by an evaluator on chart points.

    ``evaluator(chart, Q)`` returns (n, d) or (n, d, k) complex arrays.
    """

    evaluator: object
    dim: int
    meta: dict = field(default_factory=dict)

    def __call__(self, chart, Q):
        return np.asarray(self.evaluator(np.asarray(chart), np.asarray(Q)))


def section_from_equivariant(model, func, dim, **meta) -> TestSection:
    """Restrict an equivariant function of the embedding coordinates to the gauge surface."""
    def ev(chart, Q):
        return np.asarray(func(np.asarray(model.embed(jnp.asarray(chart), jnp.asarray(Q)))))
    return TestSection(ev, dim, dict(meta))


def _config_echo(config):
    d = dict(config.__dict__)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def _mean_stderr(samples):
    n = samples.shape[0]
    mean = samples.mean(0)
    se = samples.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(mean.shape)
    return mean, se


def _as_columns(vals, d):
    vals = np.asarray(vals)
    return (vals[..., None], True) if vals.ndim == 2 else (vals, False)


def reduced_samples(model, irrep, kernel, psi0, config, mode="euler", jtilde="auto", jacobian=None):
    """Per-path weighted samples ``w M psi(end)`` for a reduced kernel, shape (n, d[, k])."""
    variant = hol.KernelVariant(kernel, mode)
    cfg = replace(config, variant=variant.process)
    acc = hol.HolonomyAccumulator(model, irrep, variant, cfg.mu2, cfg.kappa, cfg.mass, jtilde=jtilde)
    ens = sde.simulate_paths(model, cfg, accumulator=acc)
    vals, squeeze = _as_columns(psi0(ens.chart, ens.Q), irrep.dim)
    w = np.exp(ens.acc["logW"])
    if jacobian is None:
        jacobian = kernel != "F1"
    if jacobian:
        c0, q0 = sde.start_point(model, cfg)
        ga = hol.orbit_det(model, c0, q0[None])
        w = w * hol.jacobian_prefactor(ga, hol.orbit_det(model, ens.chart, ens.Q))
    hol.check_overflow(ens.acc["M"])
    s = w[:, None, None] * np.einsum("nij,njk->nik", ens.acc["M"], vals)
    return (s[..., 0] if squeeze else s), ens


def semigroup_apply_mc(model, irrep, kernel, psi0: TestSection, config, mode="euler",
                       jtilde="auto", duration=None) -> SemigroupEstimate:
    """Estimate ``(U(t_b, t_a) psi0)(Q*_a)`` with the chosen reduced kernel.

    ``duration=0`` returns ``psi0(Q*_a)`` exactly.
    """
    if duration is not None and duration == 0:
        c0, q0 = sde.start_point(model, config)
        v = psi0(np.array([c0]), q0[None])[0]
        return SemigroupEstimate(v, np.zeros(v.shape), 0, _config_echo(config))
    s, _ = reduced_samples(model, irrep, kernel, psi0, config, mode, jtilde)
    mean, se = _mean_stderr(s)
    return SemigroupEstimate(mean, se, s.shape[0], _config_echo(config))


def total_space_samples(model, phi0, config):
    """Samples ``phi0(embed(eta_b)) exp(int V)`` of the total-space process, plus the ensemble."""
    cfg = replace(config, variant="original")
    acc = hol.PotentialAccumulator(model, cfg.mu2, cfg.kappa, cfg.mass)
    ens = sde.simulate_paths(model, cfg, accumulator=acc)
    return ens, np.exp(ens.acc["logW"])


def total_space_apply_mc(model, phi0, config, duration=None) -> SemigroupEstimate:
    """Estimate ``E[phi0(eta_b) exp(int V/(D m))]`` from ``p_a`` (``config.q_start``).

    ``phi0`` maps embedding coordinates (n, ...) to (n,) or (n, k) values.
    """
    if duration is not None and duration == 0:
        c0, q0 = sde.start_point(model, replace(config, variant="original"))
        v = np.asarray(phi0(np.asarray(model.embed(c0, jnp.asarray(q0)))[None]))[0]
        return SemigroupEstimate(v, np.zeros(np.shape(v)), 0, _config_echo(config))
    ens, w = total_space_samples(model, phi0, config)
    vals = np.asarray(phi0(np.asarray(model.embed(jnp.asarray(ens.chart), jnp.asarray(ens.Q)))))
    s = vals * w.reshape((-1,) + (1,) * (vals.ndim - 1))
    mean, se = _mean_stderr(s)
    return SemigroupEstimate(mean, se, s.shape[0], _config_echo(config))


def _translate(model, chart, Q, theta_inv):
    """Chart points of ``P theta^{-1}`` for all paths, shape (n, N_P)."""
    f = jax.vmap(lambda q, c: model.action(q, jnp.asarray(theta_inv), c))
    return np.asarray(f(jnp.asarray(Q), jnp.asarray(chart)))


def projected_values(model, irrep, phi0, chart, Q, quad_order):
    """Phi[p, q] = sum_i w_i D_qp(theta_i) phi0(P theta_i^{-1}) at chart points, shape (n, d, d)."""
    grp = model.group
    nodes, weights = grp.haar_quadrature(quad_order)
    D = np.asarray(irrep.matrix(nodes))
    out = np.zeros((len(Q), irrep.dim, irrep.dim), dtype=complex)
    for th, w, Dm in zip(nodes, weights, D):
        Qs = _translate(model, chart, Q, grp.inverse(th))
        vals = np.asarray(phi0(np.asarray(model.embed(jnp.asarray(chart), jnp.asarray(Qs)))))
        out += w * vals[:, None, None] * Dm.T[None]
    return out


def group_average_rhs(model, irrep, phi0_base, config, quad_order=32) -> SemigroupEstimate:
    """Total-space side: E over eta of the D^lambda-projected base function (one ensemble, all nodes)."""
    ens, w = total_space_samples(model, phi0_base, config)
    vals = projected_values(model, irrep, phi0_base, ens.chart, ens.Q, quad_order)
    s = vals * w[:, None, None]
    mean, se = _mean_stderr(s)
    return SemigroupEstimate(mean, se, s.shape[0], _config_echo(config))


def reduced_lhs(model, irrep, phi0_base, config, quad_order=32, kernel="F2", mode="euler",
                jtilde="auto") -> SemigroupEstimate:
    """Reduced side applied to the projected section, with the Jacobian prefactor."""
    sec = TestSection(lambda c, q: projected_values(model, irrep, phi0_base, c, q, quad_order),
                      irrep.dim)
    s, _ = reduced_samples(model, irrep, kernel, sec, config, mode, jtilde)
    mean, se = _mean_stderr(s)
    return SemigroupEstimate(mean, se, s.shape[0], _config_echo(config))


def reduction_residual(model, irrep, phi0_base, config, quad_order=32, kernel="F2",
                       n_sigma=3.0, mode="euler", jtilde="auto", rhs_seed_offset=0) -> dict:
    """LHS - RHS of the smeared reduction identity with combined standard errors.

    With ``rhs_seed_offset = 0`` both sides share the noise (common random
    numbers); a nonzero offset makes the two sides independent.
    """
    lhs = reduced_lhs(model, irrep, phi0_base, config, quad_order, kernel, mode, jtilde)
    rhs = group_average_rhs(model, irrep, phi0_base,
                            replace(config, seed=config.seed + rhs_seed_offset), quad_order)
    res = lhs.value - rhs.value
    sig = np.sqrt(lhs.stderr**2 + rhs.stderr**2)
    ok = bool(np.all(np.abs(res) <= n_sigma * sig + 1e-12))
    return {"lhs": lhs, "rhs": rhs, "residual": res, "sigma": sig, "pass": ok,
            "max_ratio": float(np.max(np.abs(res) / np.maximum(sig, 1e-300)))}


def girsanov_residual(model, irrep, psi0: TestSection, config, n_sigma=3.0, mode="euler",
                      jtilde="auto") -> dict:
    """F1 weight on the full process vs factorized F2 weight on the reduced process.

    Both ensembles use the same seed, so the difference is estimated path by
    path (common random numbers).  The F2 side carries the Jacobian prefactor
    and the ``-D/8 Jtilde`` weight.
    """
    s1, _ = reduced_samples(model, irrep, "F1", psi0, config, mode, jtilde)
    s2, _ = reduced_samples(model, irrep, "F2", psi0, config, mode, jtilde)
    d = s1 - s2
    diff, se = _mean_stderr(d)
    m1, se1 = _mean_stderr(s1)
    m2, se2 = _mean_stderr(s2)
    floor = 1e-13 * max(1.0, float(np.max(np.abs(m1))))
    ok = bool(np.all(np.abs(diff) <= n_sigma * se + floor))
    return {"F1": SemigroupEstimate(m1, se1, len(s1)), "F2": SemigroupEstimate(m2, se2, len(s2)),
            "residual": diff, "sigma": se, "pass": ok,
            "max_ratio": float(np.max(np.abs(diff) / np.maximum(se, 1e-300))) if np.any(se > 0) else 0.0}


def histogram_kernel(ens, weights, coords=(0, 1), step_std=None, extent=None):
    """Weighted 2-D histogram of endpoint base coordinates (visualization only).

    Bin width is twice ``step_std`` (the one-step displacement standard
    deviation), defaulting to ``2 sqrt(mu^2 kappa dt)``.
    """
    cfg = ens.config
    if step_std is None:
        step_std = np.sqrt(cfg.mu2 * cfg.kappa * cfg.dt)
    x = ens.Q[:, coords[0]]
    y = ens.Q[:, coords[1]]
    if extent is None:
        extent = (x.min(), x.max(), y.min(), y.max())
    bw = 2 * step_std
    bx = np.arange(extent[0], extent[1] + bw, bw)
    by = np.arange(extent[2], extent[3] + bw, bw)
    H, ex, ey = np.histogram2d(x, y, bins=(bx, by), weights=np.real(weights))
    return H / (len(x) * bw * bw), ex, ey
