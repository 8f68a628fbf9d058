"""Verification suite: run configurations, verdicts and the canned checks.

Every check returns a :class:`Verdict` whose metrics are plain floats.  The
suite output is written as JSON with 17 significant digits; apart from the
top-level ``timestamp`` it depends only on the configuration, so repeated
runs (at any thread count) are byte-identical.
"""
from __future__ import annotations

import datetime
import json
import re
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import geometry, greens, group, models, pdecheck, sde
from .errors import ConfigError

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
SUITES = ("geometry", "operators", "girsanov", "reduction", "all")


@dataclass(frozen=True)
class RunConfig:
    """Settings of a verification run (JSON round-trippable)."""

    model: str = "hopf"
    model_params: dict = field(default_factory=dict)
    seed: int = 7
    n_paths: int = 20000
    n_steps: int = 100
    t_span: float = 0.5
    mu2: float = 1.0
    kappa: float = 1.0
    mass: float = 1.0
    lambdas: tuple = (0, 1)
    quad_order: int = 32
    n_points: int = 1000
    n_sections: int = 20
    n_sigma: float = 3.0
    inconclusive_rel_sigma: float = 0.25
    derivatives: str = "analytic"
    geometry_tol_analytic: float = 1e-10
    geometry_tol_fd: float = 1e-6
    operator_tol: float = 1e-8

    def __post_init__(self):
        if self.n_paths < 2 or self.n_steps < 1:
            raise ConfigError("need n_paths >= 2 and n_steps >= 1")
        if self.t_span <= 0 or self.mu2 <= 0 or self.kappa <= 0 or self.mass <= 0:
            raise ConfigError("t_span, mu2, kappa and mass must be positive")
        if self.derivatives not in ("analytic", "fd"):
            raise ConfigError("derivatives must be 'analytic' or 'fd'")
        if self.quad_order < 1:
            raise ConfigError("quad_order must be positive")
        object.__setattr__(self, "lambdas", tuple(int(x) for x in self.lambdas))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        for k, v in d.items():
            default = known[k].default
            if k == "model_params":
                ok = isinstance(v, dict)
            elif k == "lambdas":
                ok = isinstance(v, (list, tuple)) and all(isinstance(x, int) for x in v)
            elif isinstance(default, bool):
                ok = isinstance(v, bool)
            elif isinstance(default, int):
                ok = isinstance(v, int) and not isinstance(v, bool)
            elif isinstance(default, float):
                ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            else:
                ok = isinstance(v, str)
            if not ok:
                raise ConfigError(f"bad type for {k!r}: {type(v).__name__}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self):
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    def sim_config(self, **kw) -> sde.SimConfig:
        base = dict(mu2=self.mu2, kappa=self.kappa, mass=self.mass, t_a=0.0, t_b=self.t_span,
                    n_steps=self.n_steps, n_paths=self.n_paths, seed=self.seed,
                    derivatives=self.derivatives)
        base.update(kw)
        return sde.SimConfig(**base)

    def build_model(self):
        return models.make_model(self.model, **self.model_params)


@dataclass
class Verdict:
    name: str
    status: str
    metrics: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    note: str = ""

    @property
    def passed(self):
        return self.status == PASS

    def to_dict(self):
        return {"name": self.name, "status": self.status, "metrics": _clean(self.metrics),
                "tolerance": _clean(self.tolerance), "note": self.note}

    def line(self):
        return f"{self.status:<12} {self.name}"


def _clean(x):
    """Convert numpy scalars/arrays and complex numbers to JSON-friendly values."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return {"re": float(np.real(x)), "im": float(np.imag(x))}
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


_MARK = "@@num:"


def _fmt(x):
    if isinstance(x, dict):
        return {k: _fmt(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_fmt(v) for v in x]
    if isinstance(x, float):
        if not np.isfinite(x):
            return _MARK + json.dumps(x) + "@@"
        return _MARK + format(x, ".17g") + "@@"
    return x


def dumps(obj) -> str:
    """JSON text with every float written with 17 significant digits."""
    text = json.dumps(_fmt(_clean(obj)), indent=2, sort_keys=True)
    return re.sub(r'"' + _MARK + r'([^@]*)@@"', r"\1", text) + "\n"


def report(verdicts, config: RunConfig, timestamp=None) -> dict:
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    overall = (FAIL if any(v.status == FAIL for v in verdicts)
               else INCONCLUSIVE if any(v.status == INCONCLUSIVE for v in verdicts) else PASS)
    return {"timestamp": timestamp, "config": config.to_dict(), "overall": overall,
            "verdicts": [v.to_dict() for v in verdicts]}


def _status(ok, inconclusive=False):
    return PASS if ok else (INCONCLUSIVE if inconclusive else FAIL)


def _irrep(model, lam):
    return model.group.irrep(lam)


# --- test functions ---------------------------------------------------------------

def _embedding_function(model, lam):
    """Smooth equivariant function of the embedding coordinates for charge ``lam``."""
    if model.name == "hopf":
        def f(z):
            z1, z2 = z[..., 0], z[..., 1]
            q = z1 ** lam if lam >= 0 else np.conj(z1) ** (-lam)
            return (q * (1.0 + np.abs(z2) ** 2 + 0.5 * np.real(z1 * np.conj(z2))))[..., None]
    else:
        def f(z):
            x, y, phi = z[..., 0], z[..., 1], z[..., 2]
            return ((1.5 + np.cos(x) + 0.5 * np.sin(y)) * np.exp(1j * lam * phi))[..., None]
    return f


def default_test_section(model, lam):
    return greens.section_from_equivariant(model, _embedding_function(model, lam), 1, charge=lam)


def default_base_function(model):
    """Non-equivariant function on the total space for the smeared reduction identity."""
    if model.name == "hopf":
        return lambda z: (z[..., 0] * np.exp(-np.abs(z[..., 1]) ** 2) + 0.5 * np.conj(z[..., 1])
                          + 0.3 * np.abs(z[..., 0]) ** 2)
    return lambda z: ((1.5 + np.cos(z[..., 0]) + 0.5 * np.sin(z[..., 1]))
                      * (1.0 + np.cos(z[..., 2]) + 0.5 * np.sin(2 * z[..., 2])))


# --- geometry ------------------------------------------------------------------------

def check_geometry(cfg: RunConfig, model=None) -> list:
    """Projector identities, pseudoinverse contract and determinant factorization, both derivative schemes."""
    model = cfg.build_model() if model is None else model
    rng = np.random.default_rng(cfg.seed)
    chart, Q = model.random_sigma_points(cfg.n_points, rng)
    a = model.group.normalize(rng.uniform(-np.pi, np.pi, size=(cfg.n_points, model.n_group)))
    out = []
    for scheme, tol in (("analytic", cfg.geometry_tol_analytic), ("fd", cfg.geometry_tol_fd)):
        rep = geometry.geometry_report(model, Q, chart, scheme, level="first")
        res = geometry.projector_residuals(rep)
        res.update(geometry.metric_block_residuals(model, Q, a, chart, scheme, rep=rep))
        worst = max(res.values())
        out.append(Verdict(f"geometry/invariants/{model.name}/{scheme}", _status(worst < tol),
                           dict(res, max=worst), {"max": tol}))
    out.append(check_jtilde(cfg, model, chart, Q))
    return out


def check_jtilde(cfg, model, chart, Q) -> Verdict:
    """Jacobian integrand: constant models against the declared value, warped against its closed form."""
    rep = geometry.geometry_report(model, Q, chart, "analytic", level="full")
    jt = np.asarray(rep["Jtilde"])
    const = model.descriptor().constants
    m = {"mean": float(jt.mean()), "std": float(jt.std())}
    if "Jtilde" in const:
        m["declared"] = float(const["Jtilde"])
        m["max_dev"] = float(np.max(np.abs(jt - const["Jtilde"])))
        for key in ("R_P", "HR", "F2"):
            if key in const:
                m[f"{key}_dev"] = float(np.max(np.abs(np.asarray(rep[key]) - const[key])))
        worst = max(v for k, v in m.items() if k.endswith("dev"))
        return Verdict(f"geometry/jtilde/{model.name}", _status(worst < 1e-6), m, {"max_dev": 1e-6})
    if hasattr(model, "jtilde_exact"):
        ex = np.asarray(model.jtilde_exact(np.asarray(Q)[:, :2]))
        m["max_dev"] = float(np.max(np.abs(jt - ex)))
        return Verdict(f"geometry/jtilde/{model.name}", _status(m["max_dev"] < 1e-6), m,
                       {"max_dev": 1e-6})
    return Verdict(f"geometry/jtilde/{model.name}", PASS, m, {}, "no reference value")


# --- operators ------------------------------------------------------------------------

def check_operators(cfg: RunConfig, model=None) -> list:
    model = cfg.build_model() if model is None else model
    out = []
    for lam in cfg.lambdas:
        res = pdecheck.operator_identity_residual(
            model, _irrep(model, lam), n_points=50, n_sections=cfg.n_sections, mu2=cfg.mu2,
            kappa=cfg.kappa, derivatives="analytic", rng=np.random.default_rng(cfg.seed + lam))
        out.append(Verdict(f"operators/identity/{model.name}/lambda={lam}",
                           _status(res < cfg.operator_tol), {"residual": res},
                           {"residual": cfg.operator_tol}))
    return out


# --- Monte Carlo checks -----------------------------------------------------------------

def _noisy(value, sigma, rel):
    scale = float(np.max(np.abs(value)))
    return float(np.max(sigma)) > rel * max(scale, 1e-12)


def check_girsanov(cfg: RunConfig, model=None) -> list:
    """F1 on the full process against F2 on the reduced process, common random numbers."""
    model = cfg.build_model() if model is None else model
    out = []
    for lam in cfg.lambdas:
        ir = _irrep(model, lam)
        r = greens.girsanov_residual(model, ir, default_test_section(model, lam), cfg.sim_config(),
                                     n_sigma=cfg.n_sigma)
        m = {"F1": r["F1"].value, "F2": r["F2"].value, "residual": r["residual"],
             "sigma": r["sigma"], "max_ratio": r["max_ratio"]}
        noisy = _noisy(r["F1"].value, r["F1"].stderr, cfg.inconclusive_rel_sigma)
        st = _status(r["pass"]) if not (noisy and not r["pass"]) else INCONCLUSIVE
        out.append(Verdict(f"girsanov/{model.name}/lambda={lam}", st, m, {"n_sigma": cfg.n_sigma}))
    return out


def check_reduction(cfg: RunConfig, model=None) -> list:
    """Smeared reduction identity: reduced F2 kernel against the group-projected total-space average."""
    model = cfg.build_model() if model is None else model
    phi0 = default_base_function(model)
    sim = cfg.sim_config(q_start=(0.3, -0.2, 0.0))
    out = []
    for lam in cfg.lambdas:
        r = greens.reduction_residual(model, _irrep(model, lam), phi0, sim, cfg.quad_order,
                                      "F2", cfg.n_sigma)
        m = {"lhs": r["lhs"].value, "rhs": r["rhs"].value, "residual": r["residual"],
             "sigma": r["sigma"], "max_ratio": r["max_ratio"]}
        noisy = _noisy(r["rhs"].value, r["sigma"], cfg.inconclusive_rel_sigma)
        st = _status(r["pass"]) if not (noisy and not r["pass"]) else INCONCLUSIVE
        out.append(Verdict(f"reduction/{model.name}/lambda={lam}", st, m, {"n_sigma": cfg.n_sigma}))
    return out


def run_suite(name, cfg: RunConfig) -> list:
    if name not in SUITES:
        raise ConfigError(f"suite must be one of {SUITES}")
    model = cfg.build_model()
    table = {"geometry": check_geometry, "operators": check_operators,
             "girsanov": check_girsanov, "reduction": check_reduction}
    names = [k for k in table] if name == "all" else [name]
    out = []
    for k in names:
        out.extend(table[k](cfg, model))
    return out


# --- convergence studies and the PDE cross-check ------------------------------------------

def _slope(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(np.abs(errs)), 1)[0])


def mehler_weight(x0, c, diff, mass, t):
    """E[exp(-c/(D m) int |x_s|^2 ds)] for Brownian motion with generator D/2 Laplacian."""
    k = c / (diff * mass)
    om = np.sqrt(2 * diff * k)
    x0 = np.asarray(x0, dtype=float)
    return float(np.prod(np.cosh(om * t) ** -0.5
                         * np.exp(-np.sqrt(k / (2 * diff)) * np.tanh(om * t) * x0**2)))


def weak_order_study(dts=(0.1, 0.05, 0.025), n_paths=2**18, c=0.5, t=1.0, seed=11,
                     x0=(0.0, 0.0)) -> Verdict:
    """Feynman-Kac weight of the flat total-space scheme against the Mehler closed form."""
    model = models.FlatTrivial(box=40.0, potential_quadratic=c)
    exact = mehler_weight(x0, c, 1.0, 1.0, t)
    errs, ses = [], []
    for dt in dts:
        sim = sde.SimConfig(n_paths=n_paths, n_steps=int(round(t / dt)), t_b=t, seed=seed,
                            q_start=(x0[0], x0[1], 0.0))
        e = greens.total_space_apply_mc(model, lambda z: np.ones(len(z)), sim)
        errs.append(float(e.value - exact))
        ses.append(float(e.stderr))
    slope = _slope(dts, errs)
    ok = abs(slope - 1.0) <= 0.15
    noisy = min(np.abs(errs)) < 3 * max(ses)
    return Verdict("convergence/weak_order", _status(ok, noisy and not ok),
                   {"dts": list(dts), "errors": errs, "stderr": ses, "slope": slope, "exact": exact},
                   {"slope": [0.85, 1.15]})


def grid_order_study(ns=(32, 64, 128), seed=5) -> Verdict:
    """Stencil error of the grid generator on flat trigonometric sections."""
    model = models.FlatTrivial(box=2 * np.pi)
    ir = model.group.irrep(1)
    sec = pdecheck.random_trig_section(np.random.default_rng(seed), 1)
    hs = [2 * np.pi / n for n in ns]
    errs = [pdecheck.stencil_error("operator_3_plus_casimir", model, ir, sec, h) for h in hs]
    slope = _slope(hs, errs)
    return Verdict("convergence/grid_order", _status(abs(slope - 2.0) <= 0.2),
                   {"h": hs, "errors": errs, "slope": slope}, {"slope": [1.8, 2.2]})


def hopf_start_points(n):
    """Deterministic spread of gauge-surface start points on the Hopf model (chart 0, |w| < 1)."""
    k = np.arange(n)
    rho = 0.9 * np.sqrt((k + 0.5) / n)
    ang = k * np.pi * (3 - np.sqrt(5))
    return np.stack([rho * np.cos(ang), rho * np.sin(ang), np.zeros(n)], 1)


def mc_pde_crosscheck(lam, n_paths=100_000, n_points=16, h=0.02, t=0.5, n_steps=100, dt_pde=0.005,
                      seed=13, kernel="F3", model=None) -> Verdict:
    """Reduced Monte Carlo semigroup against the grid evolution of the dual operator.

    The grid evolves ``conj(psi0)`` with ``H_kappa`` (generators ``-J^T``) and
    conjugates back; the result is compared at ``n_points`` start points in
    the L2 sense.
    """
    model = models.Hopf() if model is None else model
    ir = model.group.irrep(lam)
    sec = default_test_section(model, lam)
    starts = hopf_start_points(n_points)
    per = max(2, n_paths // n_points)
    mc, se = [], []
    for i, q in enumerate(starts):
        sim = sde.SimConfig(n_paths=per, n_steps=n_steps, t_b=t, seed=seed + i, q_start=tuple(q))
        e = greens.semigroup_apply_mc(model, ir, kernel, sec, sim)
        mc.append(e.value[0])
        se.append(e.stderr[0])
    mc, se = np.array(mc), np.array(se)
    grid = pdecheck.make_grid(model, h)
    z_fun = _embedding_function(model, lam)
    psi = pdecheck.section_on_grid(grid, ir, lambda z: np.conj(z_fun(z)))
    out, _ = pdecheck.evolve("H_kappa", model, ir, psi, t, dt_pde)
    pde = np.conj(pdecheck.interpolate(out, np.zeros(n_points, dtype=int), starts)[:, 0])
    rel = float(np.linalg.norm(mc - pde) / np.linalg.norm(pde))
    noise = float(np.linalg.norm(se) / np.linalg.norm(pde))
    return Verdict(f"mc_pde/{model.name}/lambda={lam}", _status(rel < 0.03),
                   {"l2_relative": rel, "mc_noise": noise, "mc": mc, "pde": pde},
                   {"l2_relative": 0.03})
